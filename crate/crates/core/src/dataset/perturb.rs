//! Post-processing perturbations for robustness sweeps.
//!
//! Each kind has five severity levels; level 0 is the identity.
//!
//! | kind             | levels 1..5                 |
//! |------------------|-----------------------------|
//! | gaussian_blur    | σ = 0.5, 1.0, 1.5, 2.0, 2.5 |
//! | gaussian_noise   | σ = 0.01 … 0.05             |
//! | jpeg_compression | quality 90, 70, 50, 30, 10  |
//! | color_saturation | factor 1.1 … 1.5            |
//! | color_contrast   | factor 1.1 … 1.5            |

use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    GaussianBlur,
    GaussianNoise,
    JpegCompression,
    ColorSaturation,
    ColorContrast,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 5] = [
        PerturbationKind::GaussianBlur,
        PerturbationKind::GaussianNoise,
        PerturbationKind::JpegCompression,
        PerturbationKind::ColorSaturation,
        PerturbationKind::ColorContrast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::GaussianBlur => "gaussian_blur",
            PerturbationKind::GaussianNoise => "gaussian_noise",
            PerturbationKind::JpegCompression => "jpeg_compression",
            PerturbationKind::ColorSaturation => "color_saturation",
            PerturbationKind::ColorContrast => "color_contrast",
        }
    }

    /// Parameter table, indexed by `level - 1`.
    pub fn table(self) -> [f64; 5] {
        match self {
            PerturbationKind::GaussianBlur => [0.5, 1.0, 1.5, 2.0, 2.5],
            PerturbationKind::GaussianNoise => [0.01, 0.02, 0.03, 0.04, 0.05],
            PerturbationKind::JpegCompression => [90.0, 70.0, 50.0, 30.0, 10.0],
            PerturbationKind::ColorSaturation => [1.1, 1.2, 1.3, 1.4, 1.5],
            PerturbationKind::ColorContrast => [1.1, 1.2, 1.3, 1.4, 1.5],
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PerturbationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown perturbation kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub level: u8,
    pub parameter: f64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, level: u8) -> Result<Self> {
        if !(1..=5).contains(&level) {
            return Err(Error::invalid(format!("perturbation level {level} outside [1, 5]")));
        }
        Ok(PerturbationSpec {
            kind,
            level,
            parameter: kind.table()[level as usize - 1],
        })
    }
}

/// Applies a perturbation. Only Gaussian noise consumes `seed`.
pub fn perturb(image: &Image, spec: &PerturbationSpec, seed: u64) -> Result<Image> {
    if image.channels != 3 {
        return Err(Error::shape("perturb expects a 3-channel image"));
    }
    let p = spec.parameter;
    let mut out = match spec.kind {
        PerturbationKind::GaussianBlur => gaussian_blur(image, p),
        PerturbationKind::GaussianNoise => {
            let mut rng = seed::rng(seed);
            let normal = Normal::new(0.0, p).map_err(|e| Error::invalid(e.to_string()))?;
            let mut out = image.clone();
            for v in &mut out.data {
                *v += normal.sample(&mut rng);
            }
            out
        }
        PerturbationKind::JpegCompression => jpeg_roundtrip(image, p as u8)?,
        PerturbationKind::ColorSaturation => {
            let mut out = image.clone();
            for px in out.data.chunks_exact_mut(3) {
                let gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
                for v in px.iter_mut() {
                    *v = gray + p * (*v - gray);
                }
            }
            out
        }
        PerturbationKind::ColorContrast => {
            let mut out = image.clone();
            for v in &mut out.data {
                *v = 0.5 + p * (*v - 0.5);
            }
            out
        }
    };
    out.clamp_unit();
    Ok(out)
}

/// Level-indexed form where level 0 returns the input unchanged.
pub fn perturb_level(image: &Image, kind: PerturbationKind, level: u8, seed: u64) -> Result<Image> {
    if level == 0 {
        return Ok(image.clone());
    }
    perturb(image, &PerturbationSpec::new(kind, level)?, seed)
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return image.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w, c) = image.shape();
    let mut tmp = Image::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                    s += kv * image.get(y, xx, ch);
                }
                tmp.set(y, x, ch, s);
            }
        }
    }
    let mut out = Image::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                    s += kv * tmp.get(yy, x, ch);
                }
                out.set(y, x, ch, s);
            }
        }
    }
    out
}

fn jpeg_roundtrip(image: &Image, quality: u8) -> Result<Image> {
    let bytes = image.to_u8();
    let mut buf = Vec::new();
    let mut enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality);
    enc.encode(&bytes, image.width as u32, image.height as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::invalid(format!("jpeg encode: {e}")))?;
    let decoded = image::load(Cursor::new(buf), image::ImageFormat::Jpeg)
        .map_err(|e| Error::invalid(format!("jpeg decode: {e}")))?
        .to_rgb8();
    Image::from_u8(image.height, image.width, 3, decoded.as_raw())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn photo_like(h: usize, w: usize) -> Image {
        let mut img = Image::zeros(h, w, 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = 0.5
                        + 0.3 * ((x as f64 * 0.3 + c as f64).sin() * (y as f64 * 0.17).cos())
                        + 0.1 * ((x * 7 + y * 13 + c * 5) % 11) as f64 / 11.0;
                    img.set(y, x, c, v.clamp(0.0, 1.0));
                }
            }
        }
        img.quantized()
    }

    #[test]
    fn level_table_and_errors() {
        let s = PerturbationSpec::new(PerturbationKind::JpegCompression, 5).unwrap();
        assert_eq!(s.parameter, 10.0);
        assert!(PerturbationSpec::new(PerturbationKind::GaussianBlur, 0).is_err());
        assert!(PerturbationSpec::new(PerturbationKind::GaussianBlur, 6).is_err());
        assert!("sepia".parse::<PerturbationKind>().is_err());
        assert_eq!(
            "color_contrast".parse::<PerturbationKind>().unwrap(),
            PerturbationKind::ColorContrast
        );
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let img = photo_like(16, 16);
        let spec = PerturbationSpec::new(PerturbationKind::GaussianNoise, 1).unwrap();
        assert_eq!(perturb(&img, &spec, 3).unwrap(), perturb(&img, &spec, 3).unwrap());
        assert_ne!(perturb(&img, &spec, 3).unwrap(), perturb(&img, &spec, 4).unwrap());
    }

    #[test]
    fn contrast_fixes_mid_gray() {
        let img = Image::filled(8, 8, 3, 0.5);
        for level in 1..=5 {
            let spec = PerturbationSpec::new(PerturbationKind::ColorContrast, level).unwrap();
            assert_eq!(perturb(&img, &spec, 0).unwrap(), img);
        }
    }

    #[test]
    fn level_zero_is_identity() {
        let img = photo_like(8, 8);
        for kind in PerturbationKind::ALL {
            assert_eq!(perturb_level(&img, kind, 0, 1).unwrap(), img);
        }
    }

    #[test]
    fn jpeg_quality_orders_error() {
        let img = photo_like(32, 32);
        let q10 = PerturbationSpec::new(PerturbationKind::JpegCompression, 5).unwrap();
        let q90 = PerturbationSpec::new(PerturbationKind::JpegCompression, 1).unwrap();
        let e10 = perturb(&img, &q10, 0).unwrap().mse(&img);
        let e90 = perturb(&img, &q90, 0).unwrap().mse(&img);
        assert!(e10 > e90, "{e10} vs {e90}");
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let img = photo_like(16, 16);
        for kind in PerturbationKind::ALL {
            for level in 1..=5 {
                let out = perturb(&img, &PerturbationSpec::new(kind, level).unwrap(), 9).unwrap();
                assert_eq!(out.shape(), img.shape());
                assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn noise_mse_nondecreasing_in_level() {
        let img = photo_like(16, 16);
        let mut prev = 0.0;
        for level in 1..=5 {
            let spec = PerturbationSpec::new(PerturbationKind::GaussianNoise, level).unwrap();
            let mean: f64 = (0..50)
                .map(|s| perturb(&img, &spec, s).unwrap().mse(&img))
                .sum::<f64>()
                / 50.0;
            assert!(mean >= prev, "level {level}: {mean} < {prev}");
            prev = mean;
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Image::filled(9, 7, 3, 0.3);
        let out = gaussian_blur(&img, 1.7);
        assert!(out.data.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }
}
