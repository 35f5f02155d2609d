//! Synthetic faces and four localized forgery operators.
//!
//! Method indices: 0 = local region warp, 1 = Gaussian blur, 2 = additive
//! color shift, 3 = high-frequency noise texture. Every operator only writes
//! pixels inside a random elliptical mask that lies within the face region.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::image::{Image, Mask};
use super::perturb::gaussian_blur;
use crate::error::{Error, Result};
use crate::seed;

pub const NUM_FORGERY_METHODS: usize = 4;

/// Class names paired with method indices 0..4 for type-conditioned prompts.
pub const METHOD_CLASS_NAMES: [&str; NUM_FORGERY_METHODS] =
    ["DeepFakes", "FaceSwap", "Face2Face", "NeuralTextures"];

pub const MIN_MASK_COVERAGE: f64 = 0.01;
pub const MAX_MASK_COVERAGE: f64 = 0.5;

/// Axis-aligned elliptical face region in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceRegion {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
}

impl FaceRegion {
    /// Centered region used when no generator metadata is available.
    pub fn centered(height: usize, width: usize) -> Self {
        FaceRegion {
            cy: height as f64 / 2.0,
            cx: width as f64 / 2.0,
            ry: 0.43 * height as f64,
            rx: 0.40 * width as f64,
        }
    }

    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
fn value_noise<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize, cell: f64) -> Vec<f64> {
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.random::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let gy = y as f64 / cell;
            let gx = x as f64 / cell;
            let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
            let (fy, fx) = (smooth(gy - y0 as f64), smooth(gx - x0 as f64));
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            let top = g(y0, x0) * (1.0 - fx) + g(y0, x0 + 1) * fx;
            let bot = g(y0 + 1, x0) * (1.0 - fx) + g(y0 + 1, x0 + 1) * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Seeded pristine image: smooth colored background plus a shaded, striped
/// elliptical "face". Returned on the 8-bit grid.
pub fn generate_real_image<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> (Image, FaceRegion) {
    let (h, w) = (height, width);
    let hf = h as f64;
    let wf = w as f64;
    let face = FaceRegion {
        cy: hf / 2.0 + rng.random_range(-0.04..0.04) * hf,
        cx: wf / 2.0 + rng.random_range(-0.04..0.04) * wf,
        ry: rng.random_range(0.40..0.45) * hf,
        rx: rng.random_range(0.36..0.42) * wf,
    };
    let mut img = Image::zeros(h, w, 3);

    let bg_base: [f64; 3] = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
    let coarse = hf.max(wf) / 3.0;
    let bg_fields: Vec<Vec<f64>> = (0..3).map(|_| value_noise(rng, h, w, coarse)).collect();
    let bg_fine = value_noise(rng, h, w, 4.0);

    let skin = [
        rng.random_range(0.55..0.85),
        rng.random_range(0.40..0.65),
        rng.random_range(0.30..0.55),
    ];
    let shading = value_noise(rng, h, w, hf.max(wf) / 2.5);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let period: f64 = rng.random_range(4.0..7.0);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if face.contains(y, x) {
                let u = x as f64 * theta.cos() + y as f64 * theta.sin();
                let grating = (std::f64::consts::TAU * u / period + phase).sin();
                let lum = 0.18 * (shading[i] - 0.5) + 0.2 * grating;
                for c in 0..3 {
                    img.set(y, x, c, skin[c] + lum);
                }
            } else {
                for c in 0..3 {
                    let v = bg_base[c] + 0.3 * (bg_fields[c][i] - 0.5) + 0.06 * (bg_fine[i] - 0.5);
                    img.set(y, x, c, v);
                }
            }
        }
    }
    img.clamp_unit();
    (img.quantized(), face)
}

/// Random rotated ellipse intersected with the face region, with coverage
/// in `[MIN_MASK_COVERAGE, MAX_MASK_COVERAGE]`.
pub fn sample_mask<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize, face: &FaceRegion) -> Result<Mask> {
    for _ in 0..100 {
        let cy = face.cy + rng.random_range(-0.15..0.15) * face.ry;
        let cx = face.cx + rng.random_range(-0.15..0.15) * face.rx;
        let a = face.rx * rng.random_range(0.6..0.9);
        let b = face.ry * rng.random_range(0.6..0.9);
        let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (s, c) = t.sin_cos();
        let mut mask = Mask::empty(height, width);
        for y in 0..height {
            for x in 0..width {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                let u = (dx * c + dy * s) / a;
                let v = (-dx * s + dy * c) / b;
                mask.data[y * width + x] = u * u + v * v <= 1.0 && face.contains(y, x);
            }
        }
        let cov = mask.coverage();
        if (MIN_MASK_COVERAGE..=MAX_MASK_COVERAGE).contains(&cov) {
            return Ok(mask);
        }
    }
    Err(Error::invalid(format!(
        "could not place a forgery mask in a {height}x{width} image"
    )))
}

/// Parameters of one forgery operator instance.
#[derive(Clone, Debug, PartialEq)]
pub enum ForgeryParams {
    Warp {
        amplitude: f64,
        period_y: f64,
        period_x: f64,
        phase_y: f64,
        phase_x: f64,
    },
    Blur {
        sigma: f64,
    },
    ColorShift {
        shift: [f64; 3],
    },
    Noise {
        sigma: f64,
        seed: u64,
    },
}

impl ForgeryParams {
    pub fn method(&self) -> usize {
        match self {
            ForgeryParams::Warp { .. } => 0,
            ForgeryParams::Blur { .. } => 1,
            ForgeryParams::ColorShift { .. } => 2,
            ForgeryParams::Noise { .. } => 3,
        }
    }

    pub fn sample<R: Rng + ?Sized>(method: usize, rng: &mut R) -> Result<Self> {
        Ok(match method {
            0 => ForgeryParams::Warp {
                amplitude: rng.random_range(3.75..7.5),
                period_y: rng.random_range(6.0..12.0),
                period_x: rng.random_range(6.0..12.0),
                phase_y: rng.random_range(0.0..std::f64::consts::TAU),
                phase_x: rng.random_range(0.0..std::f64::consts::TAU),
            },
            1 => ForgeryParams::Blur {
                sigma: rng.random_range(1.5..2.5),
            },
            2 => {
                let mag = rng.random_range(0.36..0.66);
                let mut shift = [0.0; 3];
                for s in &mut shift {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    *s = sign * mag * rng.random_range(0.5..1.0);
                }
                ForgeryParams::ColorShift { shift }
            }
            3 => ForgeryParams::Noise {
                sigma: rng.random_range(0.18..0.30),
                seed: rng.random(),
            },
            m => return Err(Error::invalid(format!("forgery method {m} outside [0, 3]"))),
        })
    }
}

/// Applies `params` inside `mask`; pixels outside the mask are copied
/// unchanged and the result is clamped to `[0, 1]`.
pub fn apply_forgery_with(image: &Image, mask: &Mask, params: &ForgeryParams) -> Result<Image> {
    if image.height != mask.height || image.width != mask.width {
        return Err(Error::shape("forgery mask does not match image"));
    }
    let (h, w, c) = image.shape();
    let candidate = match params {
        ForgeryParams::Warp {
            amplitude,
            period_y,
            period_x,
            phase_y,
            phase_x,
        } => {
            let mut out = image.clone();
            for y in 0..h {
                for x in 0..w {
                    if !mask.get(y, x) {
                        continue;
                    }
                    let dy = amplitude * (std::f64::consts::TAU * x as f64 / period_x + phase_y).sin();
                    let dx = amplitude * (std::f64::consts::TAU * y as f64 / period_y + phase_x).sin();
                    for ch in 0..c {
                        let v = image.sample_bilinear(y as f64 + dy, x as f64 + dx, ch);
                        out.set(y, x, ch, v);
                    }
                }
            }
            out
        }
        ForgeryParams::Blur { sigma } => gaussian_blur(image, *sigma),
        ForgeryParams::ColorShift { shift } => {
            let mut out = image.clone();
            for px in out.data.chunks_exact_mut(c) {
                for (v, s) in px.iter_mut().zip(shift.iter().cycle()) {
                    *v += s;
                }
            }
            out
        }
        ForgeryParams::Noise { sigma, seed } => {
            let mut rng = seed::rng(*seed);
            let normal = Normal::new(0.0, *sigma).map_err(|e| Error::invalid(e.to_string()))?;
            let mut out = image.clone();
            for v in &mut out.data {
                *v += normal.sample(&mut rng);
            }
            out
        }
    };
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                for ch in 0..c {
                    out.set(y, x, ch, candidate.get(y, x, ch).clamp(0.0, 1.0));
                }
            }
        }
    }
    Ok(out)
}

/// Forges `image` with `method` inside a seeded mask placed in `face`.
pub fn apply_forgery_in_region(image: &Image, method: usize, face: &FaceRegion, seed: u64) -> Result<(Image, Mask)> {
    if method >= NUM_FORGERY_METHODS {
        return Err(Error::invalid(format!("forgery method {method} outside [0, 3]")));
    }
    let mut rng = seed::rng(seed);
    let mask = sample_mask(&mut rng, image.height, image.width, face)?;
    let params = ForgeryParams::sample(method, &mut rng)?;
    Ok((apply_forgery_with(image, &mask, &params)?, mask))
}

/// Forges `image` using a centered default face region.
pub fn apply_forgery_method(image: &Image, method: usize, seed: u64) -> Result<(Image, Mask)> {
    let face = FaceRegion::centered(image.height, image.width);
    apply_forgery_in_region(image, method, &face, seed)
}
