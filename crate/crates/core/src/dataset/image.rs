//! Unit-interval float images and 8-bit PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// `height × width × channels` array of reals, channel-interleaved, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.idx(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.idx(y, x, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = self.idx(y, x, 0);
        &self.data[i..i + self.channels]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Bilinear sample with edge clamping.
    pub fn sample_bilinear(&self, y: f64, x: f64, c: usize) -> f64 {
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = self.get(y0, x0, c) * (1.0 - fx) + self.get(y0, x1, c) * fx;
        let bottom = self.get(y1, x0, c) * (1.0 - fx) + self.get(y1, x1, c) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// 8-bit quantisation, `round(clamp(v)·255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Image::from_vec(
            height,
            width,
            channels,
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        )
    }

    /// Snaps values to the 8-bit grid, matching a PNG save/load round trip.
    pub fn quantized(&self) -> Image {
        Image::from_u8(self.height, self.width, self.channels, &self.to_u8())
            .expect("shape preserved")
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        s / self.data.len() as f64
    }

    pub fn mse(&self, other: &Image) -> f64 {
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        s / self.data.len() as f64
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let bytes = self.to_u8();
        let res = match self.channels {
            1 => image::GrayImage::from_raw(w, h, bytes).map(|img| img.save(path)),
            3 => image::RgbImage::from_raw(w, h, bytes).map(|img| img.save(path)),
            c => {
                return Err(Error::Image {
                    path: path.to_path_buf(),
                    message: format!("cannot save {c}-channel image"),
                })
            }
        };
        match res {
            Some(Ok(())) => Ok(()),
            Some(Err(e)) => Err(image_err(path, e)),
            None => Err(Error::shape("image buffer size")),
        }
    }

    /// Loads a PNG as a 3-channel unit-interval image.
    pub fn load_rgb(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
        let (w, h) = img.dimensions();
        Image::from_u8(h as usize, w as usize, 3, img.as_raw())
    }

    /// Loads a single-channel PNG as a unit-interval image.
    pub fn load_gray(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
        let (w, h) = img.dimensions();
        Image::from_u8(h as usize, w as usize, 1, img.as_raw())
    }
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Binary `height × width` mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::shape("mask buffer size"))?
            .save(path)
            .map_err(|e| image_err(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Mask> {
        let img = Image::load_gray(path)?;
        Ok(Mask {
            height: img.height,
            width: img.width,
            data: img.data.iter().map(|&v| v >= 0.5).collect(),
        })
    }

    /// Fraction of set pixels in each `block_h × block_w` cell, thresholded at 0.5.
    pub fn downsample(&self, out_h: usize, out_w: usize) -> Result<Mask> {
        if out_h == 0 || out_w == 0 || self.height % out_h != 0 || self.width % out_w != 0 {
            return Err(Error::shape(format!(
                "cannot block-reduce {}x{} mask to {out_h}x{out_w}",
                self.height, self.width
            )));
        }
        let (bh, bw) = (self.height / out_h, self.width / out_w);
        let mut out = Mask::empty(out_h, out_w);
        for i in 0..out_h {
            for j in 0..out_w {
                let mut n = 0;
                for y in i * bh..(i + 1) * bh {
                    for x in j * bw..(j + 1) * bw {
                        n += self.get(y, x) as usize;
                    }
                }
                out.data[i * out_w + j] = 2 * n >= bh * bw;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_on_the_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let data: Vec<f64> = (0..4 * 5 * 3).map(|i| (i * 7 % 256) as f64 / 255.0).collect();
        let img = Image::from_vec(4, 5, 3, data).unwrap();
        img.save_png(&path).unwrap();
        assert_eq!(Image::load_rgb(&path).unwrap(), img);
    }

    #[test]
    fn mask_downsample_majority() {
        let mut m = Mask::empty(4, 4);
        for y in 0..2 {
            for x in 0..2 {
                m.data[y * 4 + x] = true;
            }
        }
        m.data[2 * 4 + 2] = true;
        let d = m.downsample(2, 2).unwrap();
        assert_eq!(d.data, vec![true, false, false, false]);
        assert!(m.downsample(3, 3).is_err());
    }

    #[test]
    fn bilinear_at_integer_points() {
        let img = Image::from_vec(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(img.sample_bilinear(1.0, 0.0, 0), 2.0);
        assert_eq!(img.sample_bilinear(0.5, 0.5, 0), 1.5);
    }
}
