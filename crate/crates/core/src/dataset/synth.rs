//! Seeded synthetic forgery corpus with exact ground-truth masks.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forgery::{apply_forgery_in_region, generate_real_image, NUM_FORGERY_METHODS};
use super::image::{Image, Mask};
use super::manifest::{ImageRecord, Label, Manifest, Split};
use crate::error::{Error, Result};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

fn default_methods() -> usize {
    NUM_FORGERY_METHODS
}
fn default_patch() -> usize {
    8
}
fn default_val() -> f64 {
    0.1
}
fn default_test() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_groups: usize,
    /// `(height, width)` in pixels.
    pub image_size: (usize, usize),
    #[serde(default = "default_methods")]
    pub num_methods: usize,
    pub seed: u64,
    /// Model patch size the image sides must be divisible by.
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    #[serde(default = "default_val")]
    pub val_fraction: f64,
    #[serde(default = "default_test")]
    pub test_fraction: f64,
}

impl SyntheticConfig {
    pub fn new(num_groups: usize, image_size: (usize, usize), seed: u64) -> Self {
        SyntheticConfig {
            num_groups,
            image_size,
            num_methods: NUM_FORGERY_METHODS,
            seed,
            patch_size: default_patch(),
            val_fraction: default_val(),
            test_fraction: default_test(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if self.num_groups == 0 {
            return Err(Error::invalid("num_groups must be positive"));
        }
        if !(1..=NUM_FORGERY_METHODS).contains(&self.num_methods) {
            return Err(Error::invalid(format!(
                "num_methods must be in [1, {NUM_FORGERY_METHODS}], got {}",
                self.num_methods
            )));
        }
        if self.patch_size == 0 || h == 0 || w == 0 || h % self.patch_size != 0 || w % self.patch_size != 0 {
            return Err(Error::invalid(format!(
                "image size {h}x{w} not divisible by patch size {}",
                self.patch_size
            )));
        }
        let (v, t) = (self.val_fraction, self.test_fraction);
        if !(0.0..=1.0).contains(&v) || !(0.0..=1.0).contains(&t) || v + t > 1.0 {
            return Err(Error::invalid("split fractions must be in [0, 1] and sum to at most 1"));
        }
        Ok(())
    }

    /// Split of every group, derived from a seeded permutation.
    pub fn split_assignment(&self) -> Vec<Split> {
        let n = self.num_groups;
        let n_test = (self.test_fraction * n as f64).round() as usize;
        let n_val = ((self.val_fraction * n as f64).round() as usize).min(n - n_test.min(n));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng_for(self.seed, &[0x5917]));
        let mut splits = vec![Split::Train; n];
        for (rank, &g) in order.iter().enumerate() {
            splits[g] = if rank < n_test {
                Split::Test
            } else if rank < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
        }
        splits
    }
}

pub fn group_id(index: usize) -> String {
    format!("g{index:05}")
}

/// One group's pixels: the real image and a forged image and mask per method.
pub struct SyntheticGroup {
    pub real: Image,
    pub forged: Vec<(Image, Mask)>,
}

/// Generates group `index` in memory.
pub fn synthesize_group(config: &SyntheticConfig, index: usize) -> Result<SyntheticGroup> {
    let (h, w) = config.image_size;
    let mut rng = seed::rng_for(config.seed, &[index as u64, 0]);
    let (real, face) = generate_real_image(&mut rng, h, w);
    let forged = (0..config.num_methods)
        .map(|m| {
            let s = seed::derive(config.seed, &[index as u64, 1 + m as u64]);
            let (img, mask) = apply_forgery_in_region(&real, m, &face, s)?;
            Ok((img.quantized(), mask))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticGroup { real, forged })
}

/// Writes the corpus (images, masks, `manifest.jsonl`) below `out_dir`.
pub fn generate_synthetic_corpus(config: &SyntheticConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let splits = config.split_assignment();
    let per_group: Vec<Vec<ImageRecord>> = (0..config.num_groups)
        .into_par_iter()
        .map(|g| {
            let group = synthesize_group(config, g)?;
            let gid = group_id(g);
            let split = splits[g];
            let real_path = format!("images/{gid}_real.png");
            group.real.save_png(&out_dir.join(&real_path))?;
            let mut records = vec![ImageRecord {
                id: format!("{gid}_real"),
                image_path: real_path,
                label: Label::Real,
                method: None,
                group_id: gid.clone(),
                split,
                mask_path: None,
            }];
            for (m, (img, mask)) in group.forged.iter().enumerate() {
                let image_path = format!("images/{gid}_m{m}.png");
                let mask_path = format!("masks/{gid}_m{m}.png");
                img.save_png(&out_dir.join(&image_path))?;
                mask.save_png(&out_dir.join(&mask_path))?;
                records.push(ImageRecord {
                    id: format!("{gid}_m{m}"),
                    image_path,
                    label: Label::Fake,
                    method: Some(m),
                    group_id: gid.clone(),
                    split,
                    mask_path: Some(mask_path),
                });
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest::new(
        per_group.into_iter().flatten().collect(),
        Some(config.num_methods),
        Some(config.image_size),
        out_dir.to_path_buf(),
    )?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indivisible_size_is_rejected() {
        let mut c = SyntheticConfig::new(1, (60, 64), 1);
        assert!(c.validate().is_err());
        c.image_size = (64, 64);
        c.num_methods = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn split_fractions() {
        let c = SyntheticConfig::new(400, (64, 64), 3);
        let s = c.split_assignment();
        assert_eq!(s.iter().filter(|&&x| x == Split::Test).count(), 40);
        assert_eq!(s.iter().filter(|&&x| x == Split::Val).count(), 40);
        let one = SyntheticConfig::new(1, (64, 64), 3).split_assignment();
        assert_eq!(one, vec![Split::Train]);
    }

    #[test]
    fn single_method_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = SyntheticConfig::new(2, (32, 32), 11);
        c.num_methods = 1;
        let m = generate_synthetic_corpus(&c, dir.path()).unwrap();
        assert_eq!(m.records.len(), 4);
        assert_eq!(m.num_methods, 1);
    }
}
