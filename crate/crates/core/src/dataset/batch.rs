//! Seeded batch composition over the groups of one split.
//!
//! An epoch draws as many samples as the split has images: `passes`
//! seeded permutations of the groups, concatenated, where `passes` is the
//! mean number of images per group (rounded). Within a batch the first
//! slots are pristine samples, then single-method fakes, then blended
//! (MSBA) samples, with counts `⌊frac · len⌋` and the remainder going to
//! pristine samples.

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Split};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub real_frac: f64,
    pub single_fake_frac: f64,
    pub msba_frac: f64,
}

impl Default for Composition {
    fn default() -> Self {
        Composition {
            real_frac: 1.0 / 3.0,
            single_fake_frac: 1.0 / 3.0,
            msba_frac: 1.0 / 3.0,
        }
    }
}

impl Composition {
    pub fn new(real_frac: f64, single_fake_frac: f64, msba_frac: f64) -> Result<Self> {
        let c = Composition {
            real_frac,
            single_fake_frac,
            msba_frac,
        };
        c.validate()?;
        Ok(c)
    }

    /// Same pristine share as the default, all fakes single-method.
    pub fn without_msba() -> Self {
        Composition {
            real_frac: 1.0 / 3.0,
            single_fake_frac: 2.0 / 3.0,
            msba_frac: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.real_frac, self.single_fake_frac, self.msba_frac];
        if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "batch composition must be nonnegative and sum to 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(real, single_fake, msba)` counts for a batch of `len` slots.
    pub fn counts(&self, len: usize) -> (usize, usize, usize) {
        let single = (self.single_fake_frac * len as f64 + 1e-9).floor() as usize;
        let msba = (self.msba_frac * len as f64 + 1e-9).floor() as usize;
        let msba = msba.min(len - single.min(len));
        (len - single - msba, single, msba)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleKind {
    Real,
    SingleFake { method: usize },
    Msba,
}

/// A sample to be materialised from a group's images.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SampleRef {
    pub group_id: String,
    pub kind: SampleKind,
    /// Private random stream for this sample (blend weights, λ, …).
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct BatchIterator {
    groups: Vec<(String, Vec<usize>)>,
    passes: usize,
    batch_size: usize,
    composition: Composition,
    seed: u64,
}

impl BatchIterator {
    pub fn new(
        manifest: &Manifest,
        split: Split,
        batch_size: usize,
        composition: Composition,
        seed: u64,
    ) -> Result<Self> {
        composition.validate()?;
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let methods = manifest.group_methods(split);
        let groups: Vec<(String, Vec<usize>)> = manifest
            .groups(split)
            .into_iter()
            .map(|g| {
                let m = methods.get(&g).cloned().unwrap_or_default();
                (g, m)
            })
            .collect();
        if groups.is_empty() {
            return Err(Error::invalid(format!("split {split} is empty")));
        }
        if composition.single_fake_frac > 0.0 && groups.iter().any(|(_, m)| m.is_empty()) {
            return Err(Error::invalid("single-method fakes requested but a group has no forged images"));
        }
        if composition.msba_frac > 0.0 && groups.iter().any(|(_, m)| m.len() < 2) {
            return Err(Error::invalid("blended samples need at least two forgery methods per group"));
        }
        let images = manifest.split_records(split).count();
        let passes = ((images as f64 / groups.len() as f64).round() as usize).max(1);
        Ok(BatchIterator {
            groups,
            passes,
            batch_size,
            composition,
            seed,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Group permutations per epoch.
    pub fn passes(&self) -> usize {
        self.passes
    }

    pub fn batches_per_epoch(&self) -> usize {
        (self.passes * self.groups.len()).div_ceil(self.batch_size)
    }

    /// All batches of one epoch.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<SampleRef>> {
        let mut order = Vec::with_capacity(self.passes * self.groups.len());
        for pass in 0..self.passes {
            let mut perm: Vec<usize> = (0..self.groups.len()).collect();
            perm.shuffle(&mut seed::rng_for(self.seed, &[epoch as u64, pass as u64, 0xe90c]));
            order.extend(perm);
        }
        order
            .chunks(self.batch_size)
            .enumerate()
            .map(|(b, chunk)| {
                let (n_real, n_single, _) = self.composition.counts(chunk.len());
                chunk
                    .iter()
                    .enumerate()
                    .map(|(slot, &g)| {
                        let (gid, methods) = &self.groups[g];
                        let s = seed::derive(self.seed, &[epoch as u64, b as u64, slot as u64, 0x5a]);
                        let kind = if slot < n_real {
                            SampleKind::Real
                        } else if slot < n_real + n_single {
                            let m = *methods.choose(&mut seed::rng(s)).expect("nonempty");
                            SampleKind::SingleFake { method: m }
                        } else {
                            SampleKind::Msba
                        };
                        SampleRef {
                            group_id: gid.clone(),
                            kind,
                            seed: s,
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Endless stream of batches, epoch after epoch.
    pub fn stream(&self) -> impl Iterator<Item = Vec<SampleRef>> + '_ {
        (0..).flat_map(move |e| self.epoch(e))
    }
}
