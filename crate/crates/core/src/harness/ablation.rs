//! Leave-one-method-out ablations.
//!
//! For each held-out method the detector trains on the remaining methods
//! (train and val splits) and is scored on the test split's real frames
//! plus the held-out method's fakes. This stands in for cross-dataset
//! evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::{frame_auc, score_split};
use super::train::train;
use crate::dataset::{Composition, Corpus, Split};
use crate::error::{Error, Result};
use crate::objectives::LossWeights;

pub const REQUIRED_VARIANTS: [&str; 3] = ["full", "no_msba", "no_mfie"];

/// A named change to the base configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub batch_composition: Option<Composition>,
    #[serde(default)]
    pub loss_weights: Option<LossWeights>,
}

impl Variant {
    pub fn full() -> Self {
        Variant {
            name: "full".into(),
            batch_composition: None,
            loss_weights: None,
        }
    }

    /// Blended samples replaced by single-method fakes.
    pub fn no_msba() -> Self {
        Variant {
            name: "no_msba".into(),
            batch_composition: Some(Composition::without_msba()),
            loss_weights: None,
        }
    }

    /// Intensity-head losses switched off.
    pub fn no_mfie(base: &TrainConfig) -> Self {
        Variant {
            name: "no_mfie".into(),
            batch_composition: None,
            loss_weights: Some(base.loss_weights.without_intensity_head()),
        }
    }

    pub fn standard(base: &TrainConfig) -> Vec<Variant> {
        vec![Self::full(), Self::no_msba(), Self::no_mfie(base)]
    }

    pub fn by_name(name: &str, base: &TrainConfig) -> Result<Variant> {
        Self::standard(base)
            .into_iter()
            .find(|v| v.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown variant {name:?}")))
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        if let Some(comp) = self.batch_composition {
            c.batch_composition = comp;
        }
        if let Some(w) = self.loss_weights {
            c.loss_weights = w;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: String,
    pub held_out: usize,
    pub seed: u64,
    pub auc: f64,
    pub config_hash: String,
}

/// Mean and population standard deviation over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub held_out: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub protocol: String,
    pub runs: Vec<AblationRun>,
    pub rows: Vec<AblationRow>,
    /// `(variant, hash)` of each variant's config at the base seed.
    pub config_hashes: Vec<(String, String)>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl AblationTable {
    pub fn run(&self, variant: &str, held_out: usize, seed: u64) -> Option<f64> {
        self.runs
            .iter()
            .find(|r| r.variant == variant && r.held_out == held_out && r.seed == seed)
            .map(|r| r.auc)
    }

    /// Mean over held-out methods for one variant and seed.
    pub fn seed_mean(&self, variant: &str, seed: u64) -> Option<f64> {
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.variant == variant && r.seed == seed)
            .map(|r| r.auc)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// `(mean, population std)` over all runs of a variant.
    pub fn variant_summary(&self, variant: &str) -> Option<(f64, f64)> {
        let v: Vec<f64> = self.runs.iter().filter(|r| r.variant == variant).map(|r| r.auc).collect();
        (!v.is_empty()).then(|| mean_std(&v))
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut runs = String::from("variant,held_out,seed,auc,config_hash\n");
        for r in &self.runs {
            runs.push_str(&format!("{},{},{},{},{}\n", r.variant, r.held_out, r.seed, r.auc, r.config_hash));
        }
        let mut rows = String::from("variant,held_out,mean_auc,std_auc,n_seeds\n");
        for r in &self.rows {
            rows.push_str(&format!("{},{},{},{},{}\n", r.variant, r.held_out, r.mean_auc, r.std_auc, r.n_seeds));
        }
        for (name, text) in [("ablation_runs.csv", runs), ("ablation_table.csv", rows)] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join("ablation.json");
        std::fs::write(&p, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&p, e))
    }
}

/// Trains every `variant × held-out method × seed` combination.
///
/// `held_out` defaults to every method of the corpus. Training uses
/// `base.seed` replaced by each entry of `seeds`, so variants are compared
/// on identical initialisations and batch orders.
pub fn ablation_run(
    base: &TrainConfig,
    variants: &[Variant],
    corpus: &Corpus,
    seeds: &[u64],
    held_out: Option<&[usize]>,
    out_dir: Option<&Path>,
) -> Result<AblationTable> {
    for req in REQUIRED_VARIANTS {
        if !variants.iter().any(|v| v.name == req) {
            return Err(Error::invalid(format!("ablation needs a {req:?} variant")));
        }
    }
    if seeds.len() < 3 {
        return Err(Error::invalid(format!("ablation needs at least 3 seeds, got {}", seeds.len())));
    }
    let all: Vec<usize> = (0..corpus.num_methods()).collect();
    let held_out = held_out.unwrap_or(&all);
    if let Some(m) = held_out.iter().find(|&&m| m >= corpus.num_methods()) {
        return Err(Error::invalid(format!("held-out method {m} not in corpus")));
    }
    let configs: Vec<TrainConfig> = variants.iter().map(|v| v.apply(base)).collect();
    let config_hashes = variants
        .iter()
        .zip(&configs)
        .map(|(v, c)| Ok((v.name.clone(), c.hash()?)))
        .collect::<Result<Vec<_>>>()?;
    let mut runs = Vec::new();
    for &h in held_out {
        let train_corpus = corpus.filtered(|r| r.method != Some(h))?;
        let test_corpus = corpus.filtered(|r| r.split == Split::Test && r.method.is_none_or(|m| m == h))?;
        for (v, vc) in variants.iter().zip(&configs) {
            for &s in seeds {
                let mut c = vc.clone();
                c.seed = s;
                let outcome = train(&c, &train_corpus, None)?;
                let auc = frame_auc(&score_split(&outcome.detector, &test_corpus, Split::Test)?)?;
                runs.push(AblationRun {
                    variant: v.name.clone(),
                    held_out: h,
                    seed: s,
                    auc,
                    config_hash: c.hash()?,
                });
            }
        }
    }
    let mut rows = Vec::new();
    for v in variants {
        for &h in held_out {
            let xs: Vec<f64> = runs
                .iter()
                .filter(|r| r.variant == v.name && r.held_out == h)
                .map(|r| r.auc)
                .collect();
            let (mean_auc, std_auc) = mean_std(&xs);
            rows.push(AblationRow {
                variant: v.name.clone(),
                held_out: h,
                mean_auc,
                std_auc,
                n_seeds: xs.len(),
            });
        }
    }
    let table = AblationTable {
        protocol: "leave-one-method-out (substitute for cross-dataset evaluation)".into(),
        runs,
        rows,
        config_hashes,
    };
    if let Some(d) = out_dir {
        table.write_csv(d)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_apply_their_deltas() {
        let base = TrainConfig::toy();
        let vs = Variant::standard(&base);
        assert_eq!(vs[0].apply(&base), base);
        assert_eq!(vs[1].apply(&base).batch_composition, Composition::without_msba());
        let w = vs[2].apply(&base).loss_weights;
        assert_eq!((w.lambda_int, w.lambda_wgt), (0.0, 0.0));
        assert_eq!(w.lambda_sim, base.loss_weights.lambda_sim);
        assert!(Variant::by_name("nope", &base).is_err());
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
