//! The multi-task training objective.
//!
//! Four terms are combined with nonnegative weights:
//! classification BCE on the fused prediction, BCE on the temperature-scaled
//! similarity score, smooth-L1 on the predicted intensity map, and
//! `KL(α ‖ α̂)` on the predicted blend weights. The blend-weight term is only
//! active for samples that carry a blend-weight target.

pub mod gradcheck;
pub mod losses;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, grad_check_with, numeric_gradient, numeric_gradient_with, GradCheckReport, Stencil, DEFAULT_EPS};
pub use losses::{bce, kl_weights, similarity_loss, smooth_l1};

/// Coefficients of the four loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_sim: f64,
    pub lambda_int: f64,
    pub lambda_wgt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::published()
    }
}

impl LossWeights {
    /// The weights reported with the training protocol: (1, 0.5, 1, 0.1).
    pub fn published() -> Self {
        LossWeights {
            lambda_cls: 1.0,
            lambda_sim: 0.5,
            lambda_int: 1.0,
            lambda_wgt: 0.1,
        }
    }

    /// Equal weighting of similarity and intensity terms: (1, 1, 1, 0.1).
    pub fn equal() -> Self {
        LossWeights {
            lambda_sim: 1.0,
            ..Self::published()
        }
    }

    /// Disables the intensity-estimation head's losses.
    pub fn without_intensity_head(self) -> Self {
        LossWeights {
            lambda_int: 0.0,
            lambda_wgt: 0.0,
            ..self
        }
    }

    pub fn by_preset(name: &str) -> Result<Self> {
        match name {
            "published" | "default" => Ok(Self::published()),
            "equal" => Ok(Self::equal()),
            other => Err(Error::invalid(format!("unknown loss-weight preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_cls, self.lambda_sim, self.lambda_int, self.lambda_wgt];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(format!("loss weights must be nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Unweighted per-sample loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub l_cls: f64,
    pub l_sim: f64,
    pub l_int: f64,
    pub l_wgt: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_sim: f64,
    pub l_int: f64,
    pub l_wgt: f64,
    pub total: f64,
}

/// Weighted combination of the four terms.
///
/// `has_alpha` is false for pristine samples, which skip the blend-weight
/// term entirely (reported as zero).
pub fn total_loss(terms: LossTerms, weights: &LossWeights, has_alpha: bool) -> Result<LossBreakdown> {
    weights.validate()?;
    let l_wgt = if has_alpha { terms.l_wgt } else { 0.0 };
    let parts = [terms.l_cls, terms.l_sim, terms.l_int, l_wgt];
    if parts.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss term".into()));
    }
    if parts.iter().any(|v| *v < 0.0) {
        return Err(Error::invalid(format!("negative loss term: {terms:?}")));
    }
    let total = weights.lambda_cls * terms.l_cls
        + weights.lambda_sim * terms.l_sim
        + weights.lambda_int * terms.l_int
        + weights.lambda_wgt * l_wgt;
    Ok(LossBreakdown {
        l_cls: terms.l_cls,
        l_sim: terms.l_sim,
        l_int: terms.l_int,
        l_wgt,
        total,
    })
}

impl LossBreakdown {
    /// Element-wise mean over a batch, summed in index order.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.l_cls += b.l_cls;
            acc.l_sim += b.l_sim;
            acc.l_int += b.l_int;
            acc.l_wgt += b.l_wgt;
            acc.total += b.total;
        }
        LossBreakdown {
            l_cls: acc.l_cls / n,
            l_sim: acc.l_sim / n,
            l_int: acc.l_int / n,
            l_wgt: acc.l_wgt / n,
            total: acc.total / n,
        }
    }
}

/// Appends `step, l_cls, l_sim, l_int, l_wgt, total, lr` rows to a CSV file.
pub struct LossLog {
    file: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl LossLog {
    pub const HEADER: &'static str = "step,l_cls,l_sim,l_int,l_wgt,total,lr";

    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut log = LossLog {
            file: std::io::BufWriter::new(file),
            path: path.to_path_buf(),
        };
        writeln!(log.file, "{}", Self::HEADER).map_err(|e| Error::io(&log.path, e))?;
        Ok(log)
    }

    pub fn append(&mut self, step: usize, b: &LossBreakdown, lr: f64) -> Result<()> {
        writeln!(
            self.file,
            "{step},{},{},{},{},{},{lr}",
            b.l_cls, b.l_sim, b.l_int, b.l_wgt, b.total
        )
        .map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms() -> LossTerms {
        LossTerms {
            l_cls: 0.1,
            l_sim: 0.2,
            l_int: 0.3,
            l_wgt: 0.4,
        }
    }

    #[test]
    fn published_weights_arithmetic() {
        let b = total_loss(terms(), &LossWeights::published(), true).unwrap();
        assert!((b.total - 0.54).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero() {
        let w = LossWeights {
            lambda_cls: 0.0,
            lambda_sim: 0.0,
            lambda_int: 0.0,
            lambda_wgt: 0.0,
        };
        assert_eq!(total_loss(terms(), &w, true).unwrap().total, 0.0);
    }

    #[test]
    fn real_samples_skip_weight_term() {
        let b = total_loss(terms(), &LossWeights::published(), false).unwrap();
        assert_eq!(b.l_wgt, 0.0);
        assert!((b.total - 0.5).abs() < 1e-12);
    }

    #[test]
    fn doubling_intensity_weight_doubles_its_share() {
        let w = LossWeights::published();
        let base = total_loss(terms(), &w, true).unwrap().total;
        let w2 = LossWeights {
            lambda_int: 2.0 * w.lambda_int,
            ..w
        };
        let doubled = total_loss(terms(), &w2, true).unwrap().total;
        assert!((doubled - base - w.lambda_int * 0.3).abs() < 1e-12);
    }

    #[test]
    fn rejects_negative_weights() {
        let w = LossWeights {
            lambda_sim: -0.1,
            ..LossWeights::published()
        };
        assert!(total_loss(terms(), &w, true).is_err());
    }

    #[test]
    fn presets() {
        assert_eq!(LossWeights::by_preset("equal").unwrap().lambda_sim, 1.0);
        assert_eq!(LossWeights::default().lambda_sim, 0.5);
        assert!(LossWeights::by_preset("nope").is_err());
    }
}
