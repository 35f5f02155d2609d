use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Composition;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::msba::MsbaConfig;
use crate::objectives::LossWeights;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Cosine,
}

/// Which class prompt fills the text token during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// `Unknown` everywhere, as at inference.
    #[default]
    UnknownOnly,
    /// Single-method fakes get their method's prompt; everything else
    /// `Unknown`.
    TypeConditionedTrain,
}

fn d_composition() -> Composition {
    Composition::default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub msba: MsbaConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub weight_decay: f64,
    pub seed: u64,
    #[serde(default = "d_composition")]
    pub batch_composition: Composition,
    #[serde(default)]
    pub prompt_mode: PromptMode,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    /// Scaled defaults for the toy model: 10 epochs, batch 8, lr 5e-4 → 5e-6.
    pub fn toy() -> Self {
        TrainConfig {
            model: ModelConfig::toy(),
            loss_weights: LossWeights::published(),
            msba: MsbaConfig::default(),
            batch_size: 8,
            epochs: 10,
            lr_init: 5e-4,
            lr_final: 5e-6,
            schedule: Schedule::Cosine,
            weight_decay: 0.05,
            seed: 0,
            batch_composition: Composition::default(),
            prompt_mode: PromptMode::UnknownOnly,
            grad_clip: Some(1.0),
        }
    }

    /// The full-scale protocol: batch 64, 100 epochs, lr 2e-5 → 2e-7.
    pub fn paper() -> Self {
        TrainConfig {
            model: ModelConfig::paper(),
            batch_size: 64,
            epochs: 100,
            lr_init: 2e-5,
            lr_final: 2e-7,
            ..Self::toy()
        }
    }

    pub fn by_preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paper" => Ok(Self::paper()),
            "tiny" => Ok(TrainConfig {
                model: ModelConfig::tiny(),
                ..Self::toy()
            }),
            other => Err(Error::invalid(format!("unknown training preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss_weights.validate()?;
        self.batch_composition.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.lr_init.is_finite() && self.lr_final.is_finite() && self.lr_final >= 0.0) {
            return Err(Error::invalid("learning rates must be finite and nonnegative"));
        }
        if self.lr_final > self.lr_init {
            return Err(Error::invalid(format!(
                "lr_final {} exceeds lr_init {}",
                self.lr_final, self.lr_init
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be nonnegative"));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid("grad_clip must be positive"));
            }
        }
        let (lo, hi) = self.msba.lambda_range;
        if !(self.msba.beta > 0.0 && lo > 0.0 && lo <= hi && self.msba.min_intensity >= 0.0) {
            return Err(Error::invalid("msba settings need beta > 0 and 0 < lambda_lo ≤ lambda_hi"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the compact JSON form, lowercase hex.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }
}
