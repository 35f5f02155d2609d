use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where patch tokens come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Trainable linear patch embedding, toy hash-vocabulary text encoder.
    #[default]
    Toy,
    /// Frozen external stem and text encoder supplied at construction.
    Pretrained,
}

fn d_mlp_ratio() -> usize {
    4
}
fn d_fake_prompts() -> usize {
    16
}
fn d_kappa_init() -> f64 {
    10.0
}
fn d_kappa_range() -> (f64, f64) {
    (1.0, 100.0)
}
fn d_methods() -> usize {
    4
}
fn d_text_depth() -> usize {
    2
}
fn d_text_heads() -> usize {
    4
}
fn d_vocab() -> usize {
    4096
}
fn d_max_tokens() -> usize {
    32
}
fn d_init_std() -> f64 {
    0.02
}
/// Initial scale of weight matrices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// Truncated normal with std `1/√(3·fan_in)`.
    #[default]
    FanIn,
    /// Truncated normal with a fixed std.
    Normal(f64),
}

impl WeightInit {
    pub fn std(self, fan_in: usize) -> f64 {
        match self {
            WeightInit::FanIn => (3.0 * fan_in.max(1) as f64).powf(-0.5),
            WeightInit::Normal(s) => s,
        }
    }
}

fn d_pixel_mean() -> [f64; 3] {
    [0.5; 3]
}
fn d_pixel_std() -> [f64; 3] {
    [0.25; 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `(height, width)` of input images.
    pub image_size: (usize, usize),
    pub patch_size: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub depth: usize,
    pub heads: usize,
    pub mip_hidden: usize,
    #[serde(default = "d_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default = "d_fake_prompts")]
    pub num_fake_prompts: usize,
    #[serde(default = "d_kappa_init")]
    pub kappa_init: f64,
    #[serde(default = "d_kappa_range")]
    pub kappa_range: (f64, f64),
    /// Number of forgery methods `M` (length of the blend-weight head).
    #[serde(default = "d_methods")]
    pub num_methods: usize,
    /// Intensity-head channels `C`; `0` means "same as `num_methods`".
    #[serde(default)]
    pub decoder_channels: usize,
    #[serde(default = "d_text_depth")]
    pub text_depth: usize,
    #[serde(default = "d_text_heads")]
    pub text_heads: usize,
    #[serde(default = "d_vocab")]
    pub vocab_size: usize,
    #[serde(default = "d_max_tokens")]
    pub max_tokens: usize,
    /// Std of the class token and position embeddings.
    #[serde(default = "d_init_std")]
    pub init_std: f64,
    #[serde(default)]
    pub weight_init: WeightInit,
    /// Per-channel input normalisation `(x − mean) / std` ahead of the
    /// learned patch embedding.
    #[serde(default = "d_pixel_mean")]
    pub pixel_mean: [f64; 3],
    #[serde(default = "d_pixel_std")]
    pub pixel_std: [f64; 3],
    #[serde(default)]
    pub backbone: BackboneKind,
}

impl ModelConfig {
    fn base(image_size: (usize, usize), patch_size: usize, d_v: usize, d_t: usize, depth: usize, heads: usize, mip_hidden: usize) -> Self {
        ModelConfig {
            image_size,
            patch_size,
            d_v,
            d_t,
            depth,
            heads,
            mip_hidden,
            mlp_ratio: d_mlp_ratio(),
            num_fake_prompts: d_fake_prompts(),
            kappa_init: d_kappa_init(),
            kappa_range: d_kappa_range(),
            num_methods: d_methods(),
            decoder_channels: 0,
            text_depth: d_text_depth(),
            text_heads: d_text_heads(),
            vocab_size: d_vocab(),
            max_tokens: d_max_tokens(),
            init_std: d_init_std(),
            weight_init: WeightInit::FanIn,
            pixel_mean: d_pixel_mean(),
            pixel_std: d_pixel_std(),
            backbone: BackboneKind::Toy,
        }
    }

    /// Desk-scale default: 64×64 inputs, 8×8 patches.
    pub fn toy() -> Self {
        Self::base((64, 64), 8, 128, 64, 4, 4, 128)
    }

    /// Smallest useful configuration: a 4×4 patch grid at width 16.
    pub fn tiny() -> Self {
        let mut c = Self::base((16, 16), 4, 16, 16, 2, 2, 32);
        c.mlp_ratio = 2;
        c.num_fake_prompts = 4;
        c.text_depth = 1;
        c.text_heads = 2;
        c
    }

    /// ViT-B/16-sized widths with a 224×224 input.
    pub fn paper() -> Self {
        Self::base((224, 224), 16, 768, 512, 12, 12, 512)
    }

    pub fn by_preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "tiny" => Ok(Self::tiny()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::invalid(format!("unknown model preset {name:?} (toy, tiny, paper)"))),
        }
    }

    pub fn channels(&self) -> usize {
        if self.decoder_channels == 0 {
            self.num_methods
        } else {
            self.decoder_channels
        }
    }

    /// Patch grid `(h, w)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.image_size.0 / self.patch_size, self.image_size.1 / self.patch_size)
    }

    pub fn num_patches(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    /// Intensity-map grid, four times the patch grid per side.
    pub fn decoder_grid(&self) -> (usize, usize) {
        let (h, w) = self.grid();
        (4 * h, 4 * w)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        let (h, w) = self.image_size;
        let p = self.patch_size;
        if p == 0 || h == 0 || w == 0 || h % p != 0 || w % p != 0 {
            return bad(format!("image size {h}x{w} is not divisible by patch size {p}"));
        }
        if p % 4 != 0 {
            return bad(format!("patch size {p} must be a multiple of 4 so intensity targets align"));
        }
        for (name, v) in [
            ("d_v", self.d_v),
            ("d_t", self.d_t),
            ("depth", self.depth),
            ("heads", self.heads),
            ("mip_hidden", self.mip_hidden),
            ("mlp_ratio", self.mlp_ratio),
            ("num_fake_prompts", self.num_fake_prompts),
            ("num_methods", self.num_methods),
            ("text_depth", self.text_depth),
            ("text_heads", self.text_heads),
            ("vocab_size", self.vocab_size),
            ("max_tokens", self.max_tokens),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.d_v % self.heads != 0 {
            return bad(format!("d_v={} is not divisible by heads={}", self.d_v, self.heads));
        }
        if self.d_t % self.text_heads != 0 {
            return bad(format!("d_t={} is not divisible by text_heads={}", self.d_t, self.text_heads));
        }
        if self.pixel_std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.pixel_mean.iter().any(|m| !m.is_finite()) {
            return bad("pixel normalisation needs finite means and positive stds".into());
        }
        let (lo, hi) = self.kappa_range;
        if !(0.0 < lo && lo <= self.kappa_init && self.kappa_init <= hi) {
            return bad(format!("κ init {} outside [{lo}, {hi}]", self.kappa_init));
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive".into());
        }
        if let WeightInit::Normal(s) = self.weight_init {
            if !(s.is_finite() && s > 0.0) {
                return bad("weight_init std must be positive".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in ["toy", "tiny", "paper"] {
            ModelConfig::by_preset(p).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::by_preset("huge").is_err());
    }

    #[test]
    fn grids() {
        let c = ModelConfig::toy();
        assert_eq!(c.grid(), (8, 8));
        assert_eq!(c.num_patches(), 64);
        assert_eq!(c.decoder_grid(), (32, 32));
        assert_eq!(c.channels(), 4);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut c = ModelConfig::toy();
        c.image_size = (60, 64);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.patch_size = 6;
        c.image_size = (60, 60);
        assert!(c.validate().is_err());
    }

    #[test]
    fn weight_init_json() {
        let w: WeightInit = serde_json::from_str(r#"{"normal":0.02}"#).unwrap();
        assert_eq!(w.std(100), 0.02);
        let w: WeightInit = serde_json::from_str(r#""fan_in""#).unwrap();
        assert!((w.std(12) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn json_defaults() {
        let c: ModelConfig = serde_json::from_str(
            r#"{"image_size":[32,32],"patch_size":8,"d_v":32,"d_t":16,"depth":2,"heads":2,"mip_hidden":32}"#,
        )
        .unwrap();
        assert_eq!(c.num_fake_prompts, 16);
        assert_eq!(c.kappa_init, 10.0);
        assert_eq!(c.weight_init, WeightInit::FanIn);
        c.validate().unwrap();
    }
}
