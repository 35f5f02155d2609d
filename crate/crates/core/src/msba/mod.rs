//! Multivariate soft-blending augmentation.
//!
//! Per-method forgery intensity maps `M_i = |I_real − I_forge_i|` are mixed
//! with Dirichlet weights, `M̃ = Σ α_i M_i`, and subtracted from the real
//! image, `Ĩ = clamp(I_real − λ M̃, 0, 1)`. The weights double as a soft
//! label for the blend-weight head.

pub mod export;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::dataset::Image;
use crate::error::{Error, Result};
use crate::objectives::losses::{check_simplex, SIMPLEX_TOL};
use crate::tensor::Mat;

pub use export::{read_raw_map, write_raw_map, write_map_png16, PNG_SCALE};

const MAX_GAMMA_RETRIES: usize = 64;

/// Per-pixel forgery magnitude, one value per colour channel.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityMap {
    pub values: Image,
}

impl IntensityMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        IntensityMap {
            values: Image::zeros(height, width, channels),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.values.shape()
    }

    /// Channel mean at every pixel, row-major `H × W`.
    pub fn channel_mean(&self) -> Mat {
        let (h, w, c) = self.shape();
        let mut out = Mat::zeros(h, w);
        for (o, px) in out.data.iter_mut().zip(self.values.data.chunks_exact(c)) {
            *o = px.iter().sum::<f64>() / c as f64;
        }
        out
    }

    pub fn mean(&self) -> f64 {
        let d = &self.values.data;
        if d.is_empty() {
            0.0
        } else {
            d.iter().sum::<f64>() / d.len() as f64
        }
    }
}

/// How an intensity map is derived from a real/forged pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceMode {
    /// `|real − forged|`.
    #[default]
    Absolute,
    /// `real − forged`; with a one-hot α and λ = 1 the blend reproduces the
    /// forged image. Values lie in `[-1, 1]`.
    Signed,
}

fn check_pair(real: &Image, forged: &Image) -> Result<()> {
    if !real.same_shape(forged) {
        return Err(Error::shape(format!(
            "real image is {:?} but forged image is {:?}",
            real.shape(),
            forged.shape()
        )));
    }
    Ok(())
}

pub fn intensity_map(real: &Image, forged: &Image) -> Result<IntensityMap> {
    intensity_map_with(real, forged, DifferenceMode::Absolute)
}

pub fn intensity_map_with(real: &Image, forged: &Image, mode: DifferenceMode) -> Result<IntensityMap> {
    check_pair(real, forged)?;
    let data = real
        .data
        .iter()
        .zip(&forged.data)
        .map(|(r, f)| match mode {
            DifferenceMode::Absolute => (r - f).abs(),
            DifferenceMode::Signed => r - f,
        })
        .collect();
    Ok(IntensityMap {
        values: Image::from_vec(real.height, real.width, real.channels, data)?,
    })
}

/// Symmetric Dirichlet draw as normalised `Gamma(β, 1)` variates.
pub fn sample_blend_weights<R: Rng + ?Sized>(m: usize, beta: f64, rng: &mut R) -> Result<Vec<f64>> {
    if m < 1 {
        return Err(Error::invalid("need at least one forgery method to blend"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("Dirichlet concentration must be positive, got {beta}")));
    }
    if m == 1 {
        return Ok(vec![1.0]);
    }
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    for _ in 0..MAX_GAMMA_RETRIES {
        let g: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = g.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return Ok(g.into_iter().map(|v| v / sum).collect());
        }
    }
    Err(Error::NonFinite(format!(
        "Gamma({beta}) draws degenerate after {MAX_GAMMA_RETRIES} attempts"
    )))
}

/// Dirichlet weights, intensity scale and the concentration they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendSpec {
    pub alpha: Vec<f64>,
    pub lambda: f64,
    pub beta: f64,
}

impl BlendSpec {
    pub fn sample<R: Rng + ?Sized>(m: usize, beta: f64, lambda_range: (f64, f64), rng: &mut R) -> Result<Self> {
        let (lo, hi) = lambda_range;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::invalid(format!("bad λ interval [{lo}, {hi}]")));
        }
        let alpha = sample_blend_weights(m, beta, rng)?;
        let lambda = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        Ok(BlendSpec { alpha, lambda, beta })
    }

    pub fn validate(&self) -> Result<()> {
        check_simplex(&self.alpha, "blend weights")?;
        if !self.lambda.is_finite() {
            return Err(Error::NonFinite("blend scale λ".into()));
        }
        Ok(())
    }
}

/// Supervision attached to a blended sample: always fake, with the mixing
/// weights as a distribution over methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub alpha: Vec<f64>,
    pub binary_label: u8,
}

/// `M̃ = Σ α_i M_i`.
pub fn blend_maps(maps: &[IntensityMap], alpha: &[f64]) -> Result<IntensityMap> {
    if maps.is_empty() || maps.len() != alpha.len() {
        return Err(Error::shape(format!("{} maps for {} weights", maps.len(), alpha.len())));
    }
    let sum: f64 = alpha.iter().sum();
    if alpha.iter().any(|a| !(*a >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("blend weights are not on the simplex: {alpha:?}")));
    }
    let shape = maps[0].shape();
    if let Some(m) = maps.iter().find(|m| m.shape() != shape) {
        return Err(Error::shape(format!("map shapes differ: {shape:?} vs {:?}", m.shape())));
    }
    // One-hot weights reproduce the chosen map bit for bit.
    if let Some(i) = alpha.iter().position(|&a| a == 1.0) {
        return Ok(maps[i].clone());
    }
    let mut out = IntensityMap::zeros(shape.0, shape.1, shape.2);
    for (m, &a) in maps.iter().zip(alpha) {
        if a == 0.0 {
            continue;
        }
        for (o, v) in out.values.data.iter_mut().zip(&m.values.data) {
            *o += a * v;
        }
    }
    Ok(out)
}

/// Output of [`synthesize`].
#[derive(Clone, Debug)]
pub struct Blended {
    pub image: Image,
    pub label: SoftLabel,
    /// Blended map before scaling and clamping.
    pub map: IntensityMap,
}

/// `Ĩ = clamp(real − λ·Σ α_i M_i, 0, 1)`.
pub fn synthesize(real: &Image, maps: &[IntensityMap], spec: &BlendSpec) -> Result<Blended> {
    spec.validate()?;
    let map = blend_maps(maps, &spec.alpha)?;
    if map.values.shape() != real.shape() {
        return Err(Error::shape(format!(
            "maps are {:?} but the real image is {:?}",
            map.values.shape(),
            real.shape()
        )));
    }
    let mut image = real.clone();
    for (p, m) in image.data.iter_mut().zip(&map.values.data) {
        *p = (*p - spec.lambda * m).clamp(0.0, 1.0);
    }
    Ok(Blended {
        image,
        label: SoftLabel {
            alpha: spec.alpha.clone(),
            binary_label: 1,
        },
        map,
    })
}

/// Channel mean followed by non-overlapping block averages onto an `h × w` grid.
pub fn to_patch_targets(map: &IntensityMap, grid: (usize, usize)) -> Result<Mat> {
    let (gh, gw) = grid;
    let (h, w, _) = map.shape();
    if gh == 0 || gw == 0 || h % gh != 0 || w % gw != 0 {
        return Err(Error::shape(format!("{h}x{w} map does not divide into a {gh}x{gw} grid")));
    }
    let mean = map.channel_mean();
    let (bh, bw) = (h / gh, w / gw);
    let mut out = Mat::zeros(gh, gw);
    for y in 0..h {
        for x in 0..w {
            out.data[(y / bh) * gw + x / bw] += mean.data[y * w + x];
        }
    }
    out.scale(1.0 / (bh * bw) as f64);
    Ok(out)
}

fn default_beta() -> f64 {
    1.0
}
fn default_lambda_range() -> (f64, f64) {
    (0.8, 1.2)
}
fn default_min_intensity() -> f64 {
    1e-3
}
fn default_max_tries() -> usize {
    16
}

/// Knobs for drawing blended training samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsbaConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_lambda_range")]
    pub lambda_range: (f64, f64),
    /// Redraw when the blended map's mean falls below this.
    #[serde(default = "default_min_intensity")]
    pub min_intensity: f64,
    #[serde(default = "default_max_tries")]
    pub max_tries: usize,
    #[serde(default)]
    pub difference: DifferenceMode,
}

impl Default for MsbaConfig {
    fn default() -> Self {
        MsbaConfig {
            beta: default_beta(),
            lambda_range: default_lambda_range(),
            min_intensity: default_min_intensity(),
            max_tries: default_max_tries(),
            difference: DifferenceMode::default(),
        }
    }
}

/// A blended image with weights laid out over all `num_methods` methods.
#[derive(Clone, Debug)]
pub struct MsbaSample {
    pub image: Image,
    pub label: SoftLabel,
    pub map: IntensityMap,
    pub spec: BlendSpec,
}

/// Blends the forged versions of one real image.
///
/// `forged` pairs method indices with images. Methods absent from the list
/// get zero weight in the returned label, so held-out methods never leak.
pub fn build_msba_sample<R: Rng + ?Sized>(
    real: &Image,
    forged: &[(usize, &Image)],
    num_methods: usize,
    config: &MsbaConfig,
    rng: &mut R,
) -> Result<MsbaSample> {
    if forged.is_empty() {
        return Err(Error::invalid("no forged images to blend"));
    }
    if let Some((m, _)) = forged.iter().find(|(m, _)| *m >= num_methods) {
        return Err(Error::invalid(format!("method {m} out of range for {num_methods} methods")));
    }
    let maps = forged
        .iter()
        .map(|(_, f)| intensity_map_with(real, f, config.difference))
        .collect::<Result<Vec<_>>>()?;
    let mut last = None;
    for _ in 0..config.max_tries.max(1) {
        let spec = BlendSpec::sample(maps.len(), config.beta, config.lambda_range, rng)?;
        let blended = synthesize(real, &maps, &spec)?;
        let strong = blended.map.values.data.iter().map(|v| v.abs()).sum::<f64>()
            / blended.map.values.data.len().max(1) as f64
            >= config.min_intensity;
        last = Some((spec, blended));
        if strong {
            break;
        }
    }
    let (spec, blended) = last.expect("at least one attempt");
    let mut alpha = vec![0.0; num_methods];
    for ((m, _), a) in forged.iter().zip(&spec.alpha) {
        alpha[*m] += a;
    }
    Ok(MsbaSample {
        image: blended.image,
        label: SoftLabel {
            alpha: alpha.clone(),
            binary_label: 1,
        },
        map: blended.map,
        spec: BlendSpec {
            alpha,
            lambda: spec.lambda,
            beta: spec.beta,
        },
    })
}
