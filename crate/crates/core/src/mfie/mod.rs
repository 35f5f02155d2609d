//! Forgery-intensity estimation head.
//!
//! Penultimate-layer patch features are upsampled ×4 by two transposed
//! convolutions (each followed by LayerNorm and GELU), mapped per pixel to
//! `C` channel logits and softmaxed over channels. A softmax over a linear
//! map of the class feature weights the channels into one map `M̃_all`. A
//! separate zero-initialised linear layer on the class feature predicts the
//! blend weights `α̂`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::layers::{LayerNorm, Linear};
use crate::model::WeightInit;
use crate::params::{trunc_normal, ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub channels: usize,
    pub upsample_stages: usize,
    pub decoder_width: usize,
}

impl DecoderConfig {
    pub fn new(channels: usize, decoder_width: usize) -> Result<Self> {
        if channels == 0 || decoder_width == 0 {
            return Err(Error::invalid("decoder channels and width must be positive"));
        }
        Ok(DecoderConfig {
            channels,
            upsample_stages: 2,
            decoder_width,
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Upsample {
    weight: ParamId,
    bias: ParamId,
    norm: LayerNorm,
}

/// Parameter handles of the head; the tensors live in the detector's store.
#[derive(Clone, Debug)]
pub struct MfieHead {
    pub config: DecoderConfig,
    stages: Vec<Upsample>,
    pixel: Linear,
    channel_weights: Linear,
    blend_weights: Linear,
}

/// Graph nodes of one intensity prediction.
#[derive(Clone, Copy, Debug)]
pub struct IntensityVars {
    /// `(H'·W') × C`, rows on the simplex.
    pub channel_maps: Var,
    /// `1 × C`.
    pub weights: Var,
    /// `(H'·W') × 1`.
    pub combined: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntensityPrediction {
    /// Row-major `(H'·W') × C`.
    pub channel_maps: Mat,
    pub channel_weights: Vec<f64>,
    /// `H' × W'`.
    pub combined: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightPrediction {
    pub alpha_hat: Vec<f64>,
}

impl MfieHead {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: DecoderConfig,
        d_v: usize,
        num_methods: usize,
        init: WeightInit,
        rng: &mut R,
    ) -> Self {
        let dw = config.decoder_width;
        let stages = (0..config.upsample_stages)
            .map(|i| {
                let c_in = if i == 0 { d_v } else { dw };
                Upsample {
                    weight: store.insert(format!("mfie.up{i}.weight"), trunc_normal(rng, c_in, 16 * dw, init.std(4 * c_in))),
                    bias: store.insert(format!("mfie.up{i}.bias"), Mat::zeros(1, dw)),
                    norm: LayerNorm::register(store, &format!("mfie.up{i}.ln"), dw),
                }
            })
            .collect();
        MfieHead {
            config,
            stages,
            pixel: Linear::register(store, "mfie.pixel", dw, config.channels, true, init, rng),
            channel_weights: Linear::register(store, "mfie.channel_weights", d_v, config.channels, true, init, rng),
            blend_weights: Linear::register_zero(store, "mfie.blend_weights", d_v, num_methods),
        }
    }

    /// Upsamples an `h×w` grid of patch features (rows) to `(4h)×(4w)`.
    pub fn decode_features(&self, g: &mut Graph, patches: Var, grid: (usize, usize)) -> Result<Var> {
        let (mut h, mut w) = grid;
        if g.value(patches).rows != h * w {
            return Err(Error::shape(format!(
                "{} patch rows do not form a {h}x{w} grid",
                g.value(patches).rows
            )));
        }
        let mut x = patches;
        for st in &self.stages {
            let (wt, b) = (g.param(st.weight), g.param(st.bias));
            if g.value(x).cols != g.value(wt).rows {
                return Err(Error::shape("decoder input width mismatch"));
            }
            x = g.transposed_conv(x, wt, b, h, w);
            x = st.norm.forward(g, x);
            x = g.gelu(x);
            h *= 2;
            w *= 2;
        }
        Ok(x)
    }

    pub fn predict_intensity(&self, g: &mut Graph, decoded: Var, cls: Var) -> IntensityVars {
        let logits = self.pixel.forward(g, decoded);
        let channel_maps = g.softmax_rows(logits);
        let wl = self.channel_weights.forward(g, cls);
        let weights = g.softmax_rows(wl);
        let combined = g.matmul_nt(channel_maps, weights);
        IntensityVars {
            channel_maps,
            weights,
            combined,
        }
    }

    pub fn predict_blend_weights(&self, g: &mut Graph, cls: Var) -> Var {
        let l = self.blend_weights.forward(g, cls);
        g.softmax_rows(l)
    }

    pub fn intensity_prediction(g: &Graph, vars: &IntensityVars, out_grid: (usize, usize)) -> IntensityPrediction {
        let c = g.value(vars.combined);
        IntensityPrediction {
            channel_maps: g.value(vars.channel_maps).clone(),
            channel_weights: g.value(vars.weights).data.clone(),
            combined: Mat::from_vec(out_grid.0, out_grid.1, c.data.clone()),
        }
    }
}
