//! The detector: patch tokens, a text token fused through a projection
//! MLP, a pre-norm transformer, a classification head and a similarity
//! score against generic fake descriptions.
//!
//! The fused probability is `ŷ = ½σ(z_cls) + ½σ(κ·s)` where `s` is the mean
//! cosine between `Proj(cls)` and the fake-prompt features and `κ` is a
//! learnable temperature clamped to `kappa_range`.

pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod prompts;
pub mod text;

use std::sync::Arc;

use crate::autodiff::{Graph, Var};
use crate::dataset::Image;
use crate::error::{Error, Result};
use crate::mfie::{DecoderConfig, IntensityPrediction, MfieHead, WeightPrediction};
use crate::objectives::{LossBreakdown, LossWeights};
use crate::params::{trunc_normal, Grads, ParamId, ParamStore};
use crate::seed;
use crate::tensor::{sigmoid, Mat};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{BackboneKind, ModelConfig, WeightInit};
pub use layers::{Block, LayerNorm, Linear};
pub use prompts::{PromptTable, UNKNOWN_CLASS};
pub use text::{tokenize, TextEncoder, ToyTextEncoder};

/// A frozen image stem producing one token per patch.
pub trait PatchStem: Send + Sync {
    fn width(&self) -> usize;
    fn patch_size(&self) -> usize;
    /// `N × width` patch tokens in row-major patch order.
    fn embed(&self, image: &Image) -> Result<Mat>;
}

#[derive(Clone)]
enum TextBackend {
    Toy(Arc<ToyTextEncoder>),
    External(Arc<dyn TextEncoder>),
}

impl TextBackend {
    fn encoder(&self) -> &dyn TextEncoder {
        match self {
            TextBackend::Toy(t) => t.as_ref(),
            TextBackend::External(t) => t.as_ref(),
        }
    }
}

#[derive(Clone, Debug)]
struct Ids {
    patch_embed: Option<Linear>,
    cls_token: ParamId,
    pos_embed: ParamId,
    blocks: Vec<Block>,
    ln_post: LayerNorm,
    head: Linear,
    proj: Linear,
    mip_ln: LayerNorm,
    mip_fc1: Linear,
    mip_fc2: Linear,
    kappa: ParamId,
    mfie: MfieHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisualFeatures {
    /// Final-layer class token after the output norm, length `d_v`.
    pub cls: Vec<f64>,
    /// Penultimate-layer patch tokens, `N × d_v`.
    pub patches: Mat,
    pub text_token_out: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub z_cls: f64,
    pub s: f64,
    pub fused_prob: f64,
    pub features: VisualFeatures,
}

/// Fully supervised training example in model space.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub image: Image,
    /// 1 for fake, 0 for real.
    pub label: f64,
    /// Row of the prompt table used as the text token.
    pub prompt: usize,
    /// `H' × W'` intensity target.
    pub intensity_target: Mat,
    /// Blend-weight target; `None` for real images.
    pub alpha: Option<Vec<f64>>,
}

/// `½σ(z) + ½σ(κs)`.
pub fn fused_prediction(z_cls: f64, s: f64, kappa: f64) -> Result<f64> {
    if !(z_cls.is_finite() && s.is_finite() && kappa.is_finite()) {
        return Err(Error::NonFinite("fused prediction inputs".into()));
    }
    Ok(0.5 * sigmoid(z_cls) + 0.5 * sigmoid(kappa * s))
}

/// Non-overlapping `P×P×3` patches flattened in `(y, x, c)` order.
pub fn patchify(image: &Image, patch: usize) -> Result<Mat> {
    let (h, w, c) = image.shape();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::shape(format!("{h}x{w} image is not divisible into {patch}x{patch} patches")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let mut out = Mat::zeros(gh * gw, patch * patch * c);
    for py in 0..gh {
        for px in 0..gw {
            let row = out.row_mut(py * gw + px);
            let mut k = 0;
            for y in 0..patch {
                let start = image.idx(py * patch + y, px * patch, 0);
                let len = patch * c;
                row[k..k + len].copy_from_slice(&image.data[start..start + len]);
                k += len;
            }
        }
    }
    Ok(out)
}

/// Graph handles of one forward pass.
pub struct ForwardVars {
    pub cls: Var,
    pub patches: Var,
    pub text_out: Var,
    pub z: Var,
    pub s: Var,
    pub sim_prob: Var,
    pub y_hat: Var,
}

#[derive(Clone)]
pub struct Detector {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub prompts: PromptTable,
    ids: Ids,
    text: TextBackend,
    stem: Option<Arc<dyn PatchStem>>,
    /// Text features of every class prompt, one row each.
    class_features: Mat,
    fake_features: Mat,
}

impl std::fmt::Debug for Detector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Detector")
            .field("config", &self.config)
            .field("num_params", &self.params.numel())
            .finish()
    }
}

impl Detector {
    /// Toy detector with weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.backbone != BackboneKind::Toy {
            return Err(Error::invalid("pretrained backbones need Detector::with_backbone"));
        }
        config.validate()?;
        let text = TextBackend::Toy(Arc::new(ToyTextEncoder::new(&config, seed::derive(seed, &[0x7e47]))));
        let prompts = PromptTable::standard_for(&config);
        Self::assemble(config, seed, text, None, prompts)
    }

    /// Detector over a frozen external stem and text encoder.
    pub fn with_backbone(
        config: ModelConfig,
        seed: u64,
        stem: Arc<dyn PatchStem>,
        text: Arc<dyn TextEncoder>,
    ) -> Result<Self> {
        if config.backbone != BackboneKind::Pretrained {
            return Err(Error::invalid("config must select the pretrained backbone"));
        }
        if stem.width() != config.d_v || stem.patch_size() != config.patch_size || text.width() != config.d_t {
            return Err(Error::shape(format!(
                "backbone widths (stem {}, patch {}, text {}) do not match config (d_v {}, patch {}, d_t {})",
                stem.width(),
                stem.patch_size(),
                text.width(),
                config.d_v,
                config.patch_size,
                config.d_t
            )));
        }
        Self::assemble(
            config.clone(),
            seed,
            TextBackend::External(text),
            Some(stem),
            PromptTable::standard_for(&config),
        )
    }

    fn assemble(
        config: ModelConfig,
        seed: u64,
        text: TextBackend,
        stem: Option<Arc<dyn PatchStem>>,
        prompts: PromptTable,
    ) -> Result<Self> {
        config.validate()?;
        prompts.validate(config.num_fake_prompts)?;
        let mut rng = seed::rng_for(seed, &[0x0de1]);
        let mut store = ParamStore::new();
        let (d, std) = (config.d_v, config.init_std);
        let p = config.patch_size;
        let patch_embed = stem
            .is_none()
            .then(|| {
                let fan_in = p * p * 3;
                Linear::register(&mut store, "patch_embed", fan_in, d, true, config.weight_init, &mut rng)
            });
        let cls_token = store.insert("cls_token", trunc_normal(&mut rng, 1, d, std));
        let pos_embed = store.insert("pos_embed", trunc_normal(&mut rng, config.num_patches() + 1, d, std));
        let blocks = (0..config.depth)
            .map(|i| {
                Block::register(
                    &mut store,
                    &format!("blocks.{i}"),
                    d,
                    config.heads,
                    config.mlp_ratio * d,
                    config.weight_init,
                    &mut rng,
                )
            })
            .collect();
        let ln_post = LayerNorm::register(&mut store, "ln_post", d);
        let head = Linear::register(&mut store, "head", d, 1, true, config.weight_init, &mut rng);
        let proj = Linear::register(&mut store, "proj", d, config.d_t, false, config.weight_init, &mut rng);
        let mip_ln = LayerNorm::register(&mut store, "mip.ln", config.d_t);
        let mip_fc1 = Linear::register(&mut store, "mip.fc1", config.d_t, config.mip_hidden, true, config.weight_init, &mut rng);
        let mip_fc2 = Linear::register(&mut store, "mip.fc2", config.mip_hidden, d, true, config.weight_init, &mut rng);
        let kappa = store.insert("kappa", Mat::scalar(config.kappa_init));
        let mfie = MfieHead::register(
            &mut store,
            DecoderConfig::new(config.channels(), d)?,
            d,
            config.num_methods,
            config.weight_init,
            &mut rng,
        );
        let ids = Ids {
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            ln_post,
            head,
            proj,
            mip_ln,
            mip_fc1,
            mip_fc2,
            kappa,
            mfie,
        };
        let mut det = Detector {
            config,
            params: store,
            prompts,
            ids,
            text,
            stem,
            class_features: Mat::zeros(0, 0),
            fake_features: Mat::zeros(0, 0),
        };
        det.refresh_prompt_features()?;
        Ok(det)
    }

    fn refresh_prompt_features(&mut self) -> Result<()> {
        let enc = self.text.encoder();
        let rows = |prompts: Vec<&str>| -> Result<Mat> {
            let mut data = Vec::new();
            for p in &prompts {
                let f = enc.encode(p)?;
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("text feature of {p:?}")));
                }
                data.extend(f);
            }
            Ok(Mat::from_vec(prompts.len(), enc.width(), data))
        };
        self.class_features = rows(self.prompts.class_prompts.iter().map(|(_, p)| p.as_str()).collect())?;
        self.fake_features = rows(self.prompts.fake_prompts.iter().map(String::as_str).collect())?;
        Ok(())
    }

    pub fn with_prompts(mut self, prompts: PromptTable) -> Result<Self> {
        prompts.validate(self.config.num_fake_prompts)?;
        self.prompts = prompts;
        self.refresh_prompt_features()?;
        Ok(self)
    }

    pub(crate) fn toy_text(&self) -> Option<&ToyTextEncoder> {
        match &self.text {
            TextBackend::Toy(t) => Some(t),
            TextBackend::External(_) => None,
        }
    }

    pub(crate) fn replace_toy_text(&mut self, enc: ToyTextEncoder) -> Result<()> {
        self.text = TextBackend::Toy(Arc::new(enc));
        self.refresh_prompt_features()
    }

    pub fn text_encoder(&self) -> &dyn TextEncoder {
        self.text.encoder()
    }

    pub fn fake_prompt_features(&self) -> &Mat {
        &self.fake_features
    }

    pub fn class_prompt_features(&self) -> &Mat {
        &self.class_features
    }

    pub fn kappa(&self) -> f64 {
        let (lo, hi) = self.config.kappa_range;
        self.params.get(self.ids.kappa).item().clamp(lo, hi)
    }

    pub fn mfie(&self) -> &MfieHead {
        &self.ids.mfie
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let (h, w) = self.config.image_size;
        if image.height != h || image.width != w || image.channels != 3 {
            return Err(Error::shape(format!(
                "model expects {h}x{w}x3 images, got {:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    // ---- graph builders ----

    /// `(N+1) × d_v` tokens: class token then patches, plus positions.
    pub fn embed_patches_graph(&self, g: &mut Graph, image: &Image) -> Result<Var> {
        self.check_image(image)?;
        let patches = match (&self.ids.patch_embed, &self.stem) {
            (Some(lin), _) => {
                let mut x = patchify(image, self.config.patch_size)?;
                let (mean, std) = (self.config.pixel_mean, self.config.pixel_std);
                for row in 0..x.rows {
                    for (k, v) in x.row_mut(row).iter_mut().enumerate() {
                        *v = (*v - mean[k % 3]) / std[k % 3];
                    }
                }
                let x = g.constant(x);
                lin.forward(g, x)
            }
            (None, Some(stem)) => {
                let t = stem.embed(image)?;
                if t.shape() != (self.config.num_patches(), self.config.d_v) {
                    return Err(Error::shape(format!("stem returned {:?} tokens", t.shape())));
                }
                g.constant(t)
            }
            (None, None) => unreachable!("detector without a patch stem"),
        };
        let cls = g.param(self.ids.cls_token);
        let tokens = g.concat_rows(&[cls, patches]);
        let pos = g.param(self.ids.pos_embed);
        Ok(g.add(tokens, pos))
    }

    /// `MLP(LN(F_t))` for a `1 × d_t` text feature.
    pub fn mip_graph(&self, g: &mut Graph, text: Var) -> Var {
        let h = self.ids.mip_ln.forward(g, text);
        let h = self.ids.mip_fc1.forward(g, h);
        let h = g.gelu(h);
        self.ids.mip_fc2.forward(g, h)
    }

    /// Runs the transformer over `[tokens; text]`.
    ///
    /// Returns `(cls, penultimate patches, text token out)`. With
    /// `block_text` the text token is hidden from every other token.
    pub fn fuse_and_encode_graph(&self, g: &mut Graph, tokens: Var, text: Var, block_text: bool) -> Result<(Var, Var, Var)> {
        let d = self.config.d_v;
        if g.value(tokens).cols != d || g.value(text).cols != d {
            return Err(Error::shape(format!(
                "token widths {} and {} do not match d_v = {d}",
                g.value(tokens).cols,
                g.value(text).cols
            )));
        }
        let n1 = g.value(tokens).rows;
        let mut x = g.concat_rows(&[tokens, text]);
        let blocked = block_text.then_some(n1);
        let depth = self.ids.blocks.len();
        let mut penultimate = x;
        for (i, b) in self.ids.blocks.iter().enumerate() {
            if i + 1 == depth {
                penultimate = x;
            }
            x = b.forward(g, x, blocked);
        }
        let patches = g.slice_rows(penultimate, 1, n1);
        let cls = g.slice_rows(x, 0, 1);
        let cls = self.ids.ln_post.forward(g, cls);
        let text_out = g.slice_rows(x, n1, n1 + 1);
        Ok((cls, patches, text_out))
    }

    pub fn forward_graph(&self, g: &mut Graph, image: &Image, prompt: usize, block_text: bool) -> Result<ForwardVars> {
        if prompt >= self.class_features.rows {
            return Err(Error::invalid(format!("prompt index {prompt} out of range")));
        }
        let tokens = self.embed_patches_graph(g, image)?;
        let ft = g.constant(Mat::row_vector(self.class_features.row(prompt).to_vec()));
        let text = self.mip_graph(g, ft);
        let (cls, patches, text_out) = self.fuse_and_encode_graph(g, tokens, text, block_text)?;
        let z = self.ids.head.forward(g, cls);
        let projected = self.ids.proj.forward(g, cls);
        let s = g.cosine_mean(projected, &self.fake_features)?;
        let (lo, hi) = self.config.kappa_range;
        let kappa = g.param(self.ids.kappa);
        let kappa = g.clamp(kappa, lo, hi);
        let ks = g.scalar_mul(kappa, s);
        let sim_prob = g.sigmoid(ks);
        let p_cls = g.sigmoid(z);
        let y_hat = g.combine(&[(p_cls, 0.5), (sim_prob, 0.5)]);
        Ok(ForwardVars {
            cls,
            patches,
            text_out,
            z,
            s,
            sim_prob,
            y_hat,
        })
    }

    fn output_from(&self, g: &Graph, v: &ForwardVars) -> Result<ModelOutput> {
        let out = ModelOutput {
            z_cls: g.value(v.z).item(),
            s: g.value(v.s).item(),
            fused_prob: g.value(v.y_hat).item(),
            features: VisualFeatures {
                cls: g.value(v.cls).data.clone(),
                patches: g.value(v.patches).clone(),
                text_token_out: g.value(v.text_out).data.clone(),
            },
        };
        if !(out.z_cls.is_finite() && out.fused_prob.is_finite() && out.features.cls.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("model output".into()));
        }
        Ok(out)
    }

    // ---- plain evaluation ----

    pub fn forward(&self, image: &Image, prompt: usize) -> Result<ModelOutput> {
        self.forward_opts(image, prompt, false)
    }

    /// Forward pass; `block_text` hides the text token from attention.
    pub fn forward_opts(&self, image: &Image, prompt: usize, block_text: bool) -> Result<ModelOutput> {
        let mut g = Graph::new(&self.params);
        let v = self.forward_graph(&mut g, image, prompt, block_text)?;
        self.output_from(&g, &v)
    }

    /// Inference with the `Unknown` class prompt.
    pub fn predict(&self, image: &Image) -> Result<ModelOutput> {
        self.forward(image, self.prompts.unknown_index())
    }

    /// Inference plus both intensity-head outputs.
    pub fn predict_with_maps(&self, image: &Image) -> Result<(ModelOutput, IntensityPrediction, WeightPrediction)> {
        let mut g = Graph::new(&self.params);
        let v = self.forward_graph(&mut g, image, self.prompts.unknown_index(), false)?;
        let out = self.output_from(&g, &v)?;
        let dec = self.ids.mfie.decode_features(&mut g, v.patches, self.config.grid())?;
        let iv = self.ids.mfie.predict_intensity(&mut g, dec, v.cls);
        let a = self.ids.mfie.predict_blend_weights(&mut g, v.cls);
        let pred = MfieHead::intensity_prediction(&g, &iv, self.config.decoder_grid());
        let w = WeightPrediction {
            alpha_hat: g.value(a).data.clone(),
        };
        Ok((out, pred, w))
    }

    pub fn embed_patches(&self, image: &Image) -> Result<Mat> {
        let mut g = Graph::new(&self.params);
        let t = self.embed_patches_graph(&mut g, image)?;
        Ok(g.value(t).clone())
    }

    pub fn encode_text(&self, prompt: &str) -> Result<Vec<f64>> {
        self.text.encoder().encode(prompt)
    }

    pub fn mip_project(&self, text_feature: &[f64]) -> Result<Vec<f64>> {
        if text_feature.len() != self.config.d_t {
            return Err(Error::shape(format!("text feature has width {}", text_feature.len())));
        }
        if text_feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("text feature".into()));
        }
        let mut g = Graph::new(&self.params);
        let x = g.constant(Mat::row_vector(text_feature.to_vec()));
        let y = self.mip_graph(&mut g, x);
        Ok(g.value(y).data.clone())
    }

    /// Gradient of `Σ_k w_k · MIP(F_t)_k` with respect to `F_t`.
    pub fn mip_input_gradient(&self, text_feature: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let x = g.constant(Mat::row_vector(text_feature.to_vec()));
        let y = self.mip_graph(&mut g, x);
        let wv = g.constant(Mat::row_vector(w.to_vec()));
        let root = g.matmul_nt(y, wv);
        let (_, inputs) = g.backward_with_inputs(root, &[x]);
        Ok(inputs[0].data.clone())
    }

    /// Encodes precomputed tokens with a projected text token.
    pub fn fuse_and_encode(&self, tokens: &Mat, projected_text: &[f64], block_text: bool) -> Result<VisualFeatures> {
        let mut g = Graph::new(&self.params);
        let t = g.constant(tokens.clone());
        let x = g.constant(Mat::row_vector(projected_text.to_vec()));
        let (cls, patches, text_out) = self.fuse_and_encode_graph(&mut g, t, x, block_text)?;
        Ok(VisualFeatures {
            cls: g.value(cls).data.clone(),
            patches: g.value(patches).clone(),
            text_token_out: g.value(text_out).data.clone(),
        })
    }

    pub fn classify(&self, cls: &[f64]) -> Result<f64> {
        if cls.len() != self.config.d_v || cls.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("class feature must be finite with width d_v"));
        }
        let mut g = Graph::new(&self.params);
        let x = g.constant(Mat::row_vector(cls.to_vec()));
        let z = self.ids.head.forward(&mut g, x);
        Ok(g.value(z).item())
    }

    /// `Proj(cls)`, length `d_t`.
    pub fn project(&self, cls: &[f64]) -> Vec<f64> {
        let w = self.params.get(self.ids.proj.weight);
        Mat::row_vector(cls.to_vec()).matmul(w).data
    }

    /// Mean cosine of `Proj(cls)` against the fake-prompt features.
    pub fn similarity_score(&self, cls: &[f64]) -> Result<f64> {
        crate::objectives::losses::mean_cosine(&self.project(cls), &self.fake_features)
    }

    // ---- training ----

    /// Whether the intensity head runs for these weights.
    pub fn uses_mfie(weights: &LossWeights) -> bool {
        weights.lambda_int > 0.0 || weights.lambda_wgt > 0.0
    }

    fn loss_graph(&self, g: &mut Graph, sample: &TrainSample, weights: &LossWeights) -> Result<(Var, LossBreakdown)> {
        let v = self.forward_graph(g, &sample.image, sample.prompt, false)?;
        let l_cls = g.bce(v.y_hat, sample.label)?;
        let l_sim = g.bce(v.sim_prob, sample.label)?;
        let mut terms = vec![(l_cls, weights.lambda_cls), (l_sim, weights.lambda_sim)];
        let mut b = LossBreakdown {
            l_cls: g.value(l_cls).item(),
            l_sim: g.value(l_sim).item(),
            ..LossBreakdown::default()
        };
        if Self::uses_mfie(weights) {
            let (gh, gw) = self.config.decoder_grid();
            if sample.intensity_target.shape() != (gh, gw) {
                return Err(Error::shape(format!(
                    "intensity target is {:?}, head predicts {gh}x{gw}",
                    sample.intensity_target.shape()
                )));
            }
            let dec = self.ids.mfie.decode_features(g, v.patches, self.config.grid())?;
            let iv = self.ids.mfie.predict_intensity(g, dec, v.cls);
            let target = Mat::from_vec(gh * gw, 1, sample.intensity_target.data.clone());
            let l_int = g.smooth_l1(iv.combined, &target)?;
            b.l_int = g.value(l_int).item();
            terms.push((l_int, weights.lambda_int));
            if let Some(alpha) = &sample.alpha {
                let a = self.ids.mfie.predict_blend_weights(g, v.cls);
                let l_wgt = g.kl(alpha, a)?;
                b.l_wgt = g.value(l_wgt).item();
                terms.push((l_wgt, weights.lambda_wgt));
            }
        }
        let root = g.combine(&terms);
        b.total = g.value(root).item();
        if !b.total.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        Ok((root, b))
    }

    pub fn sample_loss(&self, sample: &TrainSample, weights: &LossWeights) -> Result<LossBreakdown> {
        let mut g = Graph::new(&self.params);
        Ok(self.loss_graph(&mut g, sample, weights)?.1)
    }

    pub fn sample_loss_and_grads(&self, sample: &TrainSample, weights: &LossWeights) -> Result<(LossBreakdown, Grads)> {
        let mut g = Graph::new(&self.params);
        let (root, b) = self.loss_graph(&mut g, sample, weights)?;
        Ok((b, g.backward(root)))
    }

    /// Batch-mean loss and gradients; per-sample gradients are summed in
    /// index order so the result does not depend on the thread count.
    pub fn batch_loss_and_grads(&self, batch: &[TrainSample], weights: &LossWeights) -> Result<(LossBreakdown, Grads)> {
        use rayon::prelude::*;
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let per: Vec<(LossBreakdown, Grads)> = batch
            .par_iter()
            .map(|s| self.sample_loss_and_grads(s, weights))
            .collect::<Result<_>>()?;
        let mut grads = Grads::empty(self.params.len());
        let mut parts = Vec::with_capacity(per.len());
        for (b, g) in per {
            parts.push(b);
            grads.merge(g);
        }
        grads.scale(1.0 / batch.len() as f64);
        Ok((LossBreakdown::mean(&parts), grads))
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.id(name)
    }

    /// Rounds every parameter to `f32`, as a checkpoint round trip would.
    pub fn round_to_f32(&mut self) -> Result<()> {
        round_store(&mut self.params);
        if let Some(t) = self.toy_text() {
            let mut store = t.params().clone();
            round_store(&mut store);
            let tensors: Vec<(String, Mat)> = store.iter().map(|(_, n, m)| (n.to_string(), m.clone())).collect();
            let enc = ToyTextEncoder::from_tensors(&self.config, &tensors)?;
            self.replace_toy_text(enc)?;
        }
        Ok(())
    }
}

fn round_store(store: &mut ParamStore) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in &mut store.get_mut(id).data {
            *v = *v as f32 as f64;
        }
    }
}

impl PromptTable {
    pub fn standard_for(config: &ModelConfig) -> Self {
        PromptTable::standard(config.num_fake_prompts)
    }
}

#[cfg(test)]
mod tests;
