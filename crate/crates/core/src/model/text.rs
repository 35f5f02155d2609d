//! Frozen text encoders: the interface and a self-contained toy encoder.
//!
//! The toy tokenizer lowercases, splits on whitespace, strips
//! non-alphanumerics, and hashes each word with 64-bit FNV-1a modulo the
//! vocabulary size. At most `max_tokens` tokens are kept. Features are the
//! mean over tokens of a small pre-norm transformer's final layer.

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::params::{trunc_normal, ParamId, ParamStore};
use crate::seed;
use crate::tensor::Mat;

use super::config::ModelConfig;
use super::layers::{Block, LayerNorm};

/// Anything that turns a prompt into a fixed-width feature vector.
pub trait TextEncoder: Send + Sync {
    fn width(&self) -> usize;
    fn encode(&self, prompt: &str) -> Result<Vec<f64>>;
}

pub fn tokenize(prompt: &str, vocab_size: usize, max_tokens: usize) -> Result<Vec<usize>> {
    let tokens: Vec<usize> = prompt
        .to_lowercase()
        .split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).collect::<String>())
        .filter(|w| !w.is_empty())
        .take(max_tokens)
        .map(|w| (seed::fnv1a(w.as_bytes()) % vocab_size as u64) as usize)
        .collect();
    if tokens.is_empty() {
        return Err(Error::invalid(format!("prompt {prompt:?} has no words")));
    }
    Ok(tokens)
}

pub struct ToyTextEncoder {
    store: ParamStore,
    token_embed: ParamId,
    pos_embed: ParamId,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
    vocab_size: usize,
    max_tokens: usize,
    width: usize,
}

impl ToyTextEncoder {
    /// Parameter names, all under `text.`.
    fn build(config: &ModelConfig, mut store: ParamStore, seed: u64) -> Self {
        let mut rng = seed::rng_for(seed, &[0x7e47]);
        let (d, std) = (config.d_t, config.init_std);
        let token_embed = store.insert("text.token_embed", trunc_normal(&mut rng, config.vocab_size, d, std));
        let pos_embed = store.insert("text.pos_embed", trunc_normal(&mut rng, config.max_tokens, d, std));
        let blocks = (0..config.text_depth)
            .map(|i| {
                Block::register(
                    &mut store,
                    &format!("text.blocks.{i}"),
                    d,
                    config.text_heads,
                    config.mlp_ratio * d,
                    config.weight_init,
                    &mut rng,
                )
            })
            .collect();
        let ln_final = LayerNorm::register(&mut store, "text.ln_final", d);
        ToyTextEncoder {
            store,
            token_embed,
            pos_embed,
            blocks,
            ln_final,
            vocab_size: config.vocab_size,
            max_tokens: config.max_tokens,
            width: d,
        }
    }

    pub fn new(config: &ModelConfig, seed: u64) -> Self {
        Self::build(config, ParamStore::new(), seed)
    }

    /// Rebuilds the encoder and overwrites its weights with `tensors`.
    pub fn from_tensors(config: &ModelConfig, tensors: &[(String, Mat)]) -> Result<Self> {
        let mut enc = Self::build(config, ParamStore::new(), 0);
        for (name, m) in tensors {
            let id = enc
                .store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected text tensor {name}")))?;
            if enc.store.get(id).shape() != m.shape() {
                return Err(Error::Checkpoint(format!("text tensor {name} has shape {:?}", m.shape())));
            }
            *enc.store.get_mut(id) = m.clone();
        }
        if tensors.len() != enc.store.len() {
            return Err(Error::Checkpoint(format!(
                "text encoder needs {} tensors, checkpoint has {}",
                enc.store.len(),
                tensors.len()
            )));
        }
        Ok(enc)
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }
}

impl TextEncoder for ToyTextEncoder {
    fn width(&self) -> usize {
        self.width
    }

    fn encode(&self, prompt: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(prompt, self.vocab_size, self.max_tokens)?;
        let table = self.store.get(self.token_embed);
        let pos = self.store.get(self.pos_embed);
        let mut x = Mat::zeros(tokens.len(), self.width);
        for (r, &t) in tokens.iter().enumerate() {
            for (c, o) in x.row_mut(r).iter_mut().enumerate() {
                *o = table.get(t, c) + pos.get(r, c);
            }
        }
        let mut g = Graph::new(&self.store);
        let mut h = g.constant(x);
        for b in &self.blocks {
            h = b.forward(&mut g, h, None);
        }
        let h = self.ln_final.forward(&mut g, h);
        let hv = g.value(h);
        let mut out = vec![0.0; self.width];
        for r in 0..hv.rows {
            for (o, v) in out.iter_mut().zip(hv.row(r)) {
                *o += v;
            }
        }
        let n = hv.rows as f64;
        out.iter_mut().for_each(|v| *v /= n);
        Ok(out)
    }
}
