//! Parameter bundles for the layers shared by the visual and text encoders.

use rand::Rng;

use super::config::WeightInit;
use crate::autodiff::{BlockedKey, Graph, Var};
use crate::params::{trunc_normal, ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        init: WeightInit,
        rng: &mut R,
    ) -> Self {
        let weight = store.insert(format!("{name}.weight"), trunc_normal(rng, d_in, d_out, init.std(d_in)));
        let bias = bias.then(|| store.insert(format!("{name}.bias"), Mat::zeros(1, d_out)));
        Linear { weight, bias }
    }

    /// Zero weight and bias.
    pub fn register_zero(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        let weight = store.insert(format!("{name}.weight"), Mat::zeros(d_in, d_out));
        let bias = Some(store.insert(format!("{name}.bias"), Mat::zeros(1, d_out)));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn register(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: store.insert(format!("{name}.gain"), Mat::filled(1, d, 1.0)),
            bias: store.insert(format!("{name}.bias"), Mat::zeros(1, d)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, gain, bias)
    }
}

/// Pre-norm transformer block: `x + Attn(LN(x))`, then `x + MLP(LN(x))`.
///
/// Keys carry no bias: softmax is invariant to it, so its gradient is
/// identically zero.
#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub q_bias: ParamId,
    pub v_bias: ParamId,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub heads: usize,
}

impl Block {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        mlp_hidden: usize,
        init: WeightInit,
        rng: &mut R,
    ) -> Self {
        Block {
            ln1: LayerNorm::register(store, &format!("{name}.ln1"), d),
            qkv: Linear::register(store, &format!("{name}.attn.qkv"), d, 3 * d, false, init, rng),
            q_bias: store.insert(format!("{name}.attn.q_bias"), Mat::zeros(1, d)),
            v_bias: store.insert(format!("{name}.attn.v_bias"), Mat::zeros(1, d)),
            proj: Linear::register(store, &format!("{name}.attn.proj"), d, d, true, init, rng),
            ln2: LayerNorm::register(store, &format!("{name}.ln2"), d),
            fc1: Linear::register(store, &format!("{name}.mlp.fc1"), d, mlp_hidden, true, init, rng),
            fc2: Linear::register(store, &format!("{name}.mlp.fc2"), mlp_hidden, d, true, init, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, blocked: BlockedKey) -> Var {
        let h = self.ln1.forward(g, x);
        let qkv = self.qkv.forward(g, h);
        let d = g.value(h).cols;
        let (qb, vb) = (g.param(self.q_bias), g.param(self.v_bias));
        let place = |g: &mut Graph, offset: usize| {
            let mut e = Mat::zeros(d, 3 * d);
            for i in 0..d {
                e.set(i, offset + i, 1.0);
            }
            g.constant(e)
        };
        let (eq, ev) = (place(g, 0), place(g, 2 * d));
        let qb = g.matmul(qb, eq);
        let vb = g.matmul(vb, ev);
        let bias = g.add(qb, vb);
        let qkv = g.add_row(qkv, bias);
        let a = g.attention(qkv, self.heads, blocked);
        let a = self.proj.forward(g, a);
        let x = g.add(x, a);
        let h = self.ln2.forward(g, x);
        let h = self.fc1.forward(g, h);
        let h = g.gelu(h);
        let h = self.fc2.forward(g, h);
        g.add(x, h)
    }
}
