//! Parameterised building blocks shared by the encoders.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, ParamId, ParamStore, Result, Tensor};

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect()
}

/// Affine map `x·W + b` over the rows of `x`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), &[d_in, d_out], glorot(rng, d_in, d_out));
        let b = store.add(format!("{name}.b"), &[d_out], vec![0.0; d_out]);
        Linear { w, b, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Tensor) -> Result<Tensor> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let h = g.matmul(x, w)?;
        g.add(h, b)
    }
}

/// Two linear layers with a relu between them.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Mlp2 {
            first: Linear::new(store, rng, &format!("{name}.0"), d_in, d_hidden),
            second: Linear::new(store, rng, &format!("{name}.1"), d_hidden, d_out),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Tensor) -> Result<Tensor> {
        let h = self.first.forward(g, store, x)?;
        let h = g.relu(h);
        self.second.forward(g, store, h)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), &[d], vec![1.0; d]),
            beta: store.add(format!("{name}.beta"), &[d], vec![0.0; d]),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Tensor) -> Result<Tensor> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, Self::EPS)
    }
}

/// Embedding table initialised uniformly with unit expected row norm.
pub fn embedding_table(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, rows: usize, d: usize) -> ParamId {
    let a = (3.0 / d as f64).sqrt();
    store.add(name, &[rows, d], (0..rows * d).map(|_| rng.gen_range(-a..a)).collect())
}

/// Sinusoidal position table `[len×d]`: `sin` on even, `cos` on odd columns.
pub fn sinusoidal_encoding(len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * d];
    for pos in 0..len {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            pe[pos * d + i] = angle.sin();
            if i + 1 < d {
                pe[pos * d + i + 1] = angle.cos();
            }
        }
    }
    pe
}

/// Transformer encoder layer: multi-head self-attention and a feed-forward
/// block, each wrapped in a residual connection and layer norm.
#[derive(Debug, Clone, Copy)]
pub struct EncoderLayer {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ff: Mlp2,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub heads: usize,
    pub pre_norm: bool,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize, d_ff: usize, pre_norm: bool) -> Self {
        assert!(heads > 0 && d.is_multiple_of(heads), "d must be divisible by heads");
        EncoderLayer {
            q: Linear::new(store, rng, &format!("{name}.q"), d, d),
            k: Linear::new(store, rng, &format!("{name}.k"), d, d),
            v: Linear::new(store, rng, &format!("{name}.v"), d, d),
            o: Linear::new(store, rng, &format!("{name}.o"), d, d),
            ff: Mlp2::new(store, rng, &format!("{name}.ff"), d, d_ff, d),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            heads,
            pre_norm,
        }
    }

    /// Splits `[B·L×d]` into `[B·H, L, d/H]`.
    fn split_heads(&self, g: &mut Graph, x: Tensor, batch: usize, len: usize, d: usize) -> Result<Tensor> {
        let dh = d / self.heads;
        let x = g.reshape(x, &[batch, len, self.heads, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[batch * self.heads, len, dh])
    }

    /// Scaled dot-product attention. `allow` is `[B×L×L]` (query, key) and
    /// is shared by all heads; every query row needs one permitted key.
    /// Returns the attention output and the attention weights
    /// `[B·H×L×L]`.
    pub fn attention(&self, g: &mut Graph, store: &ParamStore, x: Tensor, batch: usize, len: usize, allow: &[bool]) -> Result<(Tensor, Tensor)> {
        let d = g.shape(x)[1];
        let dh = d / self.heads;
        let q = self.q.forward(g, store, x)?;
        let k = self.k.forward(g, store, x)?;
        let v = self.v.forward(g, store, x)?;
        let q = self.split_heads(g, q, batch, len, d)?;
        let k = self.split_heads(g, k, batch, len, d)?;
        let v = self.split_heads(g, v, batch, len, d)?;
        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let mut mask = Vec::with_capacity(batch * self.heads * len * len);
        for b in 0..batch {
            let block = &allow[b * len * len..(b + 1) * len * len];
            for _ in 0..self.heads {
                mask.extend_from_slice(block);
            }
        }
        let weights = g.softmax(scores, Some(&mask))?;
        let ctx = g.bmm(weights, v, false)?;
        let ctx = g.reshape(ctx, &[batch, self.heads, len, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[batch * len, d])?;
        Ok((self.o.forward(g, store, ctx)?, weights))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Tensor, batch: usize, len: usize, allow: &[bool]) -> Result<Tensor> {
        if self.pre_norm {
            let h = self.norm1.forward(g, store, x)?;
            let (a, _) = self.attention(g, store, h, batch, len, allow)?;
            let x = g.add(x, a)?;
            let h = self.norm2.forward(g, store, x)?;
            let f = self.ff.forward(g, store, h)?;
            g.add(x, f)
        } else {
            let (a, _) = self.attention(g, store, x, batch, len, allow)?;
            let h = g.add(x, a)?;
            let h = self.norm1.forward(g, store, h)?;
            let f = self.ff.forward(g, store, h)?;
            let out = g.add(h, f)?;
            self.norm2.forward(g, store, out)
        }
    }
}
