//! Forward primitives and their vector-Jacobian products.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mismatch, Graph, Node, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Sum,
    Max,
    #[default]
    Mean,
}

impl std::str::FromStr for PoolMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sum" => Ok(PoolMode::Sum),
            "max" => Ok(PoolMode::Max),
            "mean" => Ok(PoolMode::Mean),
            other => Err(format!("unknown pooling `{other}`")),
        }
    }
}

pub(super) enum Op {
    Leaf,
    MatMul(usize, usize),
    BatchMatMul { a: usize, b: usize, trans_b: bool },
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    RowScale { x: usize, coef: Vec<f64> },
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    LogSigmoid(usize),
    Softmax(usize),
    LogSoftmax { x: usize, mask: Option<Vec<bool>> },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Embedding { table: usize, ids: Vec<usize> },
    Concat { inputs: Vec<usize>, axis_lens: Vec<usize>, outer: usize, inner: usize },
    SegmentPool { x: usize, segments: Vec<Option<usize>>, mode: PoolMode, counts: Vec<usize>, argmax: Vec<usize> },
    ScatterAdd { x: usize, targets: Vec<usize> },
    GatherRows { x: usize, idx: Vec<Option<usize>> },
    Reshape(usize),
    Permute { x: usize, axes: Vec<usize> },
    Dropout { x: usize, scale: Vec<f64> },
    Take { x: usize, idx: Vec<usize> },
    Sum(usize),
    Mean(usize),
    Bce { pred: usize, labels: Vec<f64>, eps: f64 },
    BceLogits { logits: usize, labels: Vec<f64> },
    CrossEntropy { logits: usize, labels: Vec<usize>, probs: Vec<f64> },
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

/// Strides of a row-major shape.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[n×k]^T
fn gemm_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// out[k×n] += a[m×k]^T · b[m×n]
fn gemm_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Row-wise (masked) softmax over the last axis.
fn softmax_rows(x: &[f64], width: usize, mask: Option<&[bool]>, log: bool) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    for (r, row) in x.chunks(width).enumerate() {
        let base = r * width;
        let allowed = |j: usize| mask.is_none_or(|m| m[base + j]);
        let mut mx = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if allowed(j) && v > mx {
                mx = v;
            }
        }
        if mx == f64::NEG_INFINITY {
            return Err(TensorError::AllMasked(if log { "log_softmax" } else { "softmax" }));
        }
        let mut z = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if allowed(j) {
                z += (v - mx).exp();
            }
        }
        let lz = z.ln();
        for (j, &v) in row.iter().enumerate() {
            out[base + j] = match (allowed(j), log) {
                (true, true) => v - mx - lz,
                (true, false) => (v - mx).exp() / z,
                (false, true) => f64::NEG_INFINITY,
                (false, false) => 0.0,
            };
        }
    }
    Ok(out)
}

impl Graph {
    fn rg(&self, ts: &[Tensor]) -> bool {
        ts.iter().any(|t| self.nodes[t.0].requires_grad)
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(self.value(a), self.value(b), m, k, n, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a.0, b.0), rg))
    }

    /// Batched product over the leading axis: `[B×m×k]·[B×k×n]`, or with
    /// `trans_b` `[B×m×k]·[B×n×k]^T`.
    pub fn bmm(&mut self, a: Tensor, b: Tensor, trans_b: bool) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == if trans_b { sb[2] } else { sb[1] };
        if !ok {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let (bsz, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let mut out = vec![0.0; bsz * m * n];
        let (av, bv) = (self.value(a), self.value(b));
        for i in 0..bsz {
            let ab = &av[i * m * k..(i + 1) * m * k];
            let bb = &bv[i * k * n..(i + 1) * k * n];
            let ob = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                gemm_bt(ab, bb, m, k, n, ob);
            } else {
                gemm(ab, bb, m, k, n, ob);
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![bsz, m, n], out, Op::BatchMatMul { a: a.0, b: b.0, trans_b }, rg))
    }

    fn check_broadcast(&self, op: &'static str, a: Tensor, b: Tensor) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    /// Elementwise sum; `b` may broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.check_broadcast("add", a, b)?;
        let bv = self.value(b);
        let out: Vec<f64> = self.value(a).iter().enumerate().map(|(i, x)| x + bv[i % bv.len()]).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a.0, b.0), rg))
    }

    /// Elementwise product; `b` may broadcast over the leading axes of `a`.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.check_broadcast("mul", a, b)?;
        let bv = self.value(b);
        let out: Vec<f64> = self.value(a).iter().enumerate().map(|(i, x)| x * bv[i % bv.len()]).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Tensor, c: f64) -> Tensor {
        let out = self.value(a).iter().map(|x| x * c).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a.0, c), rg)
    }

    /// Multiplies row `r` of `x[N×d]` by the constant `coef[r]`.
    pub fn row_scale(&mut self, x: Tensor, coef: &[f64]) -> Result<Tensor> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != coef.len() {
            return Err(mismatch("row_scale", ("rows", coef.len()), &shape));
        }
        let d = shape[1];
        let out = self.value(x).iter().enumerate().map(|(k, v)| v * coef[k / d.max(1)]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::RowScale { x: x.0, coef: coef.to_vec() }, rg))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    fn unary(&mut self, a: Tensor, f: impl Fn(f64) -> f64, op: Op) -> Tensor {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), out, op, rg)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Tensor) -> Tensor {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    /// ln σ(x), computed stably.
    pub fn log_sigmoid(&mut self, a: Tensor) -> Tensor {
        self.unary(a, |x| -softplus(-x), Op::LogSigmoid(a.0))
    }

    /// Softmax over the last axis. Masked positions (`false`) get exactly
    /// zero probability and take no part in the normalisation.
    pub fn softmax(&mut self, x: Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
        let shape = self.shape(x).to_vec();
        if let Some(m) = mask {
            if m.len() != numel(&shape) {
                return Err(mismatch("softmax mask", numel(&shape), m.len()));
            }
        }
        let out = softmax_rows(self.value(x), last_dim(&shape), mask, false)?;
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Softmax(x.0), rg))
    }

    /// Log-softmax over the last axis; masked positions hold `-inf` and
    /// receive no gradient.
    pub fn log_softmax(&mut self, x: Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
        let shape = self.shape(x).to_vec();
        if let Some(m) = mask {
            if m.len() != numel(&shape) {
                return Err(mismatch("log_softmax mask", numel(&shape), m.len()));
            }
        }
        let out = softmax_rows(self.value(x), last_dim(&shape), mask, true)?;
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::LogSoftmax { x: x.0, mask: mask.map(<[bool]>::to_vec) }, rg))
    }

    /// Normalises over the last axis, then applies `gamma`/`beta` of that
    /// width.
    pub fn layer_norm(&mut self, x: Tensor, gamma: Tensor, beta: Tensor, eps: f64) -> Result<Tensor> {
        let shape = self.shape(x).to_vec();
        let d = last_dim(&shape);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(mismatch("layer_norm", [d], self.shape(gamma)));
        }
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let xv = self.value(x);
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(shape, out, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std }, rg))
    }

    /// Rows of `table[V×d]` selected by `ids`, giving `[L×d]`.
    pub fn embedding(&mut self, table: Tensor, ids: &[usize]) -> Result<Tensor> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(mismatch("embedding", "[V, d]", shape));
        }
        let (v, d) = (shape[0], shape[1]);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= v {
                return Err(TensorError::IndexOutOfRange { index: i, len: v });
            }
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(vec![ids.len(), d], out, Op::Embedding { table: table.0, ids: ids.to_vec() }, rg))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = self.shape(*inputs.first().ok_or_else(|| mismatch("concat", "≥1 input", 0))?).to_vec();
        if axis >= first.len() {
            return Err(mismatch("concat axis", first.len(), axis));
        }
        let mut axis_lens = Vec::with_capacity(inputs.len());
        for &t in inputs {
            let s = self.shape(t);
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &e)| i != axis && e != first[i]) {
                return Err(mismatch("concat", &first, s));
            }
            axis_lens.push(s[axis]);
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let total: usize = axis_lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (k, &t) in inputs.iter().enumerate() {
                let chunk = axis_lens[k] * inner;
                out.extend_from_slice(&self.value(t)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.rg(inputs);
        let inputs = inputs.iter().map(|t| t.0).collect();
        Ok(self.push(shape, out, Op::Concat { inputs, axis_lens, outer, inner }, rg))
    }

    /// Pools the rows of `x[N×d]` into `n_segments` rows. Rows whose segment
    /// is `None` are ignored. Max pooling routes the gradient to the first
    /// maximal row.
    pub fn segment_pool(&mut self, x: Tensor, segments: &[Option<usize>], n_segments: usize, mode: PoolMode) -> Result<Tensor> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != segments.len() {
            return Err(mismatch("pool", ("rows", segments.len()), &shape));
        }
        let d = shape[1];
        let mut counts = vec![0usize; n_segments];
        for s in segments.iter().flatten() {
            if *s >= n_segments {
                return Err(TensorError::IndexOutOfRange { index: *s, len: n_segments });
            }
            counts[*s] += 1;
        }
        if counts.contains(&0) {
            return Err(TensorError::AllMasked("pool"));
        }
        let xv = self.value(x);
        let mut out = vec![if mode == PoolMode::Max { f64::NEG_INFINITY } else { 0.0 }; n_segments * d];
        let mut argmax = vec![usize::MAX; if mode == PoolMode::Max { n_segments * d } else { 0 }];
        for (r, s) in segments.iter().enumerate() {
            let Some(s) = *s else { continue };
            for j in 0..d {
                let v = xv[r * d + j];
                let o = &mut out[s * d + j];
                match mode {
                    PoolMode::Sum | PoolMode::Mean => *o += v,
                    PoolMode::Max => {
                        if v > *o {
                            *o = v;
                            argmax[s * d + j] = r;
                        }
                    }
                }
            }
        }
        if mode == PoolMode::Mean {
            for s in 0..n_segments {
                for j in 0..d {
                    out[s * d + j] /= counts[s] as f64;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![n_segments, d], out, Op::SegmentPool { x: x.0, segments: segments.to_vec(), mode, counts, argmax }, rg))
    }

    /// Pools the unmasked rows of `x[L×d]` into `[d]`.
    pub fn pool(&mut self, x: Tensor, pad_mask: Option<&[bool]>, mode: PoolMode) -> Result<Tensor> {
        let rows = self.shape(x).first().copied().unwrap_or(0);
        let segments: Vec<Option<usize>> = match pad_mask {
            Some(m) => m.iter().map(|&keep| keep.then_some(0)).collect(),
            None => vec![Some(0); rows],
        };
        let d = last_dim(self.shape(x));
        let pooled = self.segment_pool(x, &segments, 1, mode)?;
        self.reshape(pooled, &[d])
    }

    /// Sums `messages[E×d]` into `n` rows by target index.
    pub fn scatter_add(&mut self, messages: Tensor, targets: &[usize], n: usize) -> Result<Tensor> {
        let shape = self.shape(messages).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(mismatch("scatter_add", ("rows", targets.len()), &shape));
        }
        let d = shape[1];
        let mv = self.value(messages);
        let mut out = vec![0.0; n * d];
        for (e, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(TensorError::IndexOutOfRange { index: t, len: n });
            }
            for j in 0..d {
                out[t * d + j] += mv[e * d + j];
            }
        }
        let rg = self.rg(&[messages]);
        Ok(self.push(vec![n, d], out, Op::ScatterAdd { x: messages.0, targets: targets.to_vec() }, rg))
    }

    /// Selects rows of `x[N×d]`; `None` yields a zero row.
    pub fn gather_rows(&mut self, x: Tensor, idx: &[Option<usize>]) -> Result<Tensor> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(mismatch("gather_rows", "[N, d]", &shape));
        }
        let (n, d) = (shape[0], shape[1]);
        let xv = self.value(x);
        let mut out = vec![0.0; idx.len() * d];
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                if i >= n {
                    return Err(TensorError::IndexOutOfRange { index: i, len: n });
                }
                out[r * d..(r + 1) * d].copy_from_slice(&xv[i * d..(i + 1) * d]);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![idx.len(), d], out, Op::GatherRows { x: x.0, idx: idx.to_vec() }, rg))
    }

    pub fn reshape(&mut self, x: Tensor, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.value(x).len() {
            return Err(mismatch("reshape", self.shape(x), shape));
        }
        let v = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape.to_vec(), v, Op::Reshape(x.0), rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Tensor, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(mismatch("permute", &shape, axes));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out = permute_values(self.value(x), &shape, axes);
        let rg = self.rg(&[x]);
        Ok(self.push(out_shape, out, Op::Permute { x: x.0, axes: axes.to_vec() }, rg))
    }

    /// Inverted dropout driven by `seed`; the identity outside training or
    /// when `p == 0`.
    pub fn dropout(&mut self, x: Tensor, p: f64, seed: u64) -> Tensor {
        if !self.training || p <= 0.0 {
            return x;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 - p;
        let scale: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out = self.value(x).iter().zip(&scale).map(|(a, s)| a * s).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Dropout { x: x.0, scale }, rg)
    }

    /// Flat elements of `x` at `idx`, as a vector.
    pub fn take(&mut self, x: Tensor, idx: &[usize]) -> Result<Tensor> {
        let xv = self.value(x);
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            out.push(*xv.get(i).ok_or(TensorError::IndexOutOfRange { index: i, len: xv.len() })?);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![idx.len()], out, Op::Take { x: x.0, idx: idx.to_vec() }, rg))
    }

    pub fn sum(&mut self, x: Tensor) -> Tensor {
        let s = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(vec![], vec![s], Op::Sum(x.0), rg)
    }

    pub fn mean(&mut self, x: Tensor) -> Tensor {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let rg = self.rg(&[x]);
        self.push(vec![], vec![s], Op::Mean(x.0), rg)
    }

    /// Mean binary cross entropy of probabilities clamped to `[eps, 1-eps]`.
    pub fn bce_loss(&mut self, pred: Tensor, labels: &[f64]) -> Result<Tensor> {
        const EPS: f64 = 1e-7;
        let pv = self.value(pred);
        if pv.len() != labels.len() || labels.is_empty() {
            return Err(mismatch("bce_loss", pv.len(), labels.len()));
        }
        let loss = pv
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = p.clamp(EPS, 1.0 - EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / labels.len() as f64;
        let rg = self.rg(&[pred]);
        Ok(self.push(vec![], vec![loss], Op::Bce { pred: pred.0, labels: labels.to_vec(), eps: EPS }, rg))
    }

    /// Mean binary cross entropy of `sigmoid(logits)`, without clamping.
    pub fn bce_with_logits(&mut self, logits: Tensor, labels: &[f64]) -> Result<Tensor> {
        let zv = self.value(logits);
        if zv.len() != labels.len() || labels.is_empty() {
            return Err(mismatch("bce_with_logits", zv.len(), labels.len()));
        }
        let loss = zv.iter().zip(labels).map(|(&z, &y)| softplus(z) - y * z).sum::<f64>() / labels.len() as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(vec![], vec![loss], Op::BceLogits { logits: logits.0, labels: labels.to_vec() }, rg))
    }

    /// Mean of `-log softmax(row)[label]` over the rows of `logits[B×C]`
    /// (a 1-D input is a single row).
    pub fn cross_entropy(&mut self, logits: Tensor, labels: &[usize]) -> Result<Tensor> {
        let shape = self.shape(logits).to_vec();
        let c = last_dim(&shape);
        let rows = numel(&shape) / c.max(1);
        if rows != labels.len() || shape.is_empty() {
            return Err(mismatch("cross_entropy", rows, labels.len()));
        }
        if c < 2 {
            return Err(mismatch("cross_entropy classes", "≥2", c));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::LabelOutOfRange { label, classes: c });
        }
        let logp = softmax_rows(self.value(logits), c, None, true)?;
        let loss = -labels.iter().enumerate().map(|(r, &l)| logp[r * c + l]).sum::<f64>() / rows as f64;
        let probs = logp.iter().map(|l| l.exp()).collect();
        let rg = self.rg(&[logits]);
        Ok(self.push(vec![], vec![loss], Op::CrossEntropy { logits: logits.0, labels: labels.to_vec(), probs }, rg))
    }
}

fn permute_values(v: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut out = vec![0.0; v.len()];
    let mut counter = vec![0usize; out_shape.len()];
    for o in out.iter_mut() {
        let src: usize = counter.iter().zip(axes).map(|(&c, &a)| c * in_strides[a]).sum();
        *o = v[src];
        for k in (0..counter.len()).rev() {
            counter[k] += 1;
            if counter[k] < out_shape[k] {
                break;
            }
            counter[k] = 0;
        }
    }
    out
}

/// Gradient contributions of node `i` to its inputs, given its output
/// gradient.
pub(super) fn backward(nodes: &[Node], i: usize, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
    let node = &nodes[i];
    let val = |k: usize| nodes[k].value.as_slice();
    let shape = |k: usize| nodes[k].shape.as_slice();
    let y = node.value.as_slice();
    match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let (m, k) = (shape(*a)[0], shape(*a)[1]);
            let n = shape(*b)[1];
            let mut ga = vec![0.0; m * k];
            gemm_bt(g, val(*b), m, n, k, &mut ga);
            let mut gb = vec![0.0; k * n];
            gemm_at(val(*a), g, m, k, n, &mut gb);
            vec![(*a, ga), (*b, gb)]
        }
        Op::BatchMatMul { a, b, trans_b } => {
            let sa = shape(*a);
            let (bsz, m, k) = (sa[0], sa[1], sa[2]);
            let n = node.shape[2];
            let (av, bv) = (val(*a), val(*b));
            let mut ga = vec![0.0; av.len()];
            let mut gb = vec![0.0; bv.len()];
            for t in 0..bsz {
                let gt = &g[t * m * n..(t + 1) * m * n];
                let at = &av[t * m * k..(t + 1) * m * k];
                let bt = &bv[t * k * n..(t + 1) * k * n];
                let gat = &mut ga[t * m * k..(t + 1) * m * k];
                let gbt = &mut gb[t * k * n..(t + 1) * k * n];
                if *trans_b {
                    // y = a·bᵀ, b is [n×k]: ga = g·b, gb = gᵀ·a
                    gemm(gt, bt, m, n, k, gat);
                    gemm_at(gt, at, m, n, k, gbt);
                } else {
                    gemm_bt(gt, bt, m, n, k, gat);
                    gemm_at(at, gt, m, k, n, gbt);
                }
            }
            vec![(*a, ga), (*b, gb)]
        }
        Op::Add(a, b) => {
            let nb = val(*b).len();
            let mut gb = vec![0.0; nb];
            for (j, gv) in g.iter().enumerate() {
                gb[j % nb] += gv;
            }
            vec![(*a, g.to_vec()), (*b, gb)]
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let nb = bv.len();
            let ga = g.iter().enumerate().map(|(j, gv)| gv * bv[j % nb]).collect();
            let mut gb = vec![0.0; nb];
            for (j, gv) in g.iter().enumerate() {
                gb[j % nb] += gv * av[j];
            }
            vec![(*a, ga), (*b, gb)]
        }
        Op::Scale(a, c) => vec![(*a, g.iter().map(|v| v * c).collect())],
        Op::RowScale { x, coef } => {
            let d = node.shape[1].max(1);
            vec![(*x, g.iter().enumerate().map(|(k, v)| v * coef[k / d]).collect())]
        }
        Op::Relu(a) => vec![(*a, g.iter().zip(val(*a)).map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 }).collect())],
        Op::Sigmoid(a) => vec![(*a, g.iter().zip(y).map(|(gv, s)| gv * s * (1.0 - s)).collect())],
        Op::Tanh(a) => vec![(*a, g.iter().zip(y).map(|(gv, t)| gv * (1.0 - t * t)).collect())],
        Op::LogSigmoid(a) => vec![(*a, g.iter().zip(val(*a)).map(|(gv, &x)| gv * sigmoid(-x)).collect())],
        Op::Softmax(x) => {
            let w = last_dim(&node.shape);
            let mut gx = vec![0.0; y.len()];
            for r in 0..y.len() / w {
                let ys = &y[r * w..(r + 1) * w];
                let gs = &g[r * w..(r + 1) * w];
                let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                for j in 0..w {
                    gx[r * w + j] = ys[j] * (gs[j] - dot);
                }
            }
            vec![(*x, gx)]
        }
        Op::LogSoftmax { x, mask } => {
            let w = last_dim(&node.shape);
            let mut gx = vec![0.0; y.len()];
            for r in 0..y.len() / w {
                let allowed = |j: usize| mask.as_ref().is_none_or(|m| m[r * w + j]);
                let gsum: f64 = (0..w).filter(|&j| allowed(j)).map(|j| g[r * w + j]).sum();
                for j in (0..w).filter(|&j| allowed(j)) {
                    gx[r * w + j] = g[r * w + j] - y[r * w + j].exp() * gsum;
                }
            }
            vec![(*x, gx)]
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let d = last_dim(&node.shape);
            let gv = val(*gamma);
            let mut gx = vec![0.0; y.len()];
            let mut gg = vec![0.0; d];
            let mut gb = vec![0.0; d];
            for r in 0..inv_std.len() {
                let mut sum_dh = 0.0;
                let mut sum_dh_h = 0.0;
                for j in 0..d {
                    let k = r * d + j;
                    gg[j] += g[k] * xhat[k];
                    gb[j] += g[k];
                    let dh = g[k] * gv[j];
                    sum_dh += dh;
                    sum_dh_h += dh * xhat[k];
                }
                for j in 0..d {
                    let k = r * d + j;
                    let dh = g[k] * gv[j];
                    gx[k] = inv_std[r] * (dh - sum_dh / d as f64 - xhat[k] * sum_dh_h / d as f64);
                }
            }
            vec![(*x, gx), (*gamma, gg), (*beta, gb)]
        }
        Op::Embedding { table, ids } => {
            let d = shape(*table)[1];
            let mut gt = vec![0.0; val(*table).len()];
            for (r, &id) in ids.iter().enumerate() {
                for j in 0..d {
                    gt[id * d + j] += g[r * d + j];
                }
            }
            vec![(*table, gt)]
        }
        Op::Concat { inputs, axis_lens, outer, inner } => {
            let total: usize = axis_lens.iter().sum();
            let mut offset = 0;
            let mut out = Vec::with_capacity(inputs.len());
            for (k, &t) in inputs.iter().enumerate() {
                let chunk = axis_lens[k] * inner;
                let mut gt = Vec::with_capacity(outer * chunk);
                for o in 0..*outer {
                    let start = o * total * inner + offset;
                    gt.extend_from_slice(&g[start..start + chunk]);
                }
                offset += chunk;
                out.push((t, gt));
            }
            out
        }
        Op::SegmentPool { x, segments, mode, counts, argmax } => {
            let d = node.shape[1];
            let mut gx = vec![0.0; val(*x).len()];
            match mode {
                PoolMode::Max => {
                    for (k, &r) in argmax.iter().enumerate() {
                        if r != usize::MAX {
                            gx[r * d + k % d] += g[k];
                        }
                    }
                }
                PoolMode::Sum | PoolMode::Mean => {
                    for (r, s) in segments.iter().enumerate() {
                        let Some(s) = *s else { continue };
                        let f = if *mode == PoolMode::Mean { 1.0 / counts[s] as f64 } else { 1.0 };
                        for j in 0..d {
                            gx[r * d + j] = g[s * d + j] * f;
                        }
                    }
                }
            }
            vec![(*x, gx)]
        }
        Op::ScatterAdd { x, targets } => {
            let d = node.shape[1];
            let mut gx = vec![0.0; targets.len() * d];
            for (e, &t) in targets.iter().enumerate() {
                gx[e * d..(e + 1) * d].copy_from_slice(&g[t * d..(t + 1) * d]);
            }
            vec![(*x, gx)]
        }
        Op::GatherRows { x, idx } => {
            let d = node.shape[1];
            let mut gx = vec![0.0; val(*x).len()];
            for (r, i) in idx.iter().enumerate() {
                if let Some(i) = *i {
                    for j in 0..d {
                        gx[i * d + j] += g[r * d + j];
                    }
                }
            }
            vec![(*x, gx)]
        }
        Op::Reshape(x) => vec![(*x, g.to_vec())],
        Op::Permute { x, axes } => {
            let mut inverse = vec![0; axes.len()];
            for (i, &a) in axes.iter().enumerate() {
                inverse[a] = i;
            }
            vec![(*x, permute_values(g, &node.shape, &inverse))]
        }
        Op::Dropout { x, scale } => vec![(*x, g.iter().zip(scale).map(|(a, s)| a * s).collect())],
        Op::Take { x, idx } => {
            let mut gx = vec![0.0; val(*x).len()];
            for (r, &i) in idx.iter().enumerate() {
                gx[i] += g[r];
            }
            vec![(*x, gx)]
        }
        Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).len()])],
        Op::Mean(x) => {
            let n = val(*x).len();
            vec![(*x, vec![g[0] / n as f64; n])]
        }
        Op::Bce { pred, labels, eps } => {
            let n = labels.len() as f64;
            let gp = val(*pred)
                .iter()
                .zip(labels)
                .map(|(&p, &y)| {
                    if p < *eps || p > 1.0 - eps {
                        0.0
                    } else {
                        g[0] * (-(y / p) + (1.0 - y) / (1.0 - p)) / n
                    }
                })
                .collect();
            vec![(*pred, gp)]
        }
        Op::BceLogits { logits, labels } => {
            let n = labels.len() as f64;
            let gz = val(*logits).iter().zip(labels).map(|(&z, &y)| g[0] * (sigmoid(z) - y) / n).collect();
            vec![(*logits, gz)]
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let c = last_dim(shape(*logits));
            let n = labels.len() as f64;
            let mut gz: Vec<f64> = probs.iter().map(|p| g[0] * p / n).collect();
            for (r, &l) in labels.iter().enumerate() {
                gz[r * c + l] -= g[0] / n;
            }
            vec![(*logits, gz)]
        }
    }
}
