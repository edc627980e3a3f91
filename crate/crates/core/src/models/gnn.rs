//! Message passing over expression DAGs.

use rand_chacha::ChaCha8Rng;

use super::layers::{Linear, Mlp2};
use crate::graph::Edge;
use crate::tensor::{Graph, ParamStore, Result, Tensor};

/// One round of directed message passing. Parents and children send
/// messages through separate functions, each conditioned on the argument
/// position of the connecting edge:
///
/// ```text
/// m_i  = F_A(x_i, Σ_{j parent of i} F_P(x_j, e_ji), Σ_{j child of i} F_C(x_j, e_ij))
/// x_i' = F_O(x_i, m_i)
/// ```
#[derive(Debug, Clone, Copy)]
pub struct MpnnLayer {
    pub from_parent: Mlp2,
    pub from_child: Mlp2,
    pub aggregate: Mlp2,
    pub update: Mlp2,
}

impl MpnnLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize) -> Self {
        MpnnLayer {
            from_parent: Mlp2::new(store, rng, &format!("{name}.fp"), 2 * d, d, d),
            from_child: Mlp2::new(store, rng, &format!("{name}.fc"), 2 * d, d, d),
            aggregate: Mlp2::new(store, rng, &format!("{name}.fa"), 3 * d, d, d),
            update: Mlp2::new(store, rng, &format!("{name}.fo"), 2 * d, d, d),
        }
    }

    /// `x` is `[N×d]`; `edge_emb` holds one embedded label per edge.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Tensor, edges: &[Edge], edge_emb: Tensor) -> Result<Tensor> {
        let n = g.shape(x)[0];
        let src: Vec<Option<usize>> = edges.iter().map(|e| Some(e.src)).collect();
        let dst: Vec<Option<usize>> = edges.iter().map(|e| Some(e.dst)).collect();
        let to_child: Vec<usize> = edges.iter().map(|e| e.dst).collect();
        let to_parent: Vec<usize> = edges.iter().map(|e| e.src).collect();

        let parent_states = g.gather_rows(x, &src)?;
        let parent_in = g.concat(&[parent_states, edge_emb], 1)?;
        let parent_msgs = self.from_parent.forward(g, store, parent_in)?;
        let parent_sum = g.scatter_add(parent_msgs, &to_child, n)?;

        let child_states = g.gather_rows(x, &dst)?;
        let child_in = g.concat(&[child_states, edge_emb], 1)?;
        let child_msgs = self.from_child.forward(g, store, child_in)?;
        let child_sum = g.scatter_add(child_msgs, &to_parent, n)?;

        let agg_in = g.concat(&[x, parent_sum, child_sum], 1)?;
        let m = self.aggregate.forward(g, store, agg_in)?;
        let upd_in = g.concat(&[x, m], 1)?;
        self.update.forward(g, store, upd_in)
    }
}

/// Graph convolution on the undirected view with self loops and symmetric
/// normalisation, `relu(D^-1/2 (A + I) D^-1/2 X W + b)`. Parallel edges
/// count with multiplicity.
#[derive(Debug, Clone, Copy)]
pub struct GcnLayer {
    pub linear: Linear,
}

impl GcnLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize) -> Self {
        GcnLayer { linear: Linear::new(store, rng, name, d, d) }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Tensor, edges: &[Edge], activate: bool) -> Result<Tensor> {
        let n = g.shape(x)[0];
        let mut degree = vec![1.0f64; n];
        for e in edges {
            degree[e.src] += 1.0;
            degree[e.dst] += 1.0;
        }
        let mut from = Vec::with_capacity(n + 2 * edges.len());
        let mut to = Vec::with_capacity(n + 2 * edges.len());
        let mut coef = Vec::with_capacity(n + 2 * edges.len());
        for (i, deg) in degree.iter().enumerate() {
            from.push(Some(i));
            to.push(i);
            coef.push(1.0 / deg);
        }
        for e in edges {
            let c = 1.0 / (degree[e.src] * degree[e.dst]).sqrt();
            from.extend([Some(e.src), Some(e.dst)]);
            to.extend([e.dst, e.src]);
            coef.extend([c, c]);
        }
        let w = g.param(store, self.linear.w);
        let xw = g.matmul(x, w)?;
        let rows = g.gather_rows(xw, &from)?;
        let rows = g.row_scale(rows, &coef)?;
        let agg = g.scatter_add(rows, &to, n)?;
        let b = g.param(store, self.linear.b);
        let out = g.add(agg, b)?;
        Ok(if activate { g.relu(out) } else { out })
    }
}
