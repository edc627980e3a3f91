//! Formula encoders and task heads.
//!
//! Every encoder maps an [`InputBatch`] to one `d`-dimensional embedding per
//! expression (`[B×d]`). Graph encoders start from one-hot symbols projected
//! through a learned table; sequence encoders do the same for tokens and add
//! sinusoidal positions. Per-node (or per-token) states are pooled with the
//! configured [`PoolMode`].

mod gnn;
mod heads;
mod layers;

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gnn::{GcnLayer, MpnnLayer};
pub use heads::{holist_loss, top_k, HolistWeights, PremiseHead, TacticHead};
pub use layers::{sinusoidal_encoding, EncoderLayer, LayerNorm, Linear, Mlp2};

use crate::data::batch::{GraphBatch, InputBatch, Representation, SeqBatch};
use crate::graph::{ancestry_masks, Edge, ExprDag, GraphError, MaskMode, MAX_ARITY};
use crate::tensor::{Graph, ParamId, ParamStore, PoolMode, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("expression has no nodes or tokens")]
    EmptyExpression,
    #[error("graph contains a cycle")]
    CycleDetected,
    #[error("attention mask for graph {graph} is {got}×{got}, graph has {expected} nodes")]
    MaskShapeMismatch { graph: usize, expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("encoder needs {0} input")]
    MissingInput(&'static str),
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(String),
    #[error("at least one negative premise is required")]
    NoNegatives,
}

impl From<GraphError> for ModelError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::CycleDetected => ModelError::CycleDetected,
            other => ModelError::InvalidConfig(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    BoW,
    #[serde(rename = "MPNN")]
    Mpnn,
    #[serde(rename = "GCN")]
    Gcn,
    Transformer,
    #[serde(rename = "SAT")]
    Sat,
    DirectedSAT,
    Ensemble,
}

impl Arch {
    pub fn representation(self) -> Representation {
        match self {
            Arch::Transformer => Representation::Sequence,
            Arch::Ensemble => Representation::Both,
            _ => Representation::Graph,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::BoW => "BoW",
            Arch::Mpnn => "MPNN",
            Arch::Gcn => "GCN",
            Arch::Transformer => "Transformer",
            Arch::Sat => "SAT",
            Arch::DirectedSAT => "DirectedSAT",
            Arch::Ensemble => "Ensemble",
        }
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let all = [Arch::BoW, Arch::Mpnn, Arch::Gcn, Arch::Transformer, Arch::Sat, Arch::DirectedSAT, Arch::Ensemble];
        all.into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown architecture `{s}`"))
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub arch: Arch,
    pub d: usize,
    /// Message-passing rounds, GCN layers, or encoder layers.
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub pooling: PoolMode,
    pub max_len: usize,
    pub mask_mode: MaskMode,
    pub gnn_hops_per_layer: usize,
    pub pre_norm: bool,
    /// Graph half of an ensemble.
    pub ensemble_graph: Arch,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            arch: Arch::Mpnn,
            d: 64,
            layers: 2,
            heads: 4,
            d_ff: 256,
            pooling: PoolMode::Mean,
            max_len: crate::vocab::DEFAULT_MAX_LEN,
            mask_mode: MaskMode::Union,
            gnn_hops_per_layer: 1,
            pre_norm: false,
            ensemble_graph: Arch::Mpnn,
        }
    }
}

impl EncoderConfig {
    pub fn new(arch: Arch, d: usize, layers: usize) -> Self {
        let heads = if d.is_multiple_of(4) { 4 } else { 1 };
        EncoderConfig { arch, d, layers, heads, d_ff: 4 * d, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(ModelError::InvalidConfig("d must be positive".into()));
        }
        let attends = matches!(self.arch, Arch::Transformer | Arch::Sat | Arch::DirectedSAT | Arch::Ensemble);
        if attends && (self.heads == 0 || !self.d.is_multiple_of(self.heads)) {
            return Err(ModelError::InvalidConfig(format!("d={} is not divisible by heads={}", self.d, self.heads)));
        }
        if self.max_len == 0 {
            return Err(ModelError::InvalidConfig("max_len must be positive".into()));
        }
        if self.arch == Arch::Ensemble && matches!(self.ensemble_graph, Arch::Ensemble | Arch::Transformer) {
            return Err(ModelError::InvalidConfig("ensemble graph half must be a graph encoder".into()));
        }
        Ok(())
    }

    /// Whether batches should carry precomputed ancestry masks.
    pub fn needs_masks(&self) -> Option<MaskMode> {
        let directed = self.arch == Arch::DirectedSAT
            || (self.arch == Arch::Ensemble && self.ensemble_graph == Arch::DirectedSAT);
        directed.then_some(self.mask_mode)
    }
}

#[derive(Debug, Clone)]
enum Body {
    Bow,
    Mpnn { edge_table: ParamId, layers: Vec<MpnnLayer> },
    Gcn { layers: Vec<GcnLayer> },
    Transformer { layers: Vec<EncoderLayer> },
    Sat { edge_table: ParamId, blocks: Vec<(Vec<MpnnLayer>, EncoderLayer)>, directed: bool },
    Ensemble { graph: Box<Encoder>, seq: Box<Encoder>, mix: Mlp2 },
}

/// An expression encoder whose parameters live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    token_table: Option<ParamId>,
    body: Body,
}

/// Pre-pooling states: one row per node or token slot, and the expression
/// each row belongs to (`None` for padding).
pub struct NodeStates {
    pub states: Tensor,
    pub segments: Vec<Option<usize>>,
    pub count: usize,
}

impl Encoder {
    /// Registers the encoder's parameters under `prefix`. Initialisation is a
    /// pure function of `seed` and the configuration.
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d;
        let rng = &mut rng;
        if cfg.arch == Arch::Ensemble {
            let gcfg = EncoderConfig { arch: cfg.ensemble_graph, ..cfg.clone() };
            let scfg = EncoderConfig { arch: Arch::Transformer, ..cfg.clone() };
            let graph = Encoder::new(store, &format!("{prefix}.graph"), &gcfg, vocab_size, seed.wrapping_add(1))?;
            let seq = Encoder::new(store, &format!("{prefix}.seq"), &scfg, vocab_size, seed.wrapping_add(2))?;
            let mix = Mlp2::new(store, rng, &format!("{prefix}.mix"), 2 * d, d, d);
            return Ok(Encoder { cfg: cfg.clone(), token_table: None, body: Body::Ensemble { graph: Box::new(graph), seq: Box::new(seq), mix } });
        }
        let token_table = Some(layers::embedding_table(store, rng, &format!("{prefix}.tokens"), vocab_size, d));
        let body = match cfg.arch {
            Arch::BoW => Body::Bow,
            Arch::Mpnn => Body::Mpnn {
                edge_table: layers::embedding_table(store, rng, &format!("{prefix}.edges"), MAX_ARITY, d),
                layers: (0..cfg.layers).map(|t| MpnnLayer::new(store, rng, &format!("{prefix}.mp{t}"), d)).collect(),
            },
            Arch::Gcn => Body::Gcn { layers: (0..cfg.layers).map(|t| GcnLayer::new(store, rng, &format!("{prefix}.gcn{t}"), d)).collect() },
            Arch::Transformer => Body::Transformer {
                layers: (0..cfg.layers)
                    .map(|t| EncoderLayer::new(store, rng, &format!("{prefix}.enc{t}"), d, cfg.heads, cfg.d_ff, cfg.pre_norm))
                    .collect(),
            },
            Arch::Sat | Arch::DirectedSAT => Body::Sat {
                edge_table: layers::embedding_table(store, rng, &format!("{prefix}.edges"), MAX_ARITY, d),
                blocks: (0..cfg.layers)
                    .map(|t| {
                        let hops = (0..cfg.gnn_hops_per_layer)
                            .map(|h| MpnnLayer::new(store, rng, &format!("{prefix}.sat{t}.mp{h}"), d))
                            .collect();
                        let att = EncoderLayer::new(store, rng, &format!("{prefix}.sat{t}.att"), d, cfg.heads, cfg.d_ff, cfg.pre_norm);
                        (hops, att)
                    })
                    .collect(),
                directed: cfg.arch == Arch::DirectedSAT,
            },
            Arch::Ensemble => unreachable!(),
        };
        Ok(Encoder { cfg: cfg.clone(), token_table, body })
    }

    pub fn representation(&self) -> Representation {
        self.cfg.arch.representation()
    }

    /// Pooled embeddings `[B×d]`.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, input: &InputBatch) -> Result<Tensor> {
        if let Body::Ensemble { graph, seq, mix } = &self.body {
            let ge = graph.encode(g, store, input)?;
            let se = seq.encode(g, store, input)?;
            let (dg, ds) = (g.shape(ge)[1], g.shape(se)[1]);
            if dg != ds {
                return Err(ModelError::DimensionMismatch { expected: dg, got: ds });
            }
            let both = g.concat(&[ge, se], 1)?;
            return Ok(mix.forward(g, store, both)?);
        }
        let ns = self.node_states(g, store, input)?;
        Ok(g.segment_pool(ns.states, &ns.segments, ns.count, self.cfg.pooling)?)
    }

    /// Per-node (graph encoders) or per-token (Transformer) final states.
    pub fn node_states(&self, g: &mut Graph, store: &ParamStore, input: &InputBatch) -> Result<NodeStates> {
        match &self.body {
            Body::Transformer { layers } => {
                let seqs = input.seqs.as_ref().ok_or(ModelError::MissingInput("sequence"))?;
                self.transformer_states(g, store, seqs, layers)
            }
            Body::Ensemble { .. } => Err(ModelError::InvalidConfig("an ensemble has no single node-state matrix".into())),
            _ => {
                let graphs = input.graphs.as_ref().ok_or(ModelError::MissingInput("graph"))?;
                self.graph_states(g, store, graphs)
            }
        }
    }

    fn graph_states(&self, g: &mut Graph, store: &ParamStore, batch: &GraphBatch) -> Result<NodeStates> {
        if (0..batch.num_graphs()).any(|k| batch.graph_len(k) == 0) {
            return Err(ModelError::EmptyExpression);
        }
        let table = g.param(store, self.token_table.expect("graph encoders own a token table"));
        let mut x = g.embedding(table, &batch.node_ids)?;
        let segments = batch.graph_ids.iter().map(|&k| Some(k)).collect();
        let edge_rows = |g: &mut Graph, edge_table: ParamId| -> Result<Tensor> {
            let t = g.param(store, edge_table);
            let labels: Vec<usize> = batch.edges.iter().map(Edge::label).collect();
            Ok(g.embedding(t, &labels)?)
        };
        match &self.body {
            Body::Bow => {}
            Body::Mpnn { edge_table, layers } => {
                if !layers.is_empty() {
                    check_acyclic(batch)?;
                    let e = edge_rows(g, *edge_table)?;
                    for layer in layers {
                        x = layer.forward(g, store, x, &batch.edges, e)?;
                    }
                }
            }
            Body::Gcn { layers } => {
                for (t, layer) in layers.iter().enumerate() {
                    x = layer.forward(g, store, x, &batch.edges, t + 1 < layers.len())?;
                }
            }
            Body::Sat { edge_table, blocks, directed } => {
                check_acyclic(batch)?;
                let e = edge_rows(g, *edge_table)?;
                let layout = PaddedLayout::new(batch);
                let allow = if *directed { layout.directed_allow(batch, self.cfg.mask_mode)? } else { layout.full_allow() };
                for (hops, att) in blocks {
                    for layer in hops {
                        x = layer.forward(g, store, x, &batch.edges, e)?;
                    }
                    let padded = g.gather_rows(x, &layout.gather)?;
                    let out = att.forward(g, store, padded, layout.batch, layout.len, &allow)?;
                    x = g.gather_rows(out, &layout.scatter)?;
                }
            }
            Body::Transformer { .. } | Body::Ensemble { .. } => unreachable!(),
        }
        Ok(NodeStates { states: x, segments, count: batch.num_graphs() })
    }

    fn transformer_states(&self, g: &mut Graph, store: &ParamStore, seqs: &SeqBatch, layers: &[EncoderLayer]) -> Result<NodeStates> {
        let (b, len, d) = (seqs.batch, seqs.len, self.cfg.d);
        if len > self.cfg.max_len {
            return Err(ModelError::SequenceTooLong { len, max_len: self.cfg.max_len });
        }
        if len == 0 || (0..b).any(|r| !seqs.mask[r * len..(r + 1) * len].contains(&true)) {
            return Err(ModelError::EmptyExpression);
        }
        let table = g.param(store, self.token_table.expect("transformer owns a token table"));
        let emb = g.embedding(table, &seqs.ids)?;
        let emb = g.reshape(emb, &[b, len, d])?;
        let pe = g.constant(&[len, d], sinusoidal_encoding(len, d))?;
        let x = g.add(emb, pe)?;
        let mut x = g.reshape(x, &[b * len, d])?;
        let mut allow = Vec::with_capacity(b * len * len);
        for r in 0..b {
            let keys = &seqs.mask[r * len..(r + 1) * len];
            for _ in 0..len {
                allow.extend_from_slice(keys);
            }
        }
        for layer in layers {
            x = layer.forward(g, store, x, b, len, &allow)?;
        }
        let segments = (0..b * len).map(|k| seqs.mask[k].then_some(k / len)).collect();
        Ok(NodeStates { states: x, segments, count: b })
    }
}

fn check_acyclic(batch: &GraphBatch) -> Result<()> {
    let dag = ExprDag { symbols: vec![String::new(); batch.num_nodes()], edges: batch.edges.clone(), root: 0 };
    crate::graph::topological_order(&dag)?;
    Ok(())
}

/// Maps the flat node list of a graph batch onto a `[B × L]` grid, `L` being
/// the largest graph, for attention.
struct PaddedLayout {
    batch: usize,
    len: usize,
    /// Grid slot → node (None for padding).
    gather: Vec<Option<usize>>,
    /// Node → grid slot.
    scatter: Vec<Option<usize>>,
}

impl PaddedLayout {
    fn new(b: &GraphBatch) -> Self {
        let (batch, len) = (b.num_graphs(), b.max_graph_len());
        let mut gather = vec![None; batch * len];
        let mut scatter = Vec::with_capacity(b.num_nodes());
        for k in 0..batch {
            for i in 0..b.graph_len(k) {
                gather[k * len + i] = Some(b.offsets[k] + i);
                scatter.push(Some(k * len + i));
            }
        }
        PaddedLayout { batch, len, gather, scatter }
    }

    /// Every real node may attend to every real node of its graph. Padding
    /// query rows use the same key mask so that no row is fully masked.
    fn full_allow(&self) -> Vec<bool> {
        let mut allow = Vec::with_capacity(self.batch * self.len * self.len);
        for k in 0..self.batch {
            let keys: Vec<bool> = (0..self.len).map(|j| self.gather[k * self.len + j].is_some()).collect();
            for _ in 0..self.len {
                allow.extend_from_slice(&keys);
            }
        }
        allow
    }

    /// Ancestry-restricted permissions, from the batch when precomputed and
    /// otherwise derived from the edges.
    fn directed_allow(&self, b: &GraphBatch, mode: MaskMode) -> Result<Vec<bool>> {
        let mut allow = self.full_allow();
        let mut local_edges: Vec<Vec<Edge>> = vec![Vec::new(); b.num_graphs()];
        if b.allow.is_none() {
            for e in &b.edges {
                let k = b.graph_ids[e.src];
                let o = b.offsets[k];
                local_edges[k].push(Edge { src: e.src - o, dst: e.dst - o, arg_pos: e.arg_pos });
            }
        }
        for k in 0..b.num_graphs() {
            let n = b.graph_len(k);
            let computed;
            let m = match &b.allow {
                Some(list) => &list[k],
                None => {
                    let dag = ExprDag { symbols: vec![String::new(); n], edges: std::mem::take(&mut local_edges[k]), root: 0 };
                    computed = ancestry_masks(&dag, mode)?.allow;
                    &computed
                }
            };
            if m.n() != n {
                return Err(ModelError::MaskShapeMismatch { graph: k, expected: n, got: m.n() });
            }
            for i in 0..n {
                for j in 0..n {
                    allow[(k * self.len + i) * self.len + j] = m.get(i, j);
                }
            }
        }
        Ok(allow)
    }
}
