//! Collation of encoded expressions into model-ready batches.
//!
//! Graphs are joined by disjoint union: node ids of the k-th graph are
//! offset by the total node count of the graphs before it, and every node
//! records the graph it came from so that pooling can read out one vector
//! per graph. Sequences are right-padded to the longest member.

use serde::{Deserialize, Serialize};

use crate::graph::{ancestry_masks, ast_to_dag, BoolMatrix, Edge, MaskMode};
use crate::sexpr::Expr;
use crate::vocab::{encode_graph, encode_sequence, EncodedGraph, EncodedSequence, Vocabulary, PAD};

/// Which inputs a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Sequence,
    Graph,
    Both,
}

impl Representation {
    pub fn wants_graph(self) -> bool {
        matches!(self, Representation::Graph | Representation::Both)
    }

    pub fn wants_sequence(self) -> bool {
        matches!(self, Representation::Sequence | Representation::Both)
    }
}

/// Everything an encoder may need about one expression.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExpr {
    pub graph: EncodedGraph,
    pub seq: EncodedSequence,
    /// Attention permission matrix for directed structure-aware attention.
    pub allow: Option<BoolMatrix>,
}

/// Settings for turning expressions into [`EncodedExpr`]s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeOptions {
    pub share: bool,
    pub max_len: usize,
    /// Precompute ancestry masks in this mode.
    pub masks: Option<MaskMode>,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions { share: true, max_len: crate::vocab::DEFAULT_MAX_LEN, masks: None }
    }
}

pub fn encode_expr(e: &Expr, vocab: &Vocabulary, opts: &EncodeOptions) -> EncodedExpr {
    let dag = ast_to_dag(e, opts.share);
    let allow = opts.masks.map(|mode| {
        ancestry_masks(&dag, mode).expect("expression DAGs are acyclic").allow
    });
    EncodedExpr { graph: encode_graph(&dag, vocab), seq: encode_sequence(e, vocab, opts.max_len), allow }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub node_ids: Vec<usize>,
    /// Edges in batch-global node numbering.
    pub edges: Vec<Edge>,
    /// Graph index of every node.
    pub graph_ids: Vec<usize>,
    /// `offsets[k]..offsets[k+1]` are the nodes of graph k.
    pub offsets: Vec<usize>,
    /// Per-graph attention permissions, when available.
    pub allow: Option<Vec<BoolMatrix>>,
}

impl GraphBatch {
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = (&'a EncodedGraph, Option<&'a BoolMatrix>)>) -> Self {
        let mut b = GraphBatch { node_ids: Vec::new(), edges: Vec::new(), graph_ids: Vec::new(), offsets: vec![0], allow: Some(Vec::new()) };
        for (k, (g, allow)) in graphs.into_iter().enumerate() {
            let base = b.node_ids.len();
            b.node_ids.extend_from_slice(&g.node_ids);
            b.graph_ids.extend(std::iter::repeat_n(k, g.num_nodes()));
            b.edges.extend(g.edges.iter().map(|e| Edge { src: e.src + base, dst: e.dst + base, arg_pos: e.arg_pos }));
            b.offsets.push(b.node_ids.len());
            match (allow, &mut b.allow) {
                (Some(m), Some(list)) => list.push(m.clone()),
                _ => b.allow = None,
            }
        }
        b
    }

    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn graph_len(&self, k: usize) -> usize {
        self.offsets[k + 1] - self.offsets[k]
    }

    pub fn max_graph_len(&self) -> usize {
        (0..self.num_graphs()).map(|k| self.graph_len(k)).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    /// `batch × len` token ids, row-major.
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

impl SeqBatch {
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a EncodedSequence>) -> Self {
        let seqs: Vec<&EncodedSequence> = seqs.into_iter().collect();
        let len = seqs.iter().map(|s| s.ids.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut mask = Vec::with_capacity(seqs.len() * len);
        for s in &seqs {
            let p = s.padded(len);
            ids.extend(p.ids);
            mask.extend(p.pad_mask);
        }
        debug_assert!(ids.iter().zip(&mask).all(|(&i, &m)| m || i == PAD));
        SeqBatch { ids, mask, batch: seqs.len(), len }
    }
}

/// Encoder input for a batch of expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch {
    pub graphs: Option<GraphBatch>,
    pub seqs: Option<SeqBatch>,
    pub size: usize,
}

pub fn collate(exprs: &[&EncodedExpr], repr: Representation) -> InputBatch {
    InputBatch {
        graphs: repr.wants_graph().then(|| GraphBatch::from_graphs(exprs.iter().map(|e| (&e.graph, e.allow.as_ref())))),
        seqs: repr.wants_sequence().then(|| SeqBatch::from_sequences(exprs.iter().map(|e| &e.seq))),
        size: exprs.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::parse;
    use crate::vocab::build_vocab;

    #[test]
    fn disjoint_union_offsets() {
        let a = EncodedGraph { node_ids: vec![4, 5, 6], edges: vec![Edge { src: 0, dst: 1, arg_pos: 0 }, Edge { src: 0, dst: 2, arg_pos: 1 }] };
        let b = EncodedGraph { node_ids: vec![7, 8], edges: vec![Edge { src: 0, dst: 1, arg_pos: 0 }] };
        let batch = GraphBatch::from_graphs([(&a, None), (&b, None)]);
        assert_eq!(batch.num_nodes(), 5);
        assert_eq!(batch.graph_ids, [0, 0, 0, 1, 1]);
        assert_eq!(batch.edges[2], Edge { src: 3, dst: 4, arg_pos: 0 });
        assert_eq!(batch.offsets, [0, 3, 5]);
        assert!(batch.allow.is_none());
    }

    #[test]
    fn sequences_pad_to_longest() {
        let s4 = EncodedSequence { ids: vec![2, 5, 6, 3], pad_mask: vec![true; 4], original_len: 4 };
        let s7 = EncodedSequence { ids: vec![2, 5, 2, 6, 7, 3, 3], pad_mask: vec![true; 7], original_len: 7 };
        let b = SeqBatch::from_sequences([&s4, &s7]);
        assert_eq!((b.batch, b.len), (2, 7));
        assert_eq!(b.mask[..7].iter().filter(|&&m| m).count(), 4);
        assert_eq!(b.mask[7..].iter().filter(|&&m| m).count(), 7);
        assert_eq!(&b.ids[4..7], [PAD; 3]);
    }

    #[test]
    fn collate_carries_masks_when_all_present() {
        let e = parse("(f (g x) y)").unwrap();
        let v = build_vocab([&e], 1).unwrap();
        let opts = EncodeOptions { masks: Some(MaskMode::Union), ..EncodeOptions::default() };
        let enc = encode_expr(&e, &v, &opts);
        let b = collate(&[&enc, &enc], Representation::Both);
        assert_eq!(b.graphs.as_ref().unwrap().allow.as_ref().unwrap().len(), 2);
        assert_eq!(b.seqs.as_ref().unwrap().len, 8);
        assert_eq!(b.size, 2);
        let plain = encode_expr(&e, &v, &EncodeOptions::default());
        let b = collate(&[&enc, &plain], Representation::Graph);
        assert!(b.graphs.unwrap().allow.is_none());
        assert!(b.seqs.is_none());
    }
}
