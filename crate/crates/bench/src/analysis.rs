//! Nearest neighbours in embedding space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use fembed_core::data::batch::{collate, encode_expr, EncodeOptions};
use fembed_core::models::{Encoder, ModelError};
use fembed_core::sexpr::Expr;
use fembed_core::tensor::{Graph, ParamStore};
use fembed_core::vocab::Vocabulary;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("zero-norm embedding for {0:?}")]
    ZeroNormEmbedding(Vec<String>),
    #[error("query {0} is not in the embedding table")]
    UnknownQuery(String),
    #[error("k must be at least 1")]
    ZeroK,
}

/// Expressions and their embeddings, row for row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    pub exprs: Vec<Expr>,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub expr: String,
    pub distance: f64,
}

impl EmbeddingTable {
    /// Embeds `exprs` with `encoder`, `batch` expressions at a time.
    pub fn build(encoder: &Encoder, store: &ParamStore, vocab: &Vocabulary, exprs: Vec<Expr>, batch: usize) -> Result<Self, ModelError> {
        let opts = EncodeOptions { masks: encoder.cfg.needs_masks(), max_len: encoder.cfg.max_len, ..EncodeOptions::default() };
        let mut vectors = Vec::with_capacity(exprs.len());
        for chunk in exprs.chunks(batch.max(1)) {
            let encs: Vec<_> = chunk.iter().map(|e| encode_expr(e, vocab, &opts)).collect();
            let refs: Vec<_> = encs.iter().collect();
            let mut g = Graph::new();
            let t = encoder.encode(&mut g, store, &collate(&refs, encoder.representation()))?;
            vectors.extend(g.value(t).chunks(encoder.cfg.d).map(<[f64]>::to_vec));
        }
        Ok(EmbeddingTable { exprs, vectors })
    }

    pub fn push(&mut self, e: Expr, v: Vec<f64>) {
        self.exprs.push(e);
        self.vectors.push(v);
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `1 − a·b / (‖a‖‖b‖)`.
/// Written as `dot / sqrt(‖a‖²‖b‖²)` so identical vectors give exactly 0.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    (1.0 - dot(a, b) / (dot(a, a) * dot(b, b)).sqrt()).clamp(0.0, 2.0)
}

/// The `k` rows nearest to `query` by cosine distance, ascending, ties in
/// table order. The query's own row (its first occurrence) is skipped;
/// further copies are ordinary neighbours.
pub fn nearest_neighbors(table: &EmbeddingTable, query: &Expr, k: usize) -> Result<Vec<Neighbor>, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::ZeroK);
    }
    let zero: Vec<String> = table.exprs.iter().zip(&table.vectors).filter(|(_, v)| norm(v) == 0.0).map(|(e, _)| e.to_string()).collect();
    if !zero.is_empty() {
        return Err(AnalysisError::ZeroNormEmbedding(zero));
    }
    let qi = table.exprs.iter().position(|e| e == query).ok_or_else(|| AnalysisError::UnknownQuery(query.to_string()))?;
    let q = &table.vectors[qi];
    let mut scored: Vec<(usize, f64)> =
        (0..table.exprs.len()).filter(|&i| i != qi).map(|i| (i, cosine_distance(q, &table.vectors[i]))).collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(i, distance)| Neighbor { expr: table.exprs[i].to_string(), distance }).collect())
}
