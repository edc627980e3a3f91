//! Token vocabularies and model-input encodings.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Edge, ExprDag};
use crate::sexpr::{token_stream, Expr};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
/// Parentheses are reserved right after PAD and UNK.
pub const OPEN: usize = 2;
pub const CLOSE: usize = 3;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
const SPECIALS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, "(", ")"];
pub const DEFAULT_MAX_LEN: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("min_freq must be at least 1")]
    BadMinFreq,
    #[error("vocabulary file is malformed: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

/// On-disk form: `{"tokens": [...], "min_freq": n}`.
#[derive(Debug, Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    min_freq: usize,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Result<Self, VocabError> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(VocabError::Malformed("missing special tokens".into()));
        }
        let index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(VocabError::Malformed("duplicate token".into()));
        }
        Ok(Vocabulary { tokens, index, min_freq })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&VocabFile { tokens: self.tokens.clone(), min_freq: self.min_freq })
            .expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let f: VocabFile =
            serde_json::from_str(text).map_err(|e| VocabError::Malformed(e.to_string()))?;
        Self::from_tokens(f.tokens, f.min_freq)
    }
}

/// Counts symbol tokens over the corpus and keeps those seen at least
/// `min_freq` times, most frequent first, ties in lexicographic order. The
/// special tokens (padding, unknown and both parentheses) always come first.
pub fn build_vocab<'a, I>(corpus: I, min_freq: usize) -> Result<Vocabulary, VocabError>
where
    I: IntoIterator<Item = &'a Expr>,
{
    if min_freq == 0 {
        return Err(VocabError::BadMinFreq);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut any = false;
    for e in corpus {
        any = true;
        for t in token_stream(e) {
            *counts.entry(t).or_default() += 1;
        }
    }
    if !any {
        return Err(VocabError::EmptyCorpus);
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !SPECIALS.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(kept.into_iter().map(|(t, _)| t));
    Vocabulary::from_tokens(tokens, min_freq)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<usize>,
    /// `true` marks a real token.
    pub pad_mask: Vec<bool>,
    pub original_len: usize,
}

impl EncodedSequence {
    pub fn truncated(&self) -> bool {
        self.original_len > self.ids.len()
    }

    pub fn real_len(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }

    /// Extends with padding up to `len`.
    pub fn padded(&self, len: usize) -> EncodedSequence {
        let mut out = self.clone();
        out.ids.resize(len.max(self.ids.len()), PAD);
        out.pad_mask.resize(len.max(self.pad_mask.len()), false);
        out
    }
}

pub fn encode_sequence(e: &Expr, v: &Vocabulary, max_len: usize) -> EncodedSequence {
    assert!(max_len >= 1, "max_len must be positive");
    let toks = token_stream(e);
    let original_len = toks.len();
    let ids: Vec<usize> = toks.iter().take(max_len).map(|t| v.id(t)).collect();
    let pad_mask = vec![true; ids.len()];
    EncodedSequence { ids, pad_mask, original_len }
}

/// Node-labelled graph ready for the graph encoders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedGraph {
    pub node_ids: Vec<usize>,
    pub edges: Vec<Edge>,
}

impl EncodedGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }
}

pub fn encode_graph(g: &ExprDag, v: &Vocabulary) -> EncodedGraph {
    EncodedGraph { node_ids: g.symbols.iter().map(|s| v.id(s)).collect(), edges: g.edges.clone() }
}
