//! A policy backed by one of the expression encoders.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::search::Policy;
use super::*;
use crate::data::batch::{collate, encode_expr, EncodeOptions};
use crate::models::{Encoder, EncoderConfig, Linear, PremiseHead, TacticHead};
use crate::tensor::{Graph, ParamStore, Tensor};
use crate::vocab::{build_vocab, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub encoder: EncoderConfig,
    pub seed: u64,
}

/// Goals and premises share one encoder; small heads on top give the goal
/// provability logit, the tactic logits and the premise logits.
pub struct NeuralPolicy {
    pub cfg: PolicyConfig,
    pub store: ParamStore,
    pub vocab: Vocabulary,
    encoder: Encoder,
    goal_head: Linear,
    tactic_head: TacticHead,
    premise_head: PremiseHead,
    cache: HashMap<Expr, Tensor>,
}

impl NeuralPolicy {
    /// The vocabulary covers the connectives, the sequent marker and every
    /// symbol of `statements`.
    pub fn new<'a>(cfg: PolicyConfig, statements: impl IntoIterator<Item = &'a Expr>) -> Result<Self> {
        let extra = Expr::apply("sequent", vec![and(prop(0), or(prop(0), imp(prop(0), prop(0))))]);
        let mut all: Vec<&Expr> = statements.into_iter().collect();
        all.push(&extra);
        let vocab = build_vocab(all, 1).expect("corpus is non-empty");
        Self::with_vocab(cfg, vocab)
    }

    /// A fresh policy over a fixed vocabulary, as when restoring a
    /// checkpoint.
    pub fn with_vocab(cfg: PolicyConfig, vocab: Vocabulary) -> Result<Self> {
        let mut store = ParamStore::new();
        let d = cfg.encoder.d;
        let encoder = Encoder::new(&mut store, "enc", &cfg.encoder, vocab.len(), cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let goal_head = Linear::new(&mut store, &mut rng, "goal", d, 1);
        let tactic_head = TacticHead::new(&mut store, "tactic", d, TacticKind::ALL.len(), cfg.seed.wrapping_add(7))?;
        let premise_head = PremiseHead::new(&mut store, "premise", d, cfg.seed.wrapping_add(11));
        Ok(NeuralPolicy { cfg, store, vocab, encoder, goal_head, tactic_head, premise_head, cache: HashMap::new() })
    }

    /// Embedding `[1×d]` of `e`, computed once per graph.
    fn embed(&mut self, g: &mut Graph, e: &Expr) -> Result<Tensor> {
        if let Some(&t) = self.cache.get(e) {
            return Ok(t);
        }
        let opts = EncodeOptions { masks: self.cfg.encoder.needs_masks(), max_len: self.cfg.encoder.max_len, ..EncodeOptions::default() };
        let enc = encode_expr(e, &self.vocab, &opts);
        let input = collate(&[&enc], self.encoder.representation());
        let t = self.encoder.encode(g, &self.store, &input)?;
        self.cache.insert(e.clone(), t);
        Ok(t)
    }
}

impl Policy for NeuralPolicy {
    fn begin(&mut self) {
        self.cache.clear();
    }

    fn goal_logit(&mut self, g: &mut Graph, goal: &Goal) -> Result<Tensor> {
        let x = self.embed(g, &goal.to_expr())?;
        let z = self.goal_head.forward(g, &self.store, x)?;
        Ok(g.reshape(z, &[1])?)
    }

    fn tactic_logits(&mut self, g: &mut Graph, goal: &Goal) -> Result<Tensor> {
        let x = self.embed(g, &goal.to_expr())?;
        let z = self.tactic_head.logits(g, &self.store, x)?;
        Ok(g.reshape(z, &[TacticKind::ALL.len()])?)
    }

    fn premise_logits(&mut self, g: &mut Graph, goal: &Goal, pool: &PremisePool, candidates: &[usize]) -> Result<Tensor> {
        let x = self.embed(g, &goal.to_expr())?;
        let rows = g.gather_rows(x, &vec![Some(0); candidates.len()])?;
        let ps = candidates.iter().map(|&i| self.embed(g, pool.statement(i))).collect::<Result<Vec<_>>>()?;
        let ps = g.concat(&ps, 0)?;
        Ok(self.premise_head.logits(g, &self.store, rows, ps)?)
    }
}
