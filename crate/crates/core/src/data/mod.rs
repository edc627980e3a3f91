//! Supervised datasets built from generated corpora.
//!
//! A premise example pairs a goal with a candidate premise and says whether
//! the goal's proof used it. Negatives are drawn from the premises used
//! anywhere in the corpus, so they look like real premises.

pub mod batch;

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prover::{Corpus, Goal, ProofState, TacticKind};
use crate::sexpr::Expr;
use crate::vocab::Vocabulary;
use batch::{collate, encode_expr, EncodeOptions, EncodedExpr, InputBatch, Representation};

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("no theorem in the corpus has dependencies")]
    NoDependencies,
    #[error("no proof step consumes a premise")]
    NoPremiseSteps,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    RatioInvalid(Vec<f64>),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{0} must be at least 1")]
    NonPositive(&'static str),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PremiseExample {
    pub goal: Expr,
    pub premise: Expr,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HolistExample {
    pub goal: Expr,
    #[serde(rename = "tactic")]
    pub tactic_id: usize,
    #[serde(rename = "pos")]
    pub pos_premise: Expr,
    #[serde(rename = "negs")]
    pub neg_premises: Vec<Expr>,
}

/// A goal and the tactic applied to it, for every proof step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TacticExample {
    pub goal: Expr,
    pub tactic: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PremiseDataset {
    pub examples: Vec<PremiseExample>,
    /// Loss weights `[negative, positive]` that balance the two classes.
    pub class_weights: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolistDataset {
    pub examples: Vec<HolistExample>,
    pub tactic_examples: Vec<TacticExample>,
    /// Tactic names in id order.
    pub tactics: Vec<String>,
}

/// Statements used as a dependency anywhere in the corpus, in corpus order.
pub fn used_premises(corpus: &Corpus) -> Vec<Expr> {
    let used: HashSet<&str> = corpus.records.iter().flat_map(|r| r.dependencies.iter().map(String::as_str)).collect();
    corpus.records.iter().filter(|r| used.contains(r.name.as_str())).map(|r| r.statement.clone()).collect()
}

fn statement_map(corpus: &Corpus) -> HashMap<&str, &Expr> {
    corpus.records.iter().map(|r| (r.name.as_str(), &r.statement)).collect()
}

/// One positive per (theorem, dependency) and `negs_per_pos` negatives per
/// positive, drawn uniformly with replacement from the used premises that
/// are neither dependencies of the theorem nor the theorem itself. Theorems
/// with no admissible negative are skipped.
pub fn build_premise_dataset(corpus: &Corpus, negs_per_pos: usize, seed: u64) -> Result<PremiseDataset> {
    if negs_per_pos == 0 {
        return Err(DataError::NonPositive("negs_per_pos"));
    }
    if corpus.theorems().all(|r| r.dependencies.is_empty()) {
        return Err(DataError::NoDependencies);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = used_premises(corpus);
    let by_name = statement_map(corpus);
    let mut examples = Vec::new();
    for r in corpus.theorems().filter(|r| !r.dependencies.is_empty()) {
        let deps: Vec<&Expr> = r.dependencies.iter().filter_map(|d| by_name.get(d.as_str()).copied()).collect();
        let candidates: Vec<&Expr> = pool.iter().filter(|p| !deps.contains(p) && **p != r.statement).collect();
        if candidates.is_empty() {
            continue;
        }
        for d in deps {
            examples.push(PremiseExample { goal: r.statement.clone(), premise: d.clone(), label: 1 });
            for _ in 0..negs_per_pos {
                let n = candidates[rng.gen_range(0..candidates.len())];
                examples.push(PremiseExample { goal: r.statement.clone(), premise: n.clone(), label: 0 });
            }
        }
    }
    if examples.is_empty() {
        return Err(DataError::NoDependencies);
    }
    let pos = examples.iter().filter(|e| e.label == 1).count() as f64;
    let n = examples.len() as f64;
    Ok(PremiseDataset { class_weights: [n / (2.0 * (n - pos)), n / (2.0 * pos)], examples })
}

/// Replays every proof; each step yields a tactic example and each `mp`
/// step also yields a premise example with `negs_per_pos` sampled
/// negatives.
pub fn build_holist_dataset(corpus: &Corpus, negs_per_pos: usize, seed: u64) -> Result<HolistDataset> {
    if negs_per_pos == 0 {
        return Err(DataError::NonPositive("negs_per_pos"));
    }
    let tactics: Vec<String> = corpus
        .theorems()
        .flat_map(|r| r.proof.iter().map(|s| s.tactic.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let tactic_id: HashMap<&str, usize> = tactics.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = used_premises(corpus);
    let by_name = statement_map(corpus);
    let mut examples = Vec::new();
    let mut tactic_examples = Vec::new();
    for (i, r) in corpus.records.iter().enumerate().filter(|(_, r)| !r.is_axiom()) {
        let premises = corpus.pool_before(i);
        let deps: Vec<&Expr> = r.dependencies.iter().filter_map(|d| by_name.get(d.as_str()).copied()).collect();
        let candidates: Vec<&Expr> = pool.iter().filter(|p| !deps.contains(p) && **p != r.statement).collect();
        let mut state = ProofState::new(Goal::new(r.statement.clone()));
        for step in &r.proof {
            let Some(tactic) = step.to_tactic() else { break };
            let Some(goal) = state.fringes.get(step.fringe).and_then(|f| f.get(step.goal)).map(Goal::to_expr) else { break };
            let id = tactic_id[step.tactic.as_str()];
            tactic_examples.push(TacticExample { goal: goal.clone(), tactic: id });
            if tactic.kind == TacticKind::Mp && !candidates.is_empty() {
                if let Some(pos) = step.arg.as_deref().and_then(|a| premises.get(a)) {
                    let neg_premises = (0..negs_per_pos).map(|_| candidates[rng.gen_range(0..candidates.len())].clone()).collect();
                    examples.push(HolistExample { goal, tactic_id: id, pos_premise: pos.clone(), neg_premises });
                }
            }
            if state.apply(step.fringe, step.goal, &tactic, &premises).is_err() {
                break;
            }
        }
    }
    if examples.is_empty() {
        return Err(DataError::NoPremiseSteps);
    }
    Ok(HolistDataset { examples, tactic_examples, tactics })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Partitions examples by goal: distinct goals are shuffled with `seed` and
/// cut at `round(r_train·n)` and `round((r_train+r_val)·n)`. Example order
/// within each part follows the input.
pub fn split<T: Clone>(examples: &[T], goal_of: impl Fn(&T) -> &Expr, ratios: [f64; 3], seed: u64) -> Result<Split<T>> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::RatioInvalid(ratios.to_vec()));
    }
    let mut goals: Vec<&Expr> = Vec::new();
    let mut seen = HashSet::new();
    for e in examples {
        let g = goal_of(e);
        if seen.insert(g) {
            goals.push(g);
        }
    }
    goals.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = goals.len() as f64;
    let a = (ratios[0] * n).round() as usize;
    let b = (((ratios[0] + ratios[1]) * n).round() as usize).max(a);
    let part: HashMap<&Expr, usize> = goals.iter().enumerate().map(|(i, g)| (*g, if i < a { 0 } else if i < b { 1 } else { 2 })).collect();
    let mut out = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for e in examples {
        match part[goal_of(e)] {
            0 => out.train.push(e.clone()),
            1 => out.val.push(e.clone()),
            _ => out.test.push(e.clone()),
        }
    }
    Ok(out)
}

/// Argument-order probe: goal `(rel a b)` with premise `(rel a b)` is
/// positive and with `(rel b a)` negative. Both members of a pair have the
/// same multiset of symbols, so order-blind models cannot beat chance.
/// Returns `n` examples (n rounded down to even) over `symbols` constants.
pub fn order_probe_dataset(n: usize, symbols: usize, seed: u64) -> Vec<PremiseExample> {
    assert!(symbols >= 2, "need two distinct constants");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rel = |a: usize, b: usize| Expr::apply("rel", vec![Expr::atom(format!("c{a}")), Expr::atom(format!("c{b}"))]);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        let a = rng.gen_range(0..symbols);
        let b = (a + rng.gen_range(1..symbols)) % symbols;
        out.push(PremiseExample { goal: rel(a, b), premise: rel(a, b), label: 1 });
        out.push(PremiseExample { goal: rel(a, b), premise: rel(b, a), label: 0 });
    }
    out
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|x| serde_json::to_string(x).expect("examples serialize") + "\n").collect()
}

pub fn from_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| DataError::Malformed { line: i + 1, msg: e.to_string() }))
        .collect()
}

/// Encodes each distinct expression once.
#[derive(Debug, Clone)]
pub struct ExprTable {
    pub exprs: Vec<EncodedExpr>,
    index: HashMap<Expr, usize>,
    vocab: Vocabulary,
    opts: EncodeOptions,
}

impl ExprTable {
    pub fn new(vocab: Vocabulary, opts: EncodeOptions) -> Self {
        ExprTable { exprs: Vec::new(), index: HashMap::new(), vocab, opts }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn intern(&mut self, e: &Expr) -> usize {
        if let Some(&i) = self.index.get(e) {
            return i;
        }
        let i = self.exprs.len();
        self.exprs.push(encode_expr(e, &self.vocab, &self.opts));
        self.index.insert(e.clone(), i);
        i
    }

    pub fn collate(&self, ids: &[usize], repr: Representation) -> InputBatch {
        let refs: Vec<&EncodedExpr> = ids.iter().map(|&i| &self.exprs[i]).collect();
        collate(&refs, repr)
    }
}

/// Goal and premise inputs for a run of premise examples.
#[derive(Debug, Clone, PartialEq)]
pub struct PremiseBatch {
    pub goals: InputBatch,
    pub premises: InputBatch,
    pub labels: Vec<f64>,
}

/// Premise examples resolved to [`ExprTable`] rows.
#[derive(Debug, Clone)]
pub struct EncodedPremiseSet {
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<f64>,
}

impl EncodedPremiseSet {
    pub fn new(examples: &[PremiseExample], table: &mut ExprTable) -> Self {
        let pairs = examples.iter().map(|e| (table.intern(&e.goal), table.intern(&e.premise))).collect();
        EncodedPremiseSet { pairs, labels: examples.iter().map(|e| e.label as f64).collect() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Consecutive batches of `batch_size` examples in `order` (all
    /// examples in input order when `None`); the last batch may be short.
    pub fn batches<'a>(
        &'a self,
        table: &'a ExprTable,
        batch_size: usize,
        repr: Representation,
        order: Option<&'a [usize]>,
    ) -> Result<impl Iterator<Item = PremiseBatch> + 'a> {
        if self.pairs.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        if batch_size == 0 {
            return Err(DataError::NonPositive("batch_size"));
        }
        let n = self.pairs.len();
        Ok((0..n).step_by(batch_size).map(move |start| {
            let idx: Vec<usize> = (start..(start + batch_size).min(n)).map(|k| order.map_or(k, |o| o[k])).collect();
            let goals: Vec<usize> = idx.iter().map(|&k| self.pairs[k].0).collect();
            let prems: Vec<usize> = idx.iter().map(|&k| self.pairs[k].1).collect();
            PremiseBatch {
                goals: table.collate(&goals, repr),
                premises: table.collate(&prems, repr),
                labels: idx.iter().map(|&k| self.labels[k]).collect(),
            }
        }))
    }
}

#[cfg(test)]
mod tests;
