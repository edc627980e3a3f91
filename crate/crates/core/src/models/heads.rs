//! Premise-scoring and tactic-classification heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Linear, Mlp2};
use super::{ModelError, Result};
use crate::tensor::{Graph, ParamStore, Tensor};

/// Scores a (goal, premise) pair from the concatenated embeddings with an
/// MLP `[2d → d → 1]`; the probability is the sigmoid of the logit.
#[derive(Debug, Clone, Copy)]
pub struct PremiseHead {
    pub mlp: Mlp2,
    pub d: usize,
}

impl PremiseHead {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PremiseHead { mlp: Mlp2::new(store, &mut rng, prefix, 2 * d, d, 1), d }
    }

    /// Logits `[B]` for goal and premise embeddings of shape `[B×d]`.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, goals: Tensor, premises: Tensor) -> Result<Tensor> {
        for t in [goals, premises] {
            let s = g.shape(t);
            if s.len() != 2 || s[1] != self.d {
                return Err(ModelError::DimensionMismatch { expected: self.d, got: *s.last().unwrap_or(&0) });
            }
        }
        if g.shape(goals)[0] != g.shape(premises)[0] {
            return Err(ModelError::DimensionMismatch { expected: g.shape(goals)[0], got: g.shape(premises)[0] });
        }
        let rows = g.shape(goals)[0];
        let both = g.concat(&[goals, premises], 1)?;
        let z = self.mlp.forward(g, store, both)?;
        Ok(g.reshape(z, &[rows])?)
    }

    /// Probabilities in (0, 1).
    pub fn probabilities(&self, g: &mut Graph, store: &ParamStore, goals: Tensor, premises: Tensor) -> Result<Tensor> {
        let z = self.logits(g, store, goals, premises)?;
        Ok(g.sigmoid(z))
    }
}

/// Linear tactic classifier `[d → C]`.
#[derive(Debug, Clone, Copy)]
pub struct TacticHead {
    pub linear: Linear,
    pub classes: usize,
}

impl TacticHead {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, classes: usize, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(ModelError::InvalidConfig("a tactic head needs at least two classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(TacticHead { linear: Linear::new(store, &mut rng, prefix, d, classes), classes })
    }

    pub fn logits(&self, g: &mut Graph, store: &ParamStore, goals: Tensor) -> Result<Tensor> {
        Ok(self.linear.forward(g, store, goals)?)
    }
}

/// Indices of the `k` largest entries, best first; ties go to the lower
/// index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolistWeights {
    pub tactic: f64,
    pub premise: f64,
}

impl Default for HolistWeights {
    fn default() -> Self {
        HolistWeights { tactic: 1.0, premise: 1.0 }
    }
}

/// Weighted sum of the tactic cross entropy and the binary cross entropy
/// over one positive and `negs_per_goal` negative premises per goal.
///
/// `goals` and `positives` are `[B×d]`; `negatives` is `[B·K×d]` with the
/// K negatives of goal b in rows `b·K..(b+1)·K`.
#[allow(clippy::too_many_arguments)]
pub fn holist_loss(
    g: &mut Graph,
    store: &ParamStore,
    tactic_head: &TacticHead,
    premise_head: &PremiseHead,
    goals: Tensor,
    tactic_labels: &[usize],
    positives: Tensor,
    negatives: Tensor,
    negs_per_goal: usize,
    weights: HolistWeights,
) -> Result<Tensor> {
    if negs_per_goal == 0 {
        return Err(ModelError::NoNegatives);
    }
    let b = g.shape(goals)[0];
    if g.shape(negatives)[0] != b * negs_per_goal {
        return Err(ModelError::DimensionMismatch { expected: b * negs_per_goal, got: g.shape(negatives)[0] });
    }
    let logits = tactic_head.logits(g, store, goals)?;
    let tactic_loss = g.cross_entropy(logits, tactic_labels)?;

    let repeated: Vec<Option<usize>> = (0..b).flat_map(|r| std::iter::repeat_n(Some(r), negs_per_goal)).collect();
    let goal_rows = g.gather_rows(goals, &repeated)?;
    let all_goals = g.concat(&[goals, goal_rows], 0)?;
    let all_premises = g.concat(&[positives, negatives], 0)?;
    let z = premise_head.logits(g, store, all_goals, all_premises)?;
    let mut labels = vec![1.0; b];
    labels.extend(std::iter::repeat_n(0.0, b * negs_per_goal));
    let premise_loss = g.bce_with_logits(z, &labels)?;

    let a = g.scale(tactic_loss, weights.tactic);
    let c = g.scale(premise_loss, weights.premise);
    Ok(g.add(a, c)?)
}
