//! Supervised training loops for the premise and tactic tasks.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use fembed_core::data::batch::{InputBatch, Representation};
use fembed_core::data::{EncodedPremiseSet, ExprTable};
use fembed_core::models::{Encoder, EncoderConfig, HolistWeights, ModelError, PremiseHead, TacticHead};
use fembed_core::tensor::{AdamState, Graph, ParamStore, Tensor};

pub type Result<T> = std::result::Result<T, ModelError>;

/// Encoder plus premise head, scoring (goal, premise) pairs.
pub struct PremiseModel {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub head: PremiseHead,
}

impl PremiseModel {
    pub fn new(cfg: &EncoderConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, "enc", cfg, vocab_size, seed)?;
        let head = PremiseHead::new(&mut store, "premise", cfg.d, seed.wrapping_add(1));
        Ok(PremiseModel { store, encoder, head })
    }

    pub fn representation(&self) -> Representation {
        self.encoder.representation()
    }

    fn logits(&self, g: &mut Graph, goals: &InputBatch, premises: &InputBatch) -> Result<Tensor> {
        let x = self.encoder.encode(g, &self.store, goals)?;
        let y = self.encoder.encode(g, &self.store, premises)?;
        self.head.logits(g, &self.store, x, y)
    }

    /// Logits for every example of `set`, in order.
    pub fn scores(&self, table: &ExprTable, set: &EncodedPremiseSet, batch_size: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(set.len());
        for b in set.batches(table, batch_size, self.representation(), None).map_err(data_err)? {
            let mut g = Graph::new();
            let z = self.logits(&mut g, &b.goals, &b.premises)?;
            out.extend_from_slice(g.value(z));
        }
        Ok(out)
    }

    /// One shuffled pass; returns the mean training loss. Positive and
    /// negative rows are weighted by `class_weights[label]`.
    pub fn train_epoch(
        &mut self,
        adam: &mut AdamState,
        table: &ExprTable,
        set: &EncodedPremiseSet,
        batch_size: usize,
        class_weights: [f64; 2],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for b in set.batches(table, batch_size, self.representation(), Some(&order)).map_err(data_err)? {
            let mut g = Graph::training();
            let z = self.logits(&mut g, &b.goals, &b.premises)?;
            let loss = weighted_bce(&mut g, z, &b.labels, class_weights)?;
            total += g.scalar(loss);
            batches += 1;
            self.store.zero_grad();
            g.backward(loss)?;
            g.accumulate_param_grads(&mut self.store);
            adam.step(&mut self.store)?;
        }
        Ok(total / batches.max(1) as f64)
    }
}

/// `Σ_c w_c·n_c·BCE_c / n`, the class-weighted mean of per-row losses.
fn weighted_bce(g: &mut Graph, logits: Tensor, labels: &[f64], w: [f64; 2]) -> Result<Tensor> {
    let n = labels.len() as f64;
    let mut parts = Vec::new();
    for (class, weight) in w.into_iter().enumerate() {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class as f64).collect();
        if rows.is_empty() {
            continue;
        }
        let zs = g.take(logits, &rows)?;
        let l = g.bce_with_logits(zs, &vec![class as f64; rows.len()])?;
        let l = g.scale(l, weight * rows.len() as f64 / n);
        parts.push(g.reshape(l, &[1])?);
    }
    let all = g.concat(&parts, 0)?;
    Ok(g.sum(all))
}

fn data_err(e: fembed_core::data::DataError) -> ModelError {
    ModelError::InvalidConfig(e.to_string())
}

/// Encoder with tactic and premise heads for the supervised tactic task.
pub struct HolistModel {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub tactic: TacticHead,
    pub premise: PremiseHead,
}

/// One proof step resolved to table rows; `mp` steps also carry their
/// positive premise and sampled negatives.
#[derive(Debug, Clone)]
pub struct HolistRow {
    pub goal: usize,
    pub tactic: usize,
    pub premises: Option<(usize, Vec<usize>)>,
}

/// Tactic logit rows, and positive and negative premise scores for the
/// rows that have premises.
#[derive(Debug, Clone, Default)]
pub struct HolistScores {
    pub tactic_logits: Vec<Vec<f64>>,
    pub pos: Vec<f64>,
    pub negs: Vec<Vec<f64>>,
}

impl HolistModel {
    pub fn new(cfg: &EncoderConfig, vocab_size: usize, tactics: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, "enc", cfg, vocab_size, seed)?;
        let tactic = TacticHead::new(&mut store, "tactic", cfg.d, tactics, seed.wrapping_add(1))?;
        let premise = PremiseHead::new(&mut store, "premise", cfg.d, seed.wrapping_add(2));
        Ok(HolistModel { store, encoder, tactic, premise })
    }

    fn embed(&self, g: &mut Graph, table: &ExprTable, ids: &[usize]) -> Result<Tensor> {
        let input = table.collate(ids, self.encoder.representation());
        self.encoder.encode(g, &self.store, &input)
    }

    /// Goal embeddings, tactic logits and the premise logits of a batch;
    /// premise logits list each row's positive followed by its negatives.
    fn forward(&self, g: &mut Graph, table: &ExprTable, batch: &[&HolistRow]) -> Result<(Tensor, Option<Tensor>)> {
        let goal_ids: Vec<usize> = batch.iter().map(|r| r.goal).collect();
        let goals = self.embed(g, table, &goal_ids)?;
        let tactic = self.tactic.logits(g, &self.store, goals)?;
        let mut rows = Vec::new();
        let mut prem = Vec::new();
        for (i, r) in batch.iter().enumerate() {
            if let Some((pos, negs)) = &r.premises {
                rows.extend(std::iter::repeat_n(Some(i), 1 + negs.len()));
                prem.push(*pos);
                prem.extend_from_slice(negs);
            }
        }
        if prem.is_empty() {
            return Ok((tactic, None));
        }
        let goal_rows = g.gather_rows(goals, &rows)?;
        let ps = self.embed(g, table, &prem)?;
        Ok((tactic, Some(self.premise.logits(g, &self.store, goal_rows, ps)?)))
    }

    /// One shuffled pass minimizing `w_t·CE(tactic) + w_p·BCE(premises)`;
    /// returns the mean loss.
    pub fn train_epoch(
        &mut self,
        adam: &mut AdamState,
        table: &ExprTable,
        rows: &[HolistRow],
        batch_size: usize,
        weights: HolistWeights,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(batch_size.max(1)) {
            let batch: Vec<&HolistRow> = chunk.iter().map(|&i| &rows[i]).collect();
            let mut g = Graph::training();
            let (tactic, premise) = self.forward(&mut g, table, &batch)?;
            let labels: Vec<usize> = batch.iter().map(|r| r.tactic).collect();
            let ce = g.cross_entropy(tactic, &labels)?;
            let mut loss = g.scale(ce, weights.tactic);
            if let Some(z) = premise {
                let targets: Vec<f64> = batch
                    .iter()
                    .filter_map(|r| r.premises.as_ref())
                    .flat_map(|(_, negs)| std::iter::once(1.0).chain(std::iter::repeat_n(0.0, negs.len())))
                    .collect();
                let bce = g.bce_with_logits(z, &targets)?;
                let bce = g.scale(bce, weights.premise);
                loss = g.add(loss, bce)?;
            }
            total += g.scalar(loss);
            batches += 1;
            self.store.zero_grad();
            g.backward(loss)?;
            g.accumulate_param_grads(&mut self.store);
            adam.step(&mut self.store)?;
        }
        Ok(total / batches.max(1) as f64)
    }

    pub fn scores(&self, table: &ExprTable, rows: &[HolistRow], batch_size: usize) -> Result<HolistScores> {
        let mut out = HolistScores::default();
        for chunk in rows.chunks(batch_size.max(1)) {
            let batch: Vec<&HolistRow> = chunk.iter().collect();
            let mut g = Graph::new();
            let (tactic, premise) = self.forward(&mut g, table, &batch)?;
            let c = g.shape(tactic)[1];
            out.tactic_logits.extend(g.value(tactic).chunks(c).map(<[f64]>::to_vec));
            if let Some(z) = premise {
                let mut zs = g.value(z).iter().copied();
                for (_, negs) in batch.iter().filter_map(|r| r.premises.as_ref()) {
                    out.pos.extend(zs.next());
                    out.negs.push(zs.by_ref().take(negs.len()).collect());
                }
            }
        }
        Ok(out)
    }
}
