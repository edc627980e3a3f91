//! REINFORCE training and evaluation of proving policies.

use std::collections::{HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::search::{fringe_episode, fringe_search, FringeMode, Policy, DEFAULT_TOP_K};
use super::*;
use crate::tensor::{AdamConfig, AdamState, Graph};

/// A named goal with the premises it may use.
#[derive(Debug, Clone)]
pub struct ProofTask {
    pub name: String,
    pub goal: Goal,
    pub pool: PremisePool,
}

impl Corpus {
    /// One task per theorem, each seeing only the records before it.
    pub fn tasks(&self) -> Vec<ProofTask> {
        (0..self.records.len())
            .filter(|&i| !self.records[i].is_axiom())
            .map(|i| ProofTask {
                name: self.records[i].name.clone(),
                goal: Goal::new(self.records[i].statement.clone()),
                pool: self.pool_before(i),
            })
            .collect()
    }
}

/// One proof attempt, as written to proof logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub goal: String,
    pub proved: bool,
    pub steps: usize,
    pub script: Vec<ScriptStep>,
}

pub fn write_proof_log(attempts: &[AttemptLog]) -> String {
    attempts.iter().map(|a| serde_json::to_string(a).expect("attempts serialize") + "\n").collect()
}

/// Parses a proof log line by line, skipping blank lines.
pub fn read_proof_log(text: &str) -> serde_json::Result<Vec<AttemptLog>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReinforceConfig {
    pub epochs: usize,
    pub budget: usize,
    pub gamma: f64,
    pub baseline_window: usize,
    pub lr: f64,
    pub seed: u64,
    pub top_k: usize,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        ReinforceConfig { epochs: 10, budget: 16, gamma: 0.99, baseline_window: 100, lr: 1e-3, seed: 0, top_k: DEFAULT_TOP_K }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Goals proved in each epoch.
    pub per_epoch_proved: Vec<usize>,
    /// Goals proved at least once up to and including each epoch.
    pub cumulative_proved: Vec<usize>,
    /// Every training attempt in order.
    pub history: Vec<AttemptLog>,
    /// Largest gradient entry magnitude seen in an episode that earned no
    /// reward; `None` if every episode succeeded.
    pub zero_reward_grad_max: Option<f64>,
    pub all_grads_finite: bool,
}

struct Baseline {
    window: VecDeque<f64>,
    cap: usize,
}

impl Baseline {
    fn value(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.window.iter().sum::<f64>() / self.window.len() as f64
        }
    }

    fn push(&mut self, r: f64) {
        if self.window.len() == self.cap {
            self.window.pop_front();
        }
        self.window.push_back(r);
    }
}

/// Trains `policy` by REINFORCE. An episode is one sampled fringe search;
/// its reward is 1 if the goal was proved. Step t of a T-step episode
/// earns `γ^(T-1-t)·R`, and the moving average of recent episode rewards is
/// subtracted before weighting the step's log-probability.
pub fn reinforce_train(policy: &mut NeuralPolicy, tasks: &[ProofTask], cfg: &ReinforceConfig) -> Result<TrainReport> {
    reinforce_train_with(policy, tasks, cfg, |_, _, _, _| Ok::<(), ProverError>(()))
}

/// [`reinforce_train`] with a hook run after every epoch, given the epoch
/// index, the policy, the optimizer state and the report so far.
pub fn reinforce_train_with<F, E>(
    policy: &mut NeuralPolicy,
    tasks: &[ProofTask],
    cfg: &ReinforceConfig,
    mut on_epoch: F,
) -> std::result::Result<TrainReport, E>
where
    F: FnMut(usize, &mut NeuralPolicy, &AdamState, &TrainReport) -> std::result::Result<(), E>,
    E: From<ProverError>,
{
    if tasks.is_empty() {
        return Err(ProverError::EmptyGoalSet.into());
    }
    if cfg.budget == 0 {
        return Err(ProverError::ZeroBudget.into());
    }
    let mut adam = AdamState::new(&policy.store, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut baseline = Baseline { window: VecDeque::new(), cap: cfg.baseline_window.max(1) };
    let mut report = TrainReport { all_grads_finite: true, ..TrainReport::default() };
    let mut ever: HashSet<String> = HashSet::new();
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut proved = 0;
        for &ti in &order {
            let task = &tasks[ti];
            let mut ep_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            let mut g = Graph::training();
            let ep = fringe_episode(&mut g, &task.goal, &task.pool, policy, cfg.budget, cfg.top_k, Some(&mut ep_rng))?;
            let r = if ep.result.proved { 1.0 } else { 0.0 };
            let b = baseline.value();
            let steps = ep.step_log_probs.len();
            if steps > 0 {
                let mut terms = Vec::with_capacity(steps);
                for (t, &lp) in ep.step_log_probs.iter().enumerate() {
                    let ret = cfg.gamma.powi((steps - 1 - t) as i32) * r;
                    let lp = g.reshape(lp, &[1]).map_err(ProverError::from)?;
                    terms.push(g.scale(lp, -(ret - b)));
                }
                let all = g.concat(&terms, 0).map_err(ProverError::from)?;
                let loss = g.sum(all);
                policy.store.zero_grad();
                g.backward(loss).map_err(ProverError::from)?;
                g.accumulate_param_grads(&mut policy.store);
                let grads = policy.store.iter().filter_map(|p| p.grad.as_ref()).flatten();
                let (finite, max) = grads.fold((true, 0.0f64), |(ok, m), &x| (ok && x.is_finite(), m.max(x.abs())));
                report.all_grads_finite &= finite;
                if r == 0.0 {
                    report.zero_reward_grad_max = Some(report.zero_reward_grad_max.unwrap_or(0.0).max(max));
                }
                if policy.store.iter().any(|p| p.grad.is_some()) {
                    adam.step(&mut policy.store).map_err(ProverError::from)?;
                }
            }
            baseline.push(r);
            if ep.result.proved {
                proved += 1;
                ever.insert(task.name.clone());
            }
            report.history.push(AttemptLog {
                goal: task.name.clone(),
                proved: ep.result.proved,
                steps: ep.result.steps_used,
                script: ep.result.script,
            });
        }
        report.per_epoch_proved.push(proved);
        report.cumulative_proved.push(ever.len());
        on_epoch(epoch, policy, &adam, &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    PassAt1,
    Cumulative,
}

/// One greedy fringe-search attempt per task.
pub fn attempt_all(tasks: &[ProofTask], policy: &mut dyn Policy, budget: usize) -> Result<Vec<AttemptLog>> {
    tasks
        .iter()
        .map(|t| {
            let r = fringe_search(&t.goal, &t.pool, policy, budget, FringeMode::Greedy)?;
            Ok(AttemptLog { goal: t.name.clone(), proved: r.proved, steps: r.steps_used, script: r.script })
        })
        .collect()
}

/// Fraction of `goals` proved at least once in `history`.
pub fn cumulative(goals: &[String], history: &[AttemptLog]) -> Result<f64> {
    if goals.is_empty() {
        return Err(ProverError::EmptyGoalSet);
    }
    let proved: HashSet<&str> = history.iter().filter(|a| a.proved).map(|a| a.goal.as_str()).collect();
    Ok(goals.iter().filter(|g| proved.contains(g.as_str())).count() as f64 / goals.len() as f64)
}

/// pass@1 runs one deterministic attempt per task; cumulative reads the
/// supplied attempt history (an absent history counts as no attempts).
pub fn evaluate(tasks: &[ProofTask], policy: &mut dyn Policy, mode: EvalMode, budget: usize, history: Option<&[AttemptLog]>) -> Result<f64> {
    if tasks.is_empty() {
        return Err(ProverError::EmptyGoalSet);
    }
    let names: Vec<String> = tasks.iter().map(|t| t.name.clone()).collect();
    match mode {
        EvalMode::PassAt1 => {
            let attempts = attempt_all(tasks, policy, budget)?;
            cumulative(&names, &attempts)
        }
        EvalMode::Cumulative => cumulative(&names, history.unwrap_or(&[])),
    }
}
