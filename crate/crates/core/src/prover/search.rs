//! Proof search drivers.
//!
//! `bfs_search` and `bestfs_search` always work on the first goal of a
//! fringe: every goal of a fringe must be closed anyway, so fixing the order
//! loses no proofs. `fringe_search` instead chooses a fringe, a goal in it,
//! then a tactic, as a learned policy would.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::models::top_k;
use crate::tensor::{Graph, Tensor};

/// Number of `mp` arguments kept per goal.
pub const DEFAULT_TOP_K: usize = 5;

/// Scores used by the search drivers. Each call returns tensors on the given
/// graph so that learned policies can be trained through the choices made.
pub trait Policy {
    /// Called whenever a new graph is started; cached tensors from earlier
    /// graphs must be dropped.
    fn begin(&mut self) {}

    /// Provability logit of a goal, shape `[1]`.
    fn goal_logit(&mut self, g: &mut Graph, goal: &Goal) -> Result<Tensor>;

    /// One logit per [`TacticKind`], shape `[6]`.
    fn tactic_logits(&mut self, g: &mut Graph, goal: &Goal) -> Result<Tensor>;

    /// One logit per candidate premise index, shape `[candidates.len()]`.
    fn premise_logits(&mut self, g: &mut Graph, goal: &Goal, pool: &PremisePool, candidates: &[usize]) -> Result<Tensor>;
}

/// Scores everything equally.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn goal_logit(&mut self, g: &mut Graph, _: &Goal) -> Result<Tensor> {
        Ok(g.zeros(&[1]))
    }

    fn tactic_logits(&mut self, g: &mut Graph, _: &Goal) -> Result<Tensor> {
        Ok(g.zeros(&[TacticKind::ALL.len()]))
    }

    fn premise_logits(&mut self, g: &mut Graph, _: &Goal, _: &PremisePool, candidates: &[usize]) -> Result<Tensor> {
        Ok(g.zeros(&[candidates.len()]))
    }
}

/// Knows the intended step for each goal of one recorded proof: that
/// tactic scores 1 and every other 0, the intended `mp` argument scores 0
/// and every other -10. Any pair other than the intended one therefore
/// scores at most 0.
#[derive(Debug, Clone, Default)]
pub struct OraclePolicy {
    steps: HashMap<Goal, Tactic>,
}

impl OraclePolicy {
    pub fn from_script(goal: &Goal, script: &[ScriptStep], pool: &PremisePool) -> Self {
        let mut state = ProofState::new(goal.clone());
        let mut steps = HashMap::new();
        for s in script {
            let (Some(t), Some(g)) = (s.to_tactic(), state.fringes.get(s.fringe).and_then(|f| f.get(s.goal)).cloned()) else { break };
            steps.entry(g).or_insert_with(|| t.clone());
            if state.apply(s.fringe, s.goal, &t, pool).is_err() {
                break;
            }
        }
        OraclePolicy { steps }
    }
}

impl Policy for OraclePolicy {
    fn goal_logit(&mut self, g: &mut Graph, goal: &Goal) -> Result<Tensor> {
        let v = if self.steps.contains_key(goal) { 1.0 } else { 0.0 };
        Ok(g.constant(&[1], vec![v])?)
    }

    fn tactic_logits(&mut self, g: &mut Graph, goal: &Goal) -> Result<Tensor> {
        let mut v = vec![0.0; TacticKind::ALL.len()];
        if let Some(t) = self.steps.get(goal) {
            v[t.kind.index()] = 1.0;
        }
        Ok(g.constant(&[v.len()], v)?)
    }

    fn premise_logits(&mut self, g: &mut Graph, goal: &Goal, pool: &PremisePool, candidates: &[usize]) -> Result<Tensor> {
        let want = self.steps.get(goal).and_then(|t| t.premise_arg.as_deref());
        let v: Vec<f64> = candidates.iter().map(|&i| if Some(pool.name(i)) == want { 0.0 } else { -10.0 }).collect();
        Ok(g.constant(&[v.len()], v)?)
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub proved: bool,
    /// A replayable proof when `proved`; empty otherwise.
    pub script: Vec<ScriptStep>,
    /// Tactic applications spent, failed ones included.
    pub steps_used: usize,
    pub state: ProofState,
}

/// Applicable tactics for `goal` with their policy scores (tactic logit,
/// plus the premise logit for `mp`). At most `top_k` `mp` arguments are
/// kept, the best-scoring ones.
pub fn tactic_candidates(policy: &mut dyn Policy, goal: &Goal, pool: &PremisePool, top_k_args: usize) -> Result<Vec<(Tactic, f64)>> {
    let mut g = Graph::new();
    policy.begin();
    let logits = policy.tactic_logits(&mut g, goal)?;
    let logits = g.value(logits).to_vec();
    let mut out = Vec::new();
    for kind in TacticKind::ALL {
        if kind == TacticKind::Mp {
            let cands = pool.implications_to(&goal.target);
            if cands.is_empty() {
                continue;
            }
            let p = policy.premise_logits(&mut g, goal, pool, &cands)?;
            let p = g.value(p).to_vec();
            for i in top_k(&p, top_k_args) {
                out.push((Tactic::mp(pool.name(cands[i])), logits[kind.index()] + p[i]));
            }
        } else {
            let t = Tactic::simple(kind);
            if tactic_outcome(goal, &t, pool).is_some() {
                out.push((t, logits[kind.index()]));
            }
        }
    }
    Ok(out)
}

/// Walks parent links back from the proving fringe and renumbers the
/// steps as a fresh replay would see them.
fn extract_script(parents: &[Option<(usize, usize, Tactic)>], last: usize) -> Vec<ScriptStep> {
    let mut chain = Vec::new();
    let mut cur = last;
    while let Some((p, goal, t)) = &parents[cur] {
        chain.push((*goal, t.clone()));
        cur = *p;
    }
    chain.reverse();
    chain.iter().enumerate().map(|(i, (goal, t))| ScriptStep::new(i, *goal, t)).collect()
}

struct Scored {
    score: f64,
    seq: usize,
    fringe: usize,
    tactic: Tactic,
}

impl PartialEq for Scored {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Scored {}
impl PartialOrd for Scored {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Scored {
    fn cmp(&self, o: &Self) -> Ordering {
        self.score.total_cmp(&o.score).then(o.seq.cmp(&self.seq))
    }
}

enum Frontier {
    Fifo(VecDeque<(usize, Tactic)>),
    Best(BinaryHeap<Scored>, usize),
}

impl Frontier {
    fn push(&mut self, fringe: usize, tactic: Tactic, score: f64) {
        match self {
            Frontier::Fifo(q) => q.push_back((fringe, tactic)),
            Frontier::Best(h, seq) => {
                h.push(Scored { score, seq: *seq, fringe, tactic });
                *seq += 1;
            }
        }
    }

    fn pop(&mut self) -> Option<(usize, Tactic)> {
        match self {
            Frontier::Fifo(q) => q.pop_front(),
            Frontier::Best(h, _) => h.pop().map(|s| (s.fringe, s.tactic)),
        }
    }
}

fn tree_search(goal: &Goal, pool: &PremisePool, policy: &mut dyn Policy, budget: usize, k: usize, mut frontier: Frontier) -> Result<SearchResult> {
    if budget == 0 {
        return Err(ProverError::ZeroBudget);
    }
    let mut state = ProofState::new(goal.clone());
    let mut parents: Vec<Option<(usize, usize, Tactic)>> = vec![None];
    for (t, s) in tactic_candidates(policy, goal, pool, k)? {
        frontier.push(0, t, s);
    }
    let mut steps = 0;
    while steps < budget {
        let Some((f, tactic)) = frontier.pop() else { break };
        steps += 1;
        if let Outcome::NewFringe(i) = state.apply(f, 0, &tactic, pool)? {
            parents.push(Some((f, 0, tactic)));
            if state.is_proved() {
                return Ok(SearchResult { proved: true, script: extract_script(&parents, i), steps_used: steps, state });
            }
            let first = state.fringes[i][0].clone();
            for (t, s) in tactic_candidates(policy, &first, pool, k)? {
                frontier.push(i, t, s);
            }
        }
    }
    state.fail();
    Ok(SearchResult { proved: false, script: vec![], steps_used: steps, state })
}

/// Breadth-first search over proof-tree nodes: tactic applications are
/// tried in the order their fringes were discovered.
pub fn bfs_search(goal: &Goal, pool: &PremisePool, policy: &mut dyn Policy, budget: usize, top_k_args: usize) -> Result<SearchResult> {
    tree_search(goal, pool, policy, budget, top_k_args, Frontier::Fifo(VecDeque::new()))
}

/// BFS with every applicable `mp` argument kept.
pub fn exhaustive_bfs(goal: &Goal, pool: &PremisePool, budget: usize) -> Result<SearchResult> {
    bfs_search(goal, pool, &mut UniformPolicy, budget, usize::MAX)
}

/// Best-first search: the frontier is ordered by the policy score of each
/// (goal, tactic) pair, ties first-in first-out.
pub fn bestfs_search(goal: &Goal, pool: &PremisePool, policy: &mut dyn Policy, budget: usize, top_k_args: usize) -> Result<SearchResult> {
    tree_search(goal, pool, policy, budget, top_k_args, Frontier::Best(BinaryHeap::new(), 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FringeMode {
    /// Sample every choice from the policy distribution.
    Sample { seed: u64 },
    /// Take the most likely choice, lowest index on ties.
    Greedy,
}

/// What happened in one fringe search, including the log-probability of
/// every choice on the caller's graph.
pub struct Episode {
    pub result: SearchResult,
    /// Summed log-probability of the fringe, goal, tactic and argument
    /// chosen at each step.
    pub step_log_probs: Vec<Tensor>,
}

fn choose(rng: Option<&mut ChaCha8Rng>, log_probs: &[f64]) -> usize {
    match rng {
        None => {
            let mut best = 0;
            for (i, &v) in log_probs.iter().enumerate() {
                if v > log_probs[best] {
                    best = i;
                }
            }
            best
        }
        Some(rng) => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, &v) in log_probs.iter().enumerate() {
                if v == f64::NEG_INFINITY {
                    continue;
                }
                acc += v.exp();
                last = i;
                if u < acc {
                    return i;
                }
            }
            last
        }
    }
}

/// Untried actions of one goal, grouped by tactic kind.
fn goal_actions(goal: &Goal, pool: &PremisePool, tried: &HashSet<(usize, usize, Tactic)>, f: usize, j: usize) -> Vec<(TacticKind, Vec<usize>)> {
    let mut out = Vec::new();
    for kind in TacticKind::ALL {
        if kind == TacticKind::Mp {
            let c: Vec<usize> = pool
                .implications_to(&goal.target)
                .into_iter()
                .filter(|&i| !tried.contains(&(f, j, Tactic::mp(pool.name(i)))))
                .collect();
            if !c.is_empty() {
                out.push((kind, c));
            }
        } else {
            let t = Tactic::simple(kind);
            if tactic_outcome(goal, &t, pool).is_some() && !tried.contains(&(f, j, t)) {
                out.push((kind, vec![]));
            }
        }
    }
    out
}

/// Runs one fringe search on `g`. Choices are restricted to applicable
/// tactics not yet tried at the same (fringe, goal); a step whose result
/// duplicates an existing fringe still costs budget.
///
/// The fringe distribution is a softmax over `Σ log σ(goal logit)`, i.e.
/// over the product of per-goal provability scores. This score is a
/// reconstruction: TacticZero's exact fringe formula is not published in
/// the sources this crate follows.
pub fn fringe_episode(
    g: &mut Graph,
    goal: &Goal,
    pool: &PremisePool,
    policy: &mut dyn Policy,
    budget: usize,
    top_k_args: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Episode> {
    if budget == 0 {
        return Err(ProverError::ZeroBudget);
    }
    policy.begin();
    let mut state = ProofState::new(goal.clone());
    let mut parents: Vec<Option<(usize, usize, Tactic)>> = vec![None];
    let mut tried: HashSet<(usize, usize, Tactic)> = HashSet::new();
    let mut goal_logits: HashMap<Goal, Tensor> = HashMap::new();
    let mut fringe_scores: Vec<Tensor> = Vec::new();
    let mut step_log_probs = Vec::new();
    let mut steps = 0;
    while steps < budget && !state.is_proved() {
        // Fringe scores never change, so they are built once per fringe.
        while fringe_scores.len() < state.fringes.len() {
            let f = fringe_scores.len();
            let mut parts = Vec::new();
            for goal in &state.fringes[f] {
                let z = match goal_logits.get(goal) {
                    Some(&z) => z,
                    None => {
                        let z = policy.goal_logit(g, goal)?;
                        goal_logits.insert(goal.clone(), z);
                        z
                    }
                };
                parts.push(g.log_sigmoid(z));
            }
            let s = if parts.is_empty() {
                g.zeros(&[1])
            } else {
                let c = g.concat(&parts, 0)?;
                let s = g.sum(c);
                g.reshape(s, &[1])?
            };
            fringe_scores.push(s);
        }
        let actions: Vec<Vec<Vec<(TacticKind, Vec<usize>)>>> = state
            .fringes
            .iter()
            .enumerate()
            .map(|(f, fr)| fr.iter().enumerate().map(|(j, goal)| goal_actions(goal, pool, &tried, f, j)).collect())
            .collect();
        let fringe_mask: Vec<bool> = actions.iter().map(|gs| gs.iter().any(|a| !a.is_empty())).collect();
        if !fringe_mask.contains(&true) {
            break;
        }
        let all = g.concat(&fringe_scores, 0)?;
        let lp_f = g.log_softmax(all, Some(&fringe_mask))?;
        let f = choose(rng.as_deref_mut(), g.value(lp_f));
        let mut chosen = vec![g.take(lp_f, &[f])?];

        let fr = state.fringes[f].clone();
        let goal_mask: Vec<bool> = actions[f].iter().map(|a| !a.is_empty()).collect();
        let zs: Vec<Tensor> = fr.iter().map(|goal| goal_logits[goal]).collect();
        let zs = g.concat(&zs, 0)?;
        let lp_g = g.log_softmax(zs, Some(&goal_mask))?;
        let j = choose(rng.as_deref_mut(), g.value(lp_g));
        chosen.push(g.take(lp_g, &[j])?);

        let goal = &fr[j];
        let kinds = &actions[f][j];
        let mut kind_mask = vec![false; TacticKind::ALL.len()];
        for (k, _) in kinds {
            kind_mask[k.index()] = true;
        }
        let tl = policy.tactic_logits(g, goal)?;
        let lp_t = g.log_softmax(tl, Some(&kind_mask))?;
        let k = choose(rng.as_deref_mut(), g.value(lp_t));
        chosen.push(g.take(lp_t, &[k])?);
        let kind = TacticKind::ALL[k];
        let tactic = if kind == TacticKind::Mp {
            let cands = &kinds.iter().find(|(kk, _)| *kk == kind).expect("chosen kind is available").1;
            let pl = policy.premise_logits(g, goal, pool, cands)?;
            let keep = top_k(g.value(pl), top_k_args);
            let mut mask = vec![false; cands.len()];
            for i in keep {
                mask[i] = true;
            }
            let lp_p = g.log_softmax(pl, Some(&mask))?;
            let c = choose(rng.as_deref_mut(), g.value(lp_p));
            chosen.push(g.take(lp_p, &[c])?);
            Tactic::mp(pool.name(cands[c]))
        } else {
            Tactic::simple(kind)
        };
        let lp = g.concat(&chosen, 0)?;
        step_log_probs.push(g.sum(lp));
        tried.insert((f, j, tactic.clone()));
        steps += 1;
        if let Outcome::NewFringe(_) = state.apply(f, j, &tactic, pool)? {
            parents.push(Some((f, j, tactic)));
        }
    }
    let result = if state.is_proved() {
        let last = state.fringes.len() - 1;
        SearchResult { proved: true, script: extract_script(&parents, last), steps_used: steps, state }
    } else {
        state.fail();
        SearchResult { proved: false, script: vec![], steps_used: steps, state }
    };
    Ok(Episode { result, step_log_probs })
}

/// Fringe search on its own graph.
pub fn fringe_search(goal: &Goal, pool: &PremisePool, policy: &mut dyn Policy, budget: usize, mode: FringeMode) -> Result<SearchResult> {
    let mut g = Graph::new();
    let mut rng = match mode {
        FringeMode::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        FringeMode::Greedy => None,
    };
    Ok(fringe_episode(&mut g, goal, pool, policy, budget, DEFAULT_TOP_K, rng.as_mut())?.result)
}
