//! A small propositional proving environment.
//!
//! Formulas are atoms (`p0`, `p1`, ...) combined with `and`, `or` and `imp`.
//! A proof state tracks every fringe observed so far: a fringe is a list of
//! open goals whose joint proof proves the initial goal. Applying a tactic
//! to a goal never edits a fringe in place; it appends a new one.

mod generate;
mod neural;
mod rl;
mod search;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::ModelError;
use crate::sexpr::Expr;

pub use generate::{generate_theorems, Corpus, GenConfig, TheoremRecord, MAX_STATEMENT_SIZE};
pub use neural::{NeuralPolicy, PolicyConfig};
pub use rl::{
    attempt_all, cumulative, evaluate, read_proof_log, reinforce_train, reinforce_train_with, write_proof_log, AttemptLog, EvalMode, ProofTask,
    ReinforceConfig, TrainReport,
};
pub use search::{
    bestfs_search, bfs_search, exhaustive_bfs, fringe_episode, fringe_search, tactic_candidates, Episode, FringeMode,
    OraclePolicy, Policy, SearchResult, UniformPolicy, DEFAULT_TOP_K,
};

#[derive(Debug, Error)]
pub enum ProverError {
    #[error("fringe {fringe} / goal {goal} does not exist")]
    InvalidIndex { fringe: usize, goal: usize },
    #[error("proof state is no longer open")]
    StateClosed,
    #[error("search budget must be at least 1")]
    ZeroBudget,
    #[error("goal set is empty")]
    EmptyGoalSet,
    #[error("unknown tactic `{0}`")]
    UnknownTactic(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<crate::tensor::TensorError> for ProverError {
    fn from(e: crate::tensor::TensorError) -> Self {
        ProverError::Model(ModelError::Tensor(e))
    }
}

pub type Result<T> = std::result::Result<T, ProverError>;

pub const AND: &str = "and";
pub const OR: &str = "or";
pub const IMP: &str = "imp";

pub fn and(a: Expr, b: Expr) -> Expr {
    Expr::apply(AND, vec![a, b])
}

pub fn or(a: Expr, b: Expr) -> Expr {
    Expr::apply(OR, vec![a, b])
}

pub fn imp(a: Expr, b: Expr) -> Expr {
    Expr::apply(IMP, vec![a, b])
}

pub fn prop(i: usize) -> Expr {
    Expr::atom(format!("p{i}"))
}

/// Splits a binary connective application into its operands.
pub fn binary<'a>(e: &'a Expr, connective: &str) -> Option<(&'a Expr, &'a Expr)> {
    match e {
        Expr::Apply(h, args) if h == connective && args.len() == 2 => Some((&args[0], &args[1])),
        _ => None,
    }
}

/// Whether `e` is built only from atoms and the three connectives.
pub fn is_formula(e: &Expr) -> bool {
    match e {
        Expr::Atom(s) => ![AND, OR, IMP].contains(&s.as_str()),
        Expr::Apply(h, args) => [AND, OR, IMP].contains(&h.as_str()) && args.len() == 2 && args.iter().all(is_formula),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TacticKind {
    Assumption,
    ConjSplit,
    ImpIntro,
    DisjLeft,
    DisjRight,
    Mp,
}

impl TacticKind {
    pub const ALL: [TacticKind; 6] = [
        TacticKind::Assumption,
        TacticKind::ConjSplit,
        TacticKind::ImpIntro,
        TacticKind::DisjLeft,
        TacticKind::DisjRight,
        TacticKind::Mp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TacticKind::Assumption => "assumption",
            TacticKind::ConjSplit => "conj_split",
            TacticKind::ImpIntro => "imp_intro",
            TacticKind::DisjLeft => "disj_left",
            TacticKind::DisjRight => "disj_right",
            TacticKind::Mp => "mp",
        }
    }
}

impl FromStr for TacticKind {
    type Err = ProverError;

    fn from_str(s: &str) -> Result<Self> {
        TacticKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| ProverError::UnknownTactic(s.to_string()))
    }
}

/// A tactic with its premise argument; only `mp` takes one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tactic {
    pub kind: TacticKind,
    pub premise_arg: Option<String>,
}

impl Tactic {
    pub fn simple(kind: TacticKind) -> Self {
        assert!(kind != TacticKind::Mp, "mp needs a premise argument");
        Tactic { kind, premise_arg: None }
    }

    pub fn mp(premise: impl Into<String>) -> Self {
        Tactic { kind: TacticKind::Mp, premise_arg: Some(premise.into()) }
    }
}

impl fmt::Display for Tactic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.premise_arg {
            Some(p) => write!(f, "{} {p}", self.kind.name()),
            None => f.write_str(self.kind.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Goal {
    pub target: Expr,
    pub local_premises: BTreeSet<Expr>,
}

impl Goal {
    pub fn new(target: Expr) -> Self {
        Goal { target, local_premises: BTreeSet::new() }
    }

    pub fn with_premises(target: Expr, premises: impl IntoIterator<Item = Expr>) -> Self {
        Goal { target, local_premises: premises.into_iter().collect() }
    }

    /// The goal as one expression: the bare target, or
    /// `(sequent target l1 .. lk)` when there are local premises.
    pub fn to_expr(&self) -> Expr {
        if self.local_premises.is_empty() {
            self.target.clone()
        } else {
            let mut args = vec![self.target.clone()];
            args.extend(self.local_premises.iter().cloned());
            Expr::apply("sequent", args)
        }
    }
}

/// Named statements available to `assumption` and `mp`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PremisePool {
    names: Vec<String>,
    statements: Vec<Expr>,
    by_name: HashMap<String, usize>,
    by_statement: HashMap<Expr, usize>,
}

impl PremisePool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a premise; a repeated name or statement is ignored.
    pub fn push(&mut self, name: impl Into<String>, statement: Expr) {
        let name = name.into();
        if self.by_name.contains_key(&name) || self.by_statement.contains_key(&statement) {
            return;
        }
        let i = self.names.len();
        self.by_name.insert(name.clone(), i);
        self.by_statement.insert(statement.clone(), i);
        self.names.push(name);
        self.statements.push(statement);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn statement(&self, i: usize) -> &Expr {
        &self.statements[i]
    }

    pub fn get(&self, name: &str) -> Option<&Expr> {
        self.by_name.get(name).map(|&i| &self.statements[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Index of the premise whose statement is `e`.
    pub fn find(&self, e: &Expr) -> Option<usize> {
        self.by_statement.get(e).copied()
    }

    /// Premises `(imp A B)` whose conclusion `B` is `target`.
    pub fn implications_to(&self, target: &Expr) -> Vec<usize> {
        (0..self.len()).filter(|&i| binary(&self.statements[i], IMP).is_some_and(|(_, b)| b == target)).collect()
    }
}

/// Subgoals produced by `tactic` on `goal`, or `None` if it does not apply.
pub fn tactic_outcome(goal: &Goal, tactic: &Tactic, pool: &PremisePool) -> Option<Vec<Goal>> {
    let t = &goal.target;
    let same_ctx = |target: &Expr| Goal { target: target.clone(), local_premises: goal.local_premises.clone() };
    match tactic.kind {
        TacticKind::Assumption => {
            (goal.local_premises.contains(t) || pool.find(t).is_some()).then(Vec::new)
        }
        TacticKind::ConjSplit => binary(t, AND).map(|(a, b)| vec![same_ctx(a), same_ctx(b)]),
        TacticKind::ImpIntro => binary(t, IMP).map(|(a, b)| {
            let mut g = same_ctx(b);
            g.local_premises.insert(a.clone());
            vec![g]
        }),
        TacticKind::DisjLeft => binary(t, OR).map(|(a, _)| vec![same_ctx(a)]),
        TacticKind::DisjRight => binary(t, OR).map(|(_, b)| vec![same_ctx(b)]),
        TacticKind::Mp => {
            let p = pool.get(tactic.premise_arg.as_deref()?)?;
            let (a, b) = binary(p, IMP)?;
            (b == t).then(|| vec![same_ctx(a)])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Open,
    Proved,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// A new fringe was appended at this index.
    NewFringe(usize),
    /// The resulting fringe already existed at this index.
    Duplicate(usize),
    Inapplicable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    pub fringe: usize,
    pub goal: usize,
    pub tactic: Tactic,
    pub outcome: Outcome,
}

#[derive(Debug, Clone)]
pub struct ProofState {
    pub initial_goal: Goal,
    pub fringes: Vec<Vec<Goal>>,
    pub history: Vec<HistoryEntry>,
    pub status: Status,
    seen: HashMap<Vec<Goal>, usize>,
}

fn fringe_key(f: &[Goal]) -> Vec<Goal> {
    let mut k = f.to_vec();
    k.sort();
    k
}

impl ProofState {
    pub fn new(goal: Goal) -> Self {
        let first = vec![goal.clone()];
        let mut seen = HashMap::new();
        seen.insert(first.clone(), 0);
        ProofState { initial_goal: goal, fringes: vec![first], history: Vec::new(), status: Status::Open, seen }
    }

    pub fn is_proved(&self) -> bool {
        self.status == Status::Proved
    }

    /// Marks an open state as given up.
    pub fn fail(&mut self) {
        if self.status == Status::Open {
            self.status = Status::Failed;
        }
    }

    /// Applies `tactic` to goal `goal_idx` of fringe `fringe_idx` in place.
    /// An inapplicable tactic is recorded in the history and leaves the
    /// fringes unchanged.
    pub fn apply(&mut self, fringe_idx: usize, goal_idx: usize, tactic: &Tactic, pool: &PremisePool) -> Result<Outcome> {
        if self.status != Status::Open {
            return Err(ProverError::StateClosed);
        }
        let fringe = self
            .fringes
            .get(fringe_idx)
            .filter(|f| goal_idx < f.len())
            .ok_or(ProverError::InvalidIndex { fringe: fringe_idx, goal: goal_idx })?;
        let outcome = match tactic_outcome(&fringe[goal_idx], tactic, pool) {
            None => Outcome::Inapplicable,
            Some(subgoals) => {
                let mut next: Vec<Goal> = Vec::with_capacity(fringe.len() + subgoals.len());
                let rest = fringe[..goal_idx].iter().chain(subgoals.iter()).chain(&fringe[goal_idx + 1..]);
                for g in rest {
                    if !next.contains(g) {
                        next.push(g.clone());
                    }
                }
                let key = fringe_key(&next);
                match self.seen.get(&key) {
                    Some(&i) => Outcome::Duplicate(i),
                    None => {
                        let i = self.fringes.len();
                        if next.is_empty() {
                            self.status = Status::Proved;
                        }
                        self.seen.insert(key, i);
                        self.fringes.push(next);
                        Outcome::NewFringe(i)
                    }
                }
            }
        };
        self.history.push(HistoryEntry { fringe: fringe_idx, goal: goal_idx, tactic: tactic.clone(), outcome });
        Ok(outcome)
    }
}

/// Functional form of [`ProofState::apply`].
pub fn apply_tactic(state: &ProofState, fringe_idx: usize, goal_idx: usize, tactic: &Tactic, pool: &PremisePool) -> Result<ProofState> {
    let mut next = state.clone();
    next.apply(fringe_idx, goal_idx, tactic, pool)?;
    Ok(next)
}

/// One step of a proof script.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScriptStep {
    pub fringe: usize,
    pub goal: usize,
    pub tactic: String,
    pub arg: Option<String>,
}

impl ScriptStep {
    pub fn new(fringe: usize, goal: usize, tactic: &Tactic) -> Self {
        ScriptStep { fringe, goal, tactic: tactic.kind.name().to_string(), arg: tactic.premise_arg.clone() }
    }

    pub fn to_tactic(&self) -> Option<Tactic> {
        let kind: TacticKind = self.tactic.parse().ok()?;
        match (kind, &self.arg) {
            (TacticKind::Mp, Some(a)) => Some(Tactic::mp(a.clone())),
            (TacticKind::Mp, None) | (_, Some(_)) => None,
            (k, None) => Some(Tactic::simple(k)),
        }
    }
}

/// Replays `script` from the initial goal; true iff it ends proved. Any
/// malformed, inapplicable or out-of-range step rejects the script.
pub fn replay(goal: &Goal, script: &[ScriptStep], pool: &PremisePool) -> bool {
    let mut state = ProofState::new(goal.clone());
    for step in script {
        let Some(tactic) = step.to_tactic() else { return false };
        match state.apply(step.fringe, step.goal, &tactic, pool) {
            Ok(Outcome::NewFringe(_)) => {}
            _ => return false,
        }
    }
    state.is_proved()
}

/// Checks a theorem's recorded proof against `pool`.
pub fn check_proof(record: &TheoremRecord, pool: &PremisePool) -> bool {
    replay(&Goal::new(record.statement.clone()), &record.proof, pool)
}

#[cfg(test)]
mod tests;
