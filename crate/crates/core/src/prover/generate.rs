//! Forward generation of provable theorems.
//!
//! A theorem is built as a random proof tree read bottom-up: leaves close a
//! goal by `assumption`, inner nodes invert one of the other five rules.
//! The tree is then replayed through [`ProofState`] to obtain the script,
//! so a recorded proof is always one the environment accepts.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::*;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoremRecord {
    pub name: String,
    pub statement: Expr,
    /// Earlier records the proof consumes, in first-use order.
    #[serde(rename = "deps")]
    pub dependencies: Vec<String>,
    /// Empty for axioms.
    pub proof: Vec<ScriptStep>,
}

impl TheoremRecord {
    pub fn is_axiom(&self) -> bool {
        self.proof.is_empty()
    }
}

/// Axioms followed by theorems; each record may use only the records
/// before it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub records: Vec<TheoremRecord>,
}

impl Corpus {
    pub fn theorems(&self) -> impl Iterator<Item = &TheoremRecord> {
        self.records.iter().filter(|r| !r.is_axiom())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.records.iter().position(|r| r.name == name)
    }

    /// Premises available to the record at `index`.
    pub fn pool_before(&self, index: usize) -> PremisePool {
        let mut pool = PremisePool::new();
        for r in &self.records[..index] {
            pool.push(r.name.clone(), r.statement.clone());
        }
        pool
    }

    pub fn full_pool(&self) -> PremisePool {
        self.pool_before(self.records.len())
    }

    /// Checks every theorem's proof against its own pool.
    pub fn check_all(&self) -> bool {
        (0..self.records.len()).filter(|&i| !self.records[i].is_axiom()).all(|i| check_proof(&self.records[i], &self.pool_before(i)))
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
    }

    pub fn from_jsonl(text: &str) -> serde_json::Result<Self> {
        let records = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<serde_json::Result<_>>()?;
        Ok(Corpus { records })
    }
}

/// Statements with more AST nodes than this are discarded, so that reuse of
/// earlier theorems as subterms does not grow formulas without bound.
pub const MAX_STATEMENT_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub count: usize,
    pub max_depth: usize,
    pub atom_count: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { seed: 0, count: 300, max_depth: 3, atom_count: 8 }
    }
}

#[derive(Debug, Clone)]
struct Node {
    goal: Goal,
    tactic: Tactic,
    dep: Option<String>,
    children: Vec<Node>,
}

struct Generator<'a> {
    rng: ChaCha8Rng,
    pool: &'a PremisePool,
    atoms: usize,
    implications: Vec<usize>,
}

impl Generator<'_> {
    fn formula(&mut self) -> Expr {
        let a = prop(self.rng.gen_range(0..self.atoms));
        if self.rng.gen_bool(0.7) {
            return a;
        }
        let b = prop(self.rng.gen_range(0..self.atoms));
        match self.rng.gen_range(0..3) {
            0 => and(a, b),
            1 => or(a, b),
            _ => imp(a, b),
        }
    }

    fn leaf(&mut self, locals: &BTreeSet<Expr>) -> Node {
        let use_local = !locals.is_empty() && (self.pool.is_empty() || self.rng.gen_bool(0.6));
        let (target, dep) = if use_local {
            let i = self.rng.gen_range(0..locals.len());
            (locals.iter().nth(i).unwrap().clone(), None)
        } else {
            let i = self.rng.gen_range(0..self.pool.len());
            (self.pool.statement(i).clone(), Some(self.pool.name(i).to_string()))
        };
        let dep = dep.filter(|_| !locals.contains(&target));
        Node { goal: Goal { target, local_premises: locals.clone() }, tactic: Tactic::simple(TacticKind::Assumption), dep, children: vec![] }
    }

    fn tree(&mut self, depth: usize, locals: &BTreeSet<Expr>) -> Node {
        if depth <= 1 || self.rng.gen_bool(0.15) {
            return self.leaf(locals);
        }
        let node = |target: Expr, tactic: Tactic, dep: Option<String>, children: Vec<Node>| Node {
            goal: Goal { target, local_premises: locals.clone() },
            tactic,
            dep,
            children,
        };
        match self.rng.gen_range(0..11) {
            0..=2 => {
                let a = self.tree(depth - 1, locals);
                let b = self.tree(depth - 1, locals);
                node(and(a.goal.target.clone(), b.goal.target.clone()), Tactic::simple(TacticKind::ConjSplit), None, vec![a, b])
            }
            3..=5 => {
                let hyp = self.formula();
                let mut inner = locals.clone();
                inner.insert(hyp.clone());
                let b = self.tree(depth - 1, &inner);
                node(imp(hyp, b.goal.target.clone()), Tactic::simple(TacticKind::ImpIntro), None, vec![b])
            }
            6 | 7 => {
                let a = self.tree(depth - 1, locals);
                let other = self.formula();
                let left = self.rng.gen_bool(0.5);
                let (target, kind) = if left {
                    (or(a.goal.target.clone(), other), TacticKind::DisjLeft)
                } else {
                    (or(other, a.goal.target.clone()), TacticKind::DisjRight)
                };
                node(target, Tactic::simple(kind), None, vec![a])
            }
            _ => {
                let Some(&i) = self.implications.choose(&mut self.rng) else { return self.leaf(locals) };
                let (a, b) = binary(self.pool.statement(i), IMP).expect("indexed implications");
                let (a, b) = (a.clone(), b.clone());
                match prove_bounded(&Goal { target: a, local_premises: locals.clone() }, depth - 1, self.pool) {
                    Some(sub) => {
                        let name = self.pool.name(i).to_string();
                        node(b, Tactic::mp(name.clone()), Some(name), vec![sub])
                    }
                    None => self.leaf(locals),
                }
            }
        }
    }
}

/// Depth-limited exhaustive proof search returning a proof tree.
fn prove_bounded(goal: &Goal, depth: usize, pool: &PremisePool) -> Option<Node> {
    if depth == 0 {
        return None;
    }
    let t = &goal.target;
    let mk = |tactic: Tactic, dep: Option<String>, children: Vec<Node>| Node { goal: goal.clone(), tactic, dep, children };
    if goal.local_premises.contains(t) {
        return Some(mk(Tactic::simple(TacticKind::Assumption), None, vec![]));
    }
    if let Some(i) = pool.find(t) {
        return Some(mk(Tactic::simple(TacticKind::Assumption), Some(pool.name(i).to_string()), vec![]));
    }
    let mut kinds = vec![TacticKind::ConjSplit, TacticKind::ImpIntro, TacticKind::DisjLeft, TacticKind::DisjRight];
    kinds.retain(|k| tactic_outcome(goal, &Tactic::simple(*k), pool).is_some());
    for k in kinds {
        let subs = tactic_outcome(goal, &Tactic::simple(k), pool).unwrap();
        let children: Option<Vec<Node>> = subs.iter().map(|s| prove_bounded(s, depth - 1, pool)).collect();
        if let Some(children) = children {
            return Some(mk(Tactic::simple(k), None, children));
        }
    }
    for i in pool.implications_to(t) {
        let tac = Tactic::mp(pool.name(i));
        let subs = tactic_outcome(goal, &tac, pool)?;
        if let Some(child) = prove_bounded(&subs[0], depth - 1, pool) {
            return Some(mk(tac, Some(pool.name(i).to_string()), vec![child]));
        }
    }
    None
}

/// Replays a proof tree, always working on goal 0 of the newest fringe.
/// Returns the script and the premises it consumed, or `None` if some step
/// would not create a fresh fringe.
fn linearize(root: &Node, pool: &PremisePool) -> Option<(Vec<ScriptStep>, Vec<String>)> {
    let mut state = ProofState::new(root.goal.clone());
    let mut agenda: Vec<&Node> = vec![root];
    let mut script = Vec::new();
    let mut deps: Vec<String> = Vec::new();
    while let Some(&node) = agenda.first() {
        let f = state.fringes.len() - 1;
        match state.apply(f, 0, &node.tactic, pool).ok()? {
            Outcome::NewFringe(_) => {}
            _ => return None,
        }
        script.push(ScriptStep::new(f, 0, &node.tactic));
        if let Some(d) = &node.dep {
            if !deps.contains(d) {
                deps.push(d.clone());
            }
        }
        let mut next: Vec<&Node> = Vec::new();
        for n in node.children.iter().chain(agenda[1..].iter().copied()) {
            if !next.iter().any(|m| m.goal == n.goal) {
                next.push(n);
            }
        }
        debug_assert!(next.iter().map(|n| &n.goal).eq(state.fringes.last().unwrap().iter()));
        agenda = next;
    }
    state.is_proved().then_some((script, deps))
}

fn axioms(rng: &mut ChaCha8Rng, atoms: usize) -> Vec<TheoremRecord> {
    let mut statements: Vec<Expr> = Vec::new();
    let mut facts: Vec<usize> = (0..atoms).collect();
    facts.shuffle(rng);
    for &i in facts.iter().take(atoms.div_ceil(2)) {
        statements.push(prop(i));
    }
    let mut tries = 0;
    while statements.len() < atoms.div_ceil(2) + atoms && tries < 100 * atoms {
        tries += 1;
        let head = rng.gen_range(0..atoms);
        let lhs = if rng.gen_bool(0.3) { and(prop(rng.gen_range(0..atoms)), prop(rng.gen_range(0..atoms))) } else { prop(rng.gen_range(0..atoms)) };
        let s = imp(lhs.clone(), prop(head));
        if lhs != prop(head) && !statements.contains(&s) {
            statements.push(s);
        }
    }
    statements
        .into_iter()
        .enumerate()
        .map(|(i, statement)| TheoremRecord { name: format!("ax{i}"), statement, dependencies: vec![], proof: vec![] })
        .collect()
}

/// Generates `count` theorems (fewer if the attempt limit is reached) over
/// `atom_count` atoms, each with a recorded proof tree of depth at most
/// `max_depth`. Output is a pure function of the arguments.
pub fn generate_theorems(seed: u64, count: usize, max_depth: usize, atom_count: usize) -> Corpus {
    assert!(max_depth >= 1, "max_depth must be at least 1");
    assert!(atom_count >= 1, "need at least one atom");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Corpus { records: axioms(&mut rng, atom_count) };
    let mut pool = corpus.full_pool();
    let mut made = 0;
    let mut attempts = 0;
    while made < count && attempts < 100 * count.max(1) {
        attempts += 1;
        let implications = (0..pool.len()).filter(|&i| binary(pool.statement(i), IMP).is_some()).collect();
        let depth = rng.gen_range(2.min(max_depth)..=max_depth);
        let sub_seed = rng.gen();
        let mut gen = Generator { rng: ChaCha8Rng::seed_from_u64(sub_seed), pool: &pool, atoms: atom_count, implications };
        let tree = gen.tree(depth, &BTreeSet::new());
        let statement = tree.goal.target.clone();
        if statement.size() > MAX_STATEMENT_SIZE || pool.find(&statement).is_some() {
            continue;
        }
        let Some((proof, dependencies)) = linearize(&tree, &pool) else { continue };
        let name = format!("thm{made}");
        pool.push(name.clone(), statement.clone());
        corpus.records.push(TheoremRecord { name, statement, dependencies, proof });
        made += 1;
    }
    corpus
}

impl GenConfig {
    pub fn generate(&self) -> Corpus {
        generate_theorems(self.seed, self.count, self.max_depth, self.atom_count)
    }
}
