use super::*;
use crate::models::{Arch, EncoderConfig};
use crate::sexpr::parse;

fn e(s: &str) -> Expr {
    parse(s).unwrap()
}

fn pool(entries: &[(&str, &str)]) -> PremisePool {
    let mut p = PremisePool::new();
    for (n, s) in entries {
        p.push(*n, e(s));
    }
    p
}

fn small_corpus() -> Corpus {
    generate_theorems(3, 60, 3, 6)
}

#[test]
fn assumption_closes_goal() {
    let p = pool(&[("a", "p0")]);
    let mut s = ProofState::new(Goal::new(e("p0")));
    assert_eq!(s.apply(0, 0, &Tactic::simple(TacticKind::Assumption), &p).unwrap(), Outcome::NewFringe(1));
    assert!(s.is_proved());
    assert!(s.fringes[1].is_empty());
    let local = Goal::with_premises(e("p3"), [e("p3")]);
    assert!(ProofState::new(local).apply(0, 0, &Tactic::simple(TacticKind::Assumption), &PremisePool::new()).is_ok());
}

#[test]
fn conj_split_appends_fringe() {
    let s = ProofState::new(Goal::new(e("(and p0 p1)")));
    let next = apply_tactic(&s, 0, 0, &Tactic::simple(TacticKind::ConjSplit), &PremisePool::new()).unwrap();
    assert_eq!(next.fringes.len(), 2);
    assert_eq!(next.fringes[0], [Goal::new(e("(and p0 p1)"))]);
    assert_eq!(next.fringes[1], [Goal::new(e("p0")), Goal::new(e("p1"))]);
    assert_eq!(s.fringes.len(), 1);
}

#[test]
fn mp_replaces_goal_by_antecedent() {
    let p = pool(&[("h", "(imp p0 p1)")]);
    let mut s = ProofState::new(Goal::new(e("p1")));
    s.apply(0, 0, &Tactic::mp("h"), &p).unwrap();
    assert_eq!(s.fringes[1], [Goal::new(e("p0"))]);
    assert_eq!(s.apply(1, 0, &Tactic::mp("h"), &p).unwrap(), Outcome::Inapplicable);
    assert_eq!(s.apply(1, 0, &Tactic::mp("missing"), &p).unwrap(), Outcome::Inapplicable);
}

#[test]
fn imp_intro_and_disjunctions() {
    let mut s = ProofState::new(Goal::new(e("(imp p0 (or p1 p0))")));
    let none = PremisePool::new();
    s.apply(0, 0, &Tactic::simple(TacticKind::ImpIntro), &none).unwrap();
    assert_eq!(s.fringes[1], [Goal::with_premises(e("(or p1 p0)"), [e("p0")])]);
    assert_eq!(s.apply(1, 0, &Tactic::simple(TacticKind::DisjLeft), &none).unwrap(), Outcome::NewFringe(2));
    s.apply(1, 0, &Tactic::simple(TacticKind::DisjRight), &none).unwrap();
    s.apply(3, 0, &Tactic::simple(TacticKind::Assumption), &none).unwrap();
    assert!(s.is_proved());
    assert_eq!(s.history.len(), 4);
}

#[test]
fn failures_are_recorded_not_fatal() {
    let mut s = ProofState::new(Goal::new(e("p0")));
    let none = PremisePool::new();
    assert_eq!(s.apply(0, 0, &Tactic::simple(TacticKind::ConjSplit), &none).unwrap(), Outcome::Inapplicable);
    assert_eq!(s.fringes.len(), 1);
    assert_eq!(s.history.len(), 1);
    assert!(matches!(s.apply(3, 0, &Tactic::simple(TacticKind::Assumption), &none), Err(ProverError::InvalidIndex { .. })));
    assert!(matches!(s.apply(0, 1, &Tactic::simple(TacticKind::Assumption), &none), Err(ProverError::InvalidIndex { .. })));
}

#[test]
fn duplicate_fringes_are_not_appended() {
    let mut s = ProofState::new(Goal::new(e("(and (and p0 p1) (and p1 p0))")));
    let none = PremisePool::new();
    let split = Tactic::simple(TacticKind::ConjSplit);
    s.apply(0, 0, &split, &none).unwrap();
    s.apply(1, 0, &split, &none).unwrap(); // [p0, p1, (and p1 p0)]
    s.apply(2, 2, &split, &none).unwrap(); // [p0, p1]
    s.apply(1, 1, &split, &none).unwrap(); // [(and p0 p1), p1, p0]
    let out = s.apply(4, 0, &split, &none).unwrap(); // [p0, p1, p1, p0] deduplicated to [p0, p1]
    assert_eq!(out, Outcome::Duplicate(3));
    assert_eq!(s.fringes.len(), 5);
}

#[test]
fn proved_is_absorbing() {
    let p = pool(&[("a", "p0")]);
    let mut s = ProofState::new(Goal::new(e("p0")));
    s.apply(0, 0, &Tactic::simple(TacticKind::Assumption), &p).unwrap();
    assert!(matches!(s.apply(0, 0, &Tactic::simple(TacticKind::Assumption), &p), Err(ProverError::StateClosed)));
    s.fail();
    assert_eq!(s.status, Status::Proved);
}

#[test]
fn script_steps_round_trip() {
    let t = Tactic::mp("ax1");
    let step = ScriptStep::new(2, 1, &t);
    let json = serde_json::to_string(&step).unwrap();
    assert_eq!(json, r#"{"fringe":2,"goal":1,"tactic":"mp","arg":"ax1"}"#);
    assert_eq!(serde_json::from_str::<ScriptStep>(&json).unwrap().to_tactic(), Some(t));
    assert_eq!(ScriptStep { fringe: 0, goal: 0, tactic: "mp".into(), arg: None }.to_tactic(), None);
    assert_eq!(ScriptStep { fringe: 0, goal: 0, tactic: "assumption".into(), arg: Some("x".into()) }.to_tactic(), None);
}

#[test]
fn generated_proofs_replay() {
    let c = small_corpus();
    assert_eq!(c.theorems().count(), 60);
    assert!(c.check_all());
    assert!(c.records.iter().all(|r| is_formula(&r.statement)));
}

#[test]
fn generation_is_deterministic_and_acyclic() {
    let c = small_corpus();
    assert_eq!(c, small_corpus());
    assert_ne!(c, generate_theorems(4, 60, 3, 6));
    for (i, r) in c.records.iter().enumerate() {
        for d in &r.dependencies {
            assert!(c.position(d).unwrap() < i, "{} uses later {d}", r.name);
        }
    }
    let statements: std::collections::HashSet<&Expr> = c.records.iter().map(|r| &r.statement).collect();
    assert_eq!(statements.len(), c.records.len());
}

#[test]
fn corpus_jsonl_round_trip() {
    let c = small_corpus();
    let text = c.to_jsonl();
    assert_eq!(text.lines().count(), c.records.len());
    assert!(text.lines().next().unwrap().contains(r#""deps":[]"#));
    assert_eq!(Corpus::from_jsonl(&text).unwrap(), c);
}

#[test]
fn incomplete_scripts_are_rejected() {
    let c = small_corpus();
    let i = (0..c.records.len()).find(|&i| c.records[i].proof.len() >= 2).unwrap();
    let mut r = c.records[i].clone();
    let pool = c.pool_before(i);
    assert!(check_proof(&r, &pool));
    r.proof.pop();
    assert!(!check_proof(&r, &pool));
    r.proof.clear();
    assert!(!check_proof(&r, &pool));
    let mut bad = c.records[i].clone();
    bad.proof[0].fringe = 9;
    assert!(!check_proof(&bad, &pool));
}

#[test]
fn bfs_one_step_with_budget_one() {
    let p = pool(&[("a", "p0")]);
    let r = bfs_search(&Goal::new(e("p0")), &p, &mut UniformPolicy, 1, DEFAULT_TOP_K).unwrap();
    assert!(r.proved);
    assert_eq!(r.steps_used, 1);
    assert!(matches!(bfs_search(&Goal::new(e("p0")), &p, &mut UniformPolicy, 0, 5), Err(ProverError::ZeroBudget)));
}

#[test]
fn exhaustive_bfs_proves_generated_corpus() {
    let c = small_corpus();
    for t in c.tasks() {
        let r = exhaustive_bfs(&t.goal, &t.pool, 10_000).unwrap();
        assert!(r.proved, "{}", t.name);
        assert!(replay(&t.goal, &r.script, &t.pool));
        assert_eq!(r.state.fringes[0], std::slice::from_ref(&t.goal));
    }
}

#[test]
fn uniform_bestfs_matches_bfs_order() {
    let c = small_corpus();
    for t in c.tasks().iter().take(20) {
        let a = bfs_search(&t.goal, &t.pool, &mut UniformPolicy, 50, DEFAULT_TOP_K).unwrap();
        let b = bestfs_search(&t.goal, &t.pool, &mut UniformPolicy, 50, DEFAULT_TOP_K).unwrap();
        assert_eq!(a.state.history, b.state.history);
        assert_eq!(a.script, b.script);
    }
}

#[test]
fn oracle_bestfs_follows_recorded_proof() {
    let c = small_corpus();
    for (i, r) in c.records.iter().enumerate().filter(|(_, r)| !r.is_axiom()) {
        let pool = c.pool_before(i);
        let goal = Goal::new(r.statement.clone());
        let mut oracle = OraclePolicy::from_script(&goal, &r.proof, &pool);
        let res = bestfs_search(&goal, &pool, &mut oracle, 1000, usize::MAX).unwrap();
        assert!(res.proved);
        assert_eq!(res.steps_used, r.proof.len(), "{}", r.name);
        let again = bestfs_search(&goal, &pool, &mut oracle, 1000, usize::MAX).unwrap();
        assert_eq!(res.script, again.script);
    }
}

#[test]
fn fringe_search_single_goal_and_absorbing() {
    let p = pool(&[("a", "p0")]);
    let r = fringe_search(&Goal::new(e("p0")), &p, &mut UniformPolicy, 10, FringeMode::Greedy).unwrap();
    assert!(r.proved);
    assert_eq!(r.steps_used, 1);
    assert_eq!(r.state.history.len(), 1);
}

#[test]
fn fringe_search_scripts_always_check() {
    let c = small_corpus();
    for t in c.tasks() {
        for mode in [FringeMode::Greedy, FringeMode::Sample { seed: 1 }] {
            let r = fringe_search(&t.goal, &t.pool, &mut UniformPolicy, 30, mode).unwrap();
            if r.proved {
                assert!(replay(&t.goal, &r.script, &t.pool), "{}", t.name);
            } else {
                assert_eq!(r.state.status, Status::Failed);
            }
        }
        let a = fringe_search(&t.goal, &t.pool, &mut UniformPolicy, 30, FringeMode::Greedy).unwrap();
        let b = fringe_search(&t.goal, &t.pool, &mut UniformPolicy, 30, FringeMode::Greedy).unwrap();
        assert_eq!(a.state.history, b.state.history);
    }
}

#[test]
fn proof_log_and_cumulative() {
    let log = vec![
        AttemptLog { goal: "a".into(), proved: true, steps: 2, script: vec![] },
        AttemptLog { goal: "b".into(), proved: false, steps: 5, script: vec![] },
        AttemptLog { goal: "c".into(), proved: true, steps: 1, script: vec![] },
        AttemptLog { goal: "d".into(), proved: false, steps: 5, script: vec![] },
    ];
    let names: Vec<String> = ["a", "b", "c", "d"].map(String::from).to_vec();
    assert_eq!(cumulative(&names, &log).unwrap(), 0.5);
    let mut later = log.clone();
    later.push(AttemptLog { goal: "b".into(), proved: true, steps: 3, script: vec![] });
    later.push(AttemptLog { goal: "b".into(), proved: false, steps: 5, script: vec![] });
    assert_eq!(cumulative(&names, &later).unwrap(), 0.75);
    let text = write_proof_log(&later);
    assert!(text.starts_with(r#"{"goal":"a","proved":true,"steps":2,"script":[]}"#));
    assert_eq!(read_proof_log(&text).unwrap(), later);
    assert!(matches!(cumulative(&[], &log), Err(ProverError::EmptyGoalSet)));
}

#[test]
fn pass_at_one_counts_proved_tasks() {
    let p = pool(&[("a", "p0")]);
    let tasks: Vec<ProofTask> = ["p0", "p1", "(and p0 p0)", "(and p0 p1)"]
        .iter()
        .enumerate()
        .map(|(i, s)| ProofTask { name: format!("g{i}"), goal: Goal::new(e(s)), pool: p.clone() })
        .collect();
    assert_eq!(evaluate(&tasks, &mut UniformPolicy, EvalMode::PassAt1, 10, None).unwrap(), 0.5);
    assert!(matches!(evaluate(&[], &mut UniformPolicy, EvalMode::PassAt1, 10, None), Err(ProverError::EmptyGoalSet)));
}

fn neural(arch: Arch, c: &Corpus) -> NeuralPolicy {
    let cfg = PolicyConfig { encoder: EncoderConfig { heads: 2, d_ff: 16, ..EncoderConfig::new(arch, 8, 1) }, seed: 1 };
    NeuralPolicy::new(cfg, c.records.iter().map(|r| &r.statement)).unwrap()
}

#[test]
fn neural_policy_searches_soundly() {
    let c = small_corpus();
    let tasks = c.tasks();
    for arch in [Arch::Mpnn, Arch::Transformer] {
        let mut policy = neural(arch, &c);
        for t in tasks.iter().take(10) {
            let r = fringe_search(&t.goal, &t.pool, &mut policy, 20, FringeMode::Greedy).unwrap();
            if r.proved {
                assert!(replay(&t.goal, &r.script, &t.pool));
            }
            let r = bestfs_search(&t.goal, &t.pool, &mut policy, 20, DEFAULT_TOP_K).unwrap();
            if r.proved {
                assert!(replay(&t.goal, &r.script, &t.pool));
            }
        }
    }
}

#[test]
fn reinforce_is_deterministic_and_finite() {
    let c = generate_theorems(5, 8, 3, 5);
    let tasks = c.tasks();
    let cfg = ReinforceConfig { epochs: 2, budget: 6, ..ReinforceConfig::default() };
    let mut a = neural(Arch::Mpnn, &c);
    let ra = reinforce_train(&mut a, &tasks, &cfg).unwrap();
    let mut b = neural(Arch::Mpnn, &c);
    let rb = reinforce_train(&mut b, &tasks, &cfg).unwrap();
    assert_eq!(ra.history, rb.history);
    assert!(ra.all_grads_finite);
    assert!(ra.cumulative_proved.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(ra.history.len(), 16);
    for (pa, pb) in a.store.iter().zip(b.store.iter()) {
        assert_eq!(pa.data, pb.data);
    }
}
