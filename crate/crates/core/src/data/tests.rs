use proptest::prelude::*;

use super::*;
use crate::models::{Arch, Encoder, EncoderConfig, PremiseHead};
use crate::prover::{generate_theorems, ScriptStep, Tactic, TheoremRecord};
use crate::sexpr::parse;
use crate::tensor::{Graph, ParamStore};
use crate::vocab::build_vocab;

fn rec(name: &str, statement: &str, deps: &[&str]) -> TheoremRecord {
    let proof = if deps.is_empty() { vec![] } else { vec![ScriptStep::new(0, 0, &Tactic::mp(deps[0]))] };
    TheoremRecord { name: name.into(), statement: parse(statement).unwrap(), dependencies: deps.iter().map(|d| d.to_string()).collect(), proof }
}

fn tiny_corpus() -> Corpus {
    Corpus { records: vec![rec("b", "B", &[]), rec("c", "C", &[]), rec("a", "A", &["b"]), rec("d", "D", &["c"])] }
}

#[test]
fn negatives_avoid_the_goals_own_dependencies() {
    let ds = build_premise_dataset(&tiny_corpus(), 3, 0).unwrap();
    let a = parse("A").unwrap();
    let for_a: Vec<_> = ds.examples.iter().filter(|e| e.goal == a).collect();
    assert_eq!(for_a.len(), 4);
    for e in for_a {
        let want = if e.label == 1 { "B" } else { "C" };
        assert_eq!(e.premise, parse(want).unwrap());
    }
}

#[test]
fn label_fraction_matches_negative_ratio() {
    let corpus = generate_theorems(1, 80, 3, 6);
    for k in [1, 3, 4] {
        let ds = build_premise_dataset(&corpus, k, 5).unwrap();
        let pos = ds.examples.iter().filter(|e| e.label == 1).count();
        assert_eq!(pos * (1 + k), ds.examples.len());
        let [w0, w1] = ds.class_weights;
        assert!((w1 / w0 - k as f64).abs() < 1e-12);
    }
}

#[test]
fn negatives_are_used_premises_and_never_positives() {
    let corpus = generate_theorems(2, 60, 3, 6);
    let ds = build_premise_dataset(&corpus, 2, 1).unwrap();
    let used = used_premises(&corpus);
    let by_name = statement_map(&corpus);
    for e in ds.examples.iter().filter(|e| e.label == 0) {
        assert!(used.contains(&e.premise));
        let r = corpus.records.iter().find(|r| r.statement == e.goal).unwrap();
        assert!(r.dependencies.iter().all(|d| *by_name[d.as_str()] != e.premise));
    }
}

#[test]
fn corpus_without_dependencies_is_rejected() {
    let corpus = Corpus { records: vec![rec("b", "B", &[]), rec("c", "C", &[])] };
    assert_eq!(build_premise_dataset(&corpus, 1, 0), Err(DataError::NoDependencies));
    assert_eq!(build_premise_dataset(&tiny_corpus(), 0, 0), Err(DataError::NonPositive("negs_per_pos")));
}

#[test]
fn premise_dataset_is_seed_deterministic() {
    let corpus = generate_theorems(4, 40, 3, 6);
    assert_eq!(build_premise_dataset(&corpus, 2, 9).unwrap(), build_premise_dataset(&corpus, 2, 9).unwrap());
}

#[test]
fn holist_examples_are_consistent() {
    let corpus = generate_theorems(0, 80, 3, 8);
    let ds = build_holist_dataset(&corpus, 4, 0).unwrap();
    let used = used_premises(&corpus);
    let mp = ds.tactics.iter().position(|t| t == "mp").unwrap();
    assert!(!ds.examples.is_empty());
    for e in &ds.examples {
        assert_eq!(e.tactic_id, mp);
        assert_eq!(e.neg_premises.len(), 4);
        assert!(!e.neg_premises.contains(&e.pos_premise));
        assert!(e.neg_premises.iter().all(|n| used.contains(n)));
    }
    let steps: usize = corpus.theorems().map(|r| r.proof.len()).sum();
    assert_eq!(ds.tactic_examples.len(), steps);
    assert!(ds.tactic_examples.iter().all(|t| t.tactic < ds.tactics.len()));
}

#[test]
fn holist_without_premise_steps_is_rejected() {
    let mut r = rec("t", "(=> p0 p0)", &[]);
    r.proof = vec![
        ScriptStep::new(0, 0, &Tactic::simple(TacticKind::ImpIntro)),
        ScriptStep::new(1, 0, &Tactic::simple(TacticKind::Assumption)),
    ];
    let corpus = Corpus { records: vec![rec("b", "B", &[]), r] };
    assert_eq!(build_holist_dataset(&corpus, 1, 0), Err(DataError::NoPremiseSteps));
}

fn goal_examples(goals: usize, per_goal: usize) -> Vec<PremiseExample> {
    (0..goals)
        .flat_map(|g| {
            (0..per_goal).map(move |k| PremiseExample { goal: Expr::atom(format!("g{g}")), premise: Expr::atom(format!("p{k}")), label: (k % 2) as u8 })
        })
        .collect()
}

fn goals_of(xs: &[PremiseExample]) -> HashSet<Expr> {
    xs.iter().map(|e| e.goal.clone()).collect()
}

#[test]
fn split_counts_goals_not_examples() {
    let xs = goal_examples(10, 3);
    let s = split(&xs, |e| &e.goal, [0.8, 0.2, 0.0], 0).unwrap();
    assert_eq!((goals_of(&s.train).len(), goals_of(&s.val).len(), s.test.len()), (8, 2, 0));
    assert_eq!(s.train.len() + s.val.len(), 30);
    assert!(goals_of(&s.train).is_disjoint(&goals_of(&s.val)));
}

#[test]
fn split_rejects_bad_ratios() {
    let xs = goal_examples(4, 1);
    for r in [[0.5, 0.4, 0.0], [1.2, -0.2, 0.0], [f64::NAN, 0.5, 0.5]] {
        assert!(matches!(split(&xs, |e| &e.goal, r, 0), Err(DataError::RatioInvalid(_))));
    }
}

proptest! {
    #[test]
    fn split_partitions_by_goal(goals in 1usize..30, per in 1usize..4, a in 0u32..=10, b in 0u32..=10, seed in any::<u64>()) {
        prop_assume!(a + b <= 10);
        let ratios = [a as f64 / 10.0, b as f64 / 10.0, (10 - a - b) as f64 / 10.0];
        let xs = goal_examples(goals, per);
        let s = split(&xs, |e| &e.goal, ratios, seed).unwrap();
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), xs.len());
        let (tr, va, te) = (goals_of(&s.train), goals_of(&s.val), goals_of(&s.test));
        prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        prop_assert_eq!(tr.len(), (ratios[0] * goals as f64).round() as usize);
    }
}

#[test]
fn jsonl_round_trips() {
    let corpus = generate_theorems(0, 30, 3, 6);
    let p = build_premise_dataset(&corpus, 2, 0).unwrap().examples;
    assert_eq!(from_jsonl::<PremiseExample>(&to_jsonl(&p)).unwrap(), p);
    let h = build_holist_dataset(&corpus, 2, 0).unwrap().examples;
    let text = to_jsonl(&h);
    assert!(text.lines().next().unwrap().contains("\"negs\""));
    assert_eq!(from_jsonl::<HolistExample>(&text).unwrap(), h);
    assert!(matches!(from_jsonl::<PremiseExample>("{\"goal\":1}"), Err(DataError::Malformed { line: 1, .. })));
}

#[test]
fn order_probe_pairs_share_symbols() {
    let xs = order_probe_dataset(200, 6, 0);
    assert_eq!(xs.len(), 200);
    for pair in xs.chunks(2) {
        assert_eq!((pair[0].label, pair[1].label), (1, 0));
        assert_eq!(pair[0].goal, pair[0].premise);
        let (Expr::Apply(_, p), Expr::Apply(_, n)) = (&pair[0].premise, &pair[1].premise) else { panic!() };
        assert_eq!((&p[0], &p[1]), (&n[1], &n[0]));
        assert_ne!(p[0], p[1]);
    }
}

#[test]
fn empty_sets_do_not_batch() {
    let v = build_vocab([&parse("x").unwrap()], 1).unwrap();
    let mut table = ExprTable::new(v, EncodeOptions::default());
    let set = EncodedPremiseSet::new(&[], &mut table);
    assert!(matches!(set.batches(&table, 4, Representation::Graph, None), Err(DataError::EmptyDataset)));
}

#[test]
fn batched_forward_matches_unbatched() {
    let corpus = generate_theorems(3, 40, 3, 6);
    let mut xs = build_premise_dataset(&corpus, 1, 0).unwrap().examples;
    xs.truncate(14);
    xs.extend(order_probe_dataset(6, 4, 1));
    assert_eq!(xs.len(), 20);
    let exprs: Vec<&Expr> = xs.iter().flat_map(|e| [&e.goal, &e.premise]).collect();
    let vocab = build_vocab(exprs, 1).unwrap();
    for arch in [Arch::BoW, Arch::Mpnn, Arch::Gcn, Arch::Transformer, Arch::Sat, Arch::DirectedSAT, Arch::Ensemble] {
        let cfg = EncoderConfig { heads: 2, d_ff: 16, ..EncoderConfig::new(arch, 8, 2) };
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "enc", &cfg, vocab.len(), 3).unwrap();
        let head = PremiseHead::new(&mut store, "premise", 8, 4);
        let opts = EncodeOptions { masks: cfg.needs_masks(), ..EncodeOptions::default() };
        let mut table = ExprTable::new(vocab.clone(), opts);
        let set = EncodedPremiseSet::new(&xs, &mut table);
        let scores = |b: &PremiseBatch| {
            let mut g = Graph::new();
            let x = enc.encode(&mut g, &store, &b.goals).unwrap();
            let y = enc.encode(&mut g, &store, &b.premises).unwrap();
            let z = head.logits(&mut g, &store, x, y).unwrap();
            g.value(z).to_vec()
        };
        let repr = arch.representation();
        let whole: Vec<f64> = set.batches(&table, 20, repr, None).unwrap().flat_map(|b| scores(&b)).collect();
        let single: Vec<f64> = set.batches(&table, 1, repr, None).unwrap().flat_map(|b| scores(&b)).collect();
        let err = whole.iter().zip(&single).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8, "{arch}: {err}");
        let order: Vec<usize> = (0..20).rev().collect();
        let labels: Vec<f64> = set.batches(&table, 7, repr, Some(&order)).unwrap().flat_map(|b| b.labels).collect();
        assert_eq!(labels, set.labels.iter().rev().copied().collect::<Vec<_>>());
    }
}
