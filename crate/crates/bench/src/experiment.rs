//! Experiment drivers: data preparation, training with per-epoch and
//! best-on-validation checkpoints, and the final JSON report.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use fembed_core::data::batch::EncodeOptions;
use fembed_core::data::{
    build_holist_dataset, build_premise_dataset, from_jsonl, order_probe_dataset, split, to_jsonl, DataError, EncodedPremiseSet, ExprTable,
    PremiseExample,
};
use fembed_core::models::{Encoder, EncoderConfig, HolistWeights, ModelError};
use fembed_core::prover::{
    attempt_all, cumulative, evaluate, reinforce_train_with, write_proof_log, Corpus, EvalMode, GenConfig, NeuralPolicy, PolicyConfig, ProofTask,
    ProverError, ReinforceConfig,
};
use fembed_core::sexpr::Expr;
use fembed_core::tensor::{AdamConfig, AdamState, Checkpoint, CheckpointError, ParamStore};
use fembed_core::vocab::{build_vocab, Vocabulary};

use crate::analysis::{nearest_neighbors, AnalysisError, EmbeddingTable};
use crate::config::{DataSource, ExperimentConfig, Task};
use crate::log::{LogError, MetricLog};
use crate::metrics::{self, MetricError};
use crate::train::{HolistModel, HolistRow, PremiseModel};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("missing data: {0}")]
    DataMissing(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Prover(#[from] ProverError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("malformed input: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: f64,
}

/// The final report. Contains no timing, so equal configs give equal
/// bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub sizes: BTreeMap<String, usize>,
    pub validation_metric: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_checkpoint: Option<String>,
    pub test: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|_| ExperimentError::DataMissing(path.to_path_buf()))
}

fn require(path: &Option<PathBuf>) -> Result<&Path> {
    let p = path.as_deref().ok_or_else(|| ExperimentError::ConfigInvalid("missing path".into()))?;
    if !p.exists() {
        return Err(ExperimentError::DataMissing(p.to_path_buf()));
    }
    Ok(p)
}

/// Checks that every referenced input exists.
pub fn check_inputs(cfg: &ExperimentConfig) -> Result<()> {
    match cfg.data.source {
        DataSource::Corpus => {
            require(&cfg.data.corpus)?;
        }
        DataSource::Dataset => {
            require(&cfg.data.dataset)?;
        }
        DataSource::Generate | DataSource::Probe => {}
    }
    if cfg.task == Task::Analyze {
        require(&cfg.analysis.checkpoint)?;
        if cfg.analysis.query.is_none() {
            return Err(ExperimentError::ConfigInvalid("analysis.query is required".into()));
        }
    }
    Ok(())
}

pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    match cfg.data.source {
        DataSource::Generate => {
            let d = &cfg.data;
            Ok(GenConfig { seed: d.seed, count: d.theorems, max_depth: d.max_depth, atom_count: d.atoms }.generate())
        }
        DataSource::Corpus => {
            let text = read(require(&cfg.data.corpus)?)?;
            Corpus::from_jsonl(&text).map_err(|e| ExperimentError::Malformed(e.to_string()))
        }
        _ => Err(ExperimentError::ConfigInvalid(format!("task needs a theorem corpus, not data.source = {:?}", cfg.data.source))),
    }
}

pub fn premise_examples(cfg: &ExperimentConfig) -> Result<Vec<PremiseExample>> {
    let d = &cfg.data;
    match d.source {
        DataSource::Probe => Ok(order_probe_dataset(d.probe_examples, d.probe_symbols, d.seed)),
        DataSource::Dataset => Ok(from_jsonl(&read(require(&d.dataset)?)?)?),
        DataSource::Generate | DataSource::Corpus => Ok(build_premise_dataset(&load_corpus(cfg)?, d.negs_per_pos, d.seed)?.examples),
    }
}

/// Writes the datasets a config describes into `output_dir` and returns
/// their paths. Output depends only on the config.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    check_inputs(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = cfg.output_dir.join(name);
        fs::write(&p, text)?;
        written.push(p);
        Ok(())
    };
    match cfg.data.source {
        DataSource::Probe | DataSource::Dataset => put("premises.jsonl", to_jsonl(&premise_examples(cfg)?))?,
        DataSource::Generate | DataSource::Corpus => {
            let corpus = load_corpus(cfg)?;
            put("corpus.jsonl", corpus.to_jsonl())?;
            put("premises.jsonl", to_jsonl(&build_premise_dataset(&corpus, cfg.data.negs_per_pos, cfg.data.seed)?.examples))?;
            if let Ok(h) = build_holist_dataset(&corpus, cfg.data.negs_per_pos, cfg.data.seed) {
                put("holist.jsonl", to_jsonl(&h.examples))?;
            }
        }
    }
    Ok(written)
}

fn vocab_meta(v: &Vocabulary) -> serde_json::Value {
    serde_json::from_str(&v.to_json()).expect("vocabulary JSON")
}

fn meta_vocab(meta: &serde_json::Value) -> Result<Vocabulary> {
    let v = meta.get("vocab").ok_or_else(|| ExperimentError::Malformed("checkpoint has no vocabulary".into()))?;
    Vocabulary::from_json(&v.to_string()).map_err(|e| ExperimentError::Malformed(e.to_string()))
}

fn meta_encoder(meta: &serde_json::Value) -> Result<EncoderConfig> {
    let v = meta.get("encoder").ok_or_else(|| ExperimentError::Malformed("checkpoint has no encoder config".into()))?;
    serde_json::from_value(v.clone()).map_err(|e| ExperimentError::Malformed(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::from_json(&read(path)?)?)
}

/// Per-epoch bookkeeping shared by the training tasks.
struct Tracker {
    dir: PathBuf,
    log: MetricLog,
    epochs: Vec<EpochRecord>,
    best: Option<(usize, f64, Checkpoint)>,
}

impl Tracker {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = cfg.output_dir.join("checkpoints");
        fs::create_dir_all(&dir)?;
        let log = MetricLog::create(&cfg.output_dir.join("metrics.csv"))?;
        Ok(Tracker { dir, log, epochs: Vec::new(), best: None })
    }

    /// Saves the epoch checkpoint, and the best one if validation
    /// improved strictly.
    fn epoch(&mut self, rec: EpochRecord, val_name: &str, store: &ParamStore, adam: &AdamState, meta: serde_json::Value) -> Result<()> {
        let (epoch, val) = (rec.epoch, rec.validation);
        self.log.log(epoch as u64, "train", "loss", rec.train_loss)?;
        self.log.log(epoch as u64, "val", val_name, val)?;
        let ck = Checkpoint::capture(store, Some(adam), adam.t, meta);
        fs::write(self.dir.join(format!("epoch_{epoch:03}.json")), ck.to_json())?;
        if self.best.as_ref().is_none_or(|b| val > b.1) {
            fs::write(self.dir.join("best.json"), ck.to_json())?;
            self.best = Some((epoch, val, ck));
        }
        self.epochs.push(rec);
        Ok(())
    }

    fn restore_best(&self, store: &mut ParamStore) -> Result<()> {
        if let Some((_, _, ck)) = &self.best {
            ck.restore(store)?;
        }
        Ok(())
    }

    fn finish(self, cfg: &ExperimentConfig, sizes: BTreeMap<String, usize>, val_name: &str, test: BTreeMap<String, f64>, extra: serde_json::Value) -> Result<Report> {
        let report = Report {
            config: cfg.clone(),
            sizes,
            validation_metric: val_name.to_string(),
            epochs: self.epochs,
            best_epoch: self.best.as_ref().map(|b| b.0),
            best_checkpoint: self.best.as_ref().map(|_| "checkpoints/best.json".to_string()),
            test,
            extra,
        };
        fs::write(cfg.output_dir.join("report.json"), report.to_json())?;
        Ok(report)
    }
}

fn sizes(train: usize, val: usize, test: usize) -> BTreeMap<String, usize> {
    BTreeMap::from([("train".into(), train), ("val".into(), val), ("test".into(), test)])
}

fn adam(store: &ParamStore, cfg: &ExperimentConfig) -> AdamState {
    AdamState::new(store, AdamConfig { lr: cfg.training.lr, ..AdamConfig::default() })
}

fn shuffle_rng(cfg: &ExperimentConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.training.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1))
}

/// Runs the task a config describes and writes its artifacts to
/// `output_dir`: `metrics.csv`, `checkpoints/epoch_NNN.json`,
/// `checkpoints/best.json` and `report.json`. The analyze task writes
/// `analysis.json` instead, with the neighbours under `extra`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate().map_err(|e| ExperimentError::ConfigInvalid(e.to_string()))?;
    check_inputs(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    match cfg.task {
        Task::PremiseSelection => run_premise(cfg),
        Task::HolistSupervised => run_holist(cfg),
        Task::EndToEndRl => run_rl(cfg),
        Task::Analyze => run_analyze(cfg),
    }
}

struct PremiseData {
    table: ExprTable,
    train: EncodedPremiseSet,
    val: EncodedPremiseSet,
    test: EncodedPremiseSet,
    class_weights: [f64; 2],
}

/// Splits by goal; the vocabulary comes from the training split unless
/// given.
fn premise_data(cfg: &ExperimentConfig, vocab: Option<Vocabulary>) -> Result<PremiseData> {
    let xs = premise_examples(cfg)?;
    let s = split(&xs, |e| &e.goal, cfg.data.split, cfg.data.seed)?;
    if s.train.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    let vocab = match vocab {
        Some(v) => v,
        None => build_vocab(s.train.iter().flat_map(|e| [&e.goal, &e.premise]), 1).map_err(|e| ExperimentError::Malformed(e.to_string()))?,
    };
    let opts = EncodeOptions { masks: cfg.encoder.needs_masks(), max_len: cfg.encoder.max_len, ..EncodeOptions::default() };
    let mut table = ExprTable::new(vocab, opts);
    let train = EncodedPremiseSet::new(&s.train, &mut table);
    let val = EncodedPremiseSet::new(&s.val, &mut table);
    let test = EncodedPremiseSet::new(&s.test, &mut table);
    let pos = train.labels.iter().filter(|&&y| y > 0.5).count() as f64;
    let n = train.len() as f64;
    let class_weights = if cfg.training.class_weighting && pos > 0.0 && pos < n { [n / (2.0 * (n - pos)), n / (2.0 * pos)] } else { [1.0, 1.0] };
    Ok(PremiseData { table, train, val, test, class_weights })
}

fn premise_accuracy(model: &PremiseModel, data: &PremiseData, set: &EncodedPremiseSet, batch: usize) -> Result<f64> {
    if set.is_empty() {
        return Ok(f64::NAN);
    }
    let z = model.scores(&data.table, set, batch)?;
    Ok(metrics::binary_accuracy(&z, &set.labels)?)
}

fn run_premise(cfg: &ExperimentConfig) -> Result<Report> {
    let data = premise_data(cfg, None)?;
    let vocab = data.table.vocab().clone();
    let mut model = PremiseModel::new(&cfg.encoder, vocab.len(), cfg.training.seed)?;
    let mut opt = adam(&model.store, cfg);
    let mut rng = shuffle_rng(cfg);
    let mut tracker = Tracker::new(cfg)?;
    let bs = cfg.training.batch_size;
    let val_set = if data.val.is_empty() { &data.train } else { &data.val };
    for epoch in 0..cfg.training.epochs {
        let loss = model.train_epoch(&mut opt, &data.table, &data.train, bs, data.class_weights, &mut rng)?;
        let val = premise_accuracy(&model, &data, val_set, bs)?;
        let meta = json!({"task": cfg.task, "epoch": epoch, "encoder": cfg.encoder, "vocab": vocab_meta(&vocab)});
        tracker.epoch(EpochRecord { epoch, train_loss: loss, validation: val }, "accuracy", &model.store, &opt, meta)?;
    }
    tracker.restore_best(&mut model.store)?;
    let test = premise_test_metrics(&model, &data, bs)?;
    tracker.finish(cfg, sizes(data.train.len(), data.val.len(), data.test.len()), "accuracy", test, serde_json::Value::Null)
}

fn premise_test_metrics(model: &PremiseModel, data: &PremiseData, bs: usize) -> Result<BTreeMap<String, f64>> {
    let mut test = BTreeMap::new();
    test.insert("accuracy".to_string(), premise_accuracy(model, data, &data.test, bs)?);
    Ok(test)
}

struct HolistData {
    table: ExprTable,
    tactics: Vec<String>,
    train: Vec<HolistRow>,
    val: Vec<HolistRow>,
    test: Vec<HolistRow>,
}

fn holist_data(cfg: &ExperimentConfig, vocab: Option<Vocabulary>) -> Result<HolistData> {
    let corpus = load_corpus(cfg)?;
    let ds = build_holist_dataset(&corpus, cfg.data.negs_per_pos, cfg.data.seed)?;
    // Premise examples come in the same order as their mp steps.
    let mut prem = ds.examples.iter().peekable();
    let mut steps = Vec::with_capacity(ds.tactic_examples.len());
    for t in &ds.tactic_examples {
        let attached = prem.next_if(|h| h.goal == t.goal && h.tactic_id == t.tactic);
        steps.push((t, attached));
    }
    let s = split(&steps, |(t, _)| &t.goal, cfg.data.split, cfg.data.seed)?;
    if s.train.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    let vocab = match vocab {
        Some(v) => v,
        None => {
            let exprs = s.train.iter().flat_map(|(t, h)| std::iter::once(&t.goal).chain(h.iter().flat_map(|h| std::iter::once(&h.pos_premise).chain(&h.neg_premises))));
            build_vocab(exprs, 1).map_err(|e| ExperimentError::Malformed(e.to_string()))?
        }
    };
    let opts = EncodeOptions { masks: cfg.encoder.needs_masks(), max_len: cfg.encoder.max_len, ..EncodeOptions::default() };
    let mut table = ExprTable::new(vocab, opts);
    let mut rows = |part: &[(&fembed_core::data::TacticExample, Option<&fembed_core::data::HolistExample>)]| -> Vec<HolistRow> {
        part.iter()
            .map(|(t, h)| HolistRow {
                goal: table.intern(&t.goal),
                tactic: t.tactic,
                premises: h.map(|h| (table.intern(&h.pos_premise), h.neg_premises.iter().map(|n| table.intern(n)).collect())),
            })
            .collect()
    };
    let (train, val, test) = (rows(&s.train), rows(&s.val), rows(&s.test));
    Ok(HolistData { table, tactics: ds.tactics, train, val, test })
}

fn holist_metrics(model: &HolistModel, data: &HolistData, rows: &[HolistRow], cfg: &ExperimentConfig) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    if rows.is_empty() {
        return Ok(out);
    }
    let s = model.scores(&data.table, rows, cfg.training.batch_size)?;
    let labels: Vec<usize> = rows.iter().map(|r| r.tactic).collect();
    out.insert(format!("top{}", cfg.eval.top_k), metrics::topk(&s.tactic_logits, &labels, cfg.eval.top_k)?);
    out.insert("tactic_accuracy".into(), metrics::topk(&s.tactic_logits, &labels, 1)?);
    if !s.pos.is_empty() {
        out.insert("relative_param".into(), metrics::relative_param(&s.pos, &s.negs)?);
    }
    Ok(out)
}

fn run_holist(cfg: &ExperimentConfig) -> Result<Report> {
    let data = holist_data(cfg, None)?;
    let vocab = data.table.vocab().clone();
    let mut model = HolistModel::new(&cfg.encoder, vocab.len(), data.tactics.len().max(2), cfg.training.seed)?;
    let mut opt = adam(&model.store, cfg);
    let mut rng = shuffle_rng(cfg);
    let mut tracker = Tracker::new(cfg)?;
    let weights = HolistWeights { tactic: cfg.training.tactic_weight, premise: cfg.training.premise_weight };
    let val_name = format!("top{}", cfg.eval.top_k);
    let val_rows = if data.val.is_empty() { &data.train } else { &data.val };
    for epoch in 0..cfg.training.epochs {
        let loss = model.train_epoch(&mut opt, &data.table, &data.train, cfg.training.batch_size, weights, &mut rng)?;
        let val = holist_metrics(&model, &data, val_rows, cfg)?[&val_name];
        let meta = json!({"task": cfg.task, "epoch": epoch, "encoder": cfg.encoder, "vocab": vocab_meta(&vocab), "tactics": data.tactics});
        tracker.epoch(EpochRecord { epoch, train_loss: loss, validation: val }, &val_name, &model.store, &opt, meta)?;
    }
    tracker.restore_best(&mut model.store)?;
    let test = holist_metrics(&model, &data, &data.test, cfg)?;
    let extra = json!({"tactics": data.tactics});
    tracker.finish(cfg, sizes(data.train.len(), data.val.len(), data.test.len()), &val_name, test, extra)
}

struct RlData {
    corpus: Corpus,
    train: Vec<ProofTask>,
    val: Vec<ProofTask>,
    test: Vec<ProofTask>,
}

fn rl_data(cfg: &ExperimentConfig) -> Result<RlData> {
    let corpus = load_corpus(cfg)?;
    let tasks = corpus.tasks();
    let s = split(&tasks, |t| &t.goal.target, cfg.data.split, cfg.data.seed)?;
    if s.train.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    Ok(RlData { corpus, train: s.train, val: s.val, test: s.test })
}

fn policy_config(cfg: &ExperimentConfig) -> PolicyConfig {
    PolicyConfig { encoder: cfg.encoder.clone(), seed: cfg.training.seed }
}

fn reinforce_config(cfg: &ExperimentConfig) -> ReinforceConfig {
    ReinforceConfig {
        epochs: cfg.training.epochs,
        budget: cfg.eval.budget,
        gamma: cfg.training.gamma,
        baseline_window: cfg.training.baseline_window,
        lr: cfg.training.lr,
        seed: cfg.training.seed,
        top_k: cfg.eval.top_k,
    }
}

fn names(tasks: &[ProofTask]) -> Vec<String> {
    tasks.iter().map(|t| t.name.clone()).collect()
}

fn run_rl(cfg: &ExperimentConfig) -> Result<Report> {
    let data = rl_data(cfg)?;
    let statements: Vec<&Expr> = data.corpus.records.iter().map(|r| &r.statement).collect();
    let mut policy = NeuralPolicy::new(policy_config(cfg), statements)?;
    let vocab = policy.vocab.clone();
    let mut tracker = Tracker::new(cfg)?;
    let val_tasks = if data.val.is_empty() { &data.train } else { &data.val };
    let budget = cfg.eval.budget;
    let report = reinforce_train_with(&mut policy, &data.train, &reinforce_config(cfg), |epoch, policy, opt, so_far| {
        let val = evaluate(val_tasks, policy, EvalMode::PassAt1, budget, None)?;
        let proved = so_far.per_epoch_proved[epoch] as f64 / data.train.len() as f64;
        let meta = json!({"task": cfg.task, "epoch": epoch, "encoder": cfg.encoder, "vocab": vocab_meta(&vocab)});
        tracker.log.log(epoch as u64, "train", "cumulative", so_far.cumulative_proved[epoch] as f64 / data.train.len() as f64)?;
        tracker.epoch(EpochRecord { epoch, train_loss: 1.0 - proved, validation: val }, "pass_at_1", &policy.store, opt, meta)
    })?;
    tracker.restore_best(&mut policy.store)?;
    fs::write(cfg.output_dir.join("proofs.jsonl"), write_proof_log(&report.history))?;
    let mut test = BTreeMap::new();
    if !data.test.is_empty() {
        test.insert("pass_at_1".to_string(), evaluate(&data.test, &mut policy, EvalMode::PassAt1, budget, None)?);
    }
    test.insert("train_cumulative".to_string(), cumulative(&names(&data.train), &report.history)?);
    let extra = json!({
        "per_epoch_proved": report.per_epoch_proved,
        "cumulative_proved": report.cumulative_proved,
        "all_grads_finite": report.all_grads_finite,
    });
    tracker.finish(cfg, sizes(data.train.len(), data.val.len(), data.test.len()), "pass_at_1", test, extra)
}

/// Expressions the analysis compares against: corpus statements, or the
/// goals and premises of a premise dataset, without repeats.
fn analysis_exprs(cfg: &ExperimentConfig) -> Result<Vec<Expr>> {
    let all: Vec<Expr> = match cfg.data.source {
        DataSource::Generate | DataSource::Corpus => load_corpus(cfg)?.records.into_iter().map(|r| r.statement).collect(),
        DataSource::Probe | DataSource::Dataset => premise_examples(cfg)?.into_iter().flat_map(|e| [e.goal, e.premise]).collect(),
    };
    let mut seen = HashSet::new();
    Ok(all.into_iter().filter(|e| seen.insert(e.clone())).collect())
}

/// Encoder and vocabulary stored in a checkpoint.
pub fn load_encoder(ck: &Checkpoint) -> Result<(Encoder, ParamStore, Vocabulary)> {
    let enc_cfg = meta_encoder(&ck.meta)?;
    let vocab = meta_vocab(&ck.meta)?;
    let mut store = ParamStore::new();
    let encoder = Encoder::new(&mut store, "enc", &enc_cfg, vocab.len(), 0)?;
    ck.restore(&mut store)?;
    Ok((encoder, store, vocab))
}

fn run_analyze(cfg: &ExperimentConfig) -> Result<Report> {
    let ck = load_checkpoint(require(&cfg.analysis.checkpoint)?)?;
    let query: Expr = cfg
        .analysis
        .query
        .as_deref()
        .unwrap_or_default()
        .parse()
        .map_err(|e| ExperimentError::ConfigInvalid(format!("analysis.query: {e}")))?;
    let (encoder, store, vocab) = load_encoder(&ck)?;
    let mut exprs = analysis_exprs(cfg)?;
    if !exprs.contains(&query) {
        exprs.push(query.clone());
    }
    let table = EmbeddingTable::build(&encoder, &store, &vocab, exprs, cfg.training.batch_size)?;
    let neighbors = nearest_neighbors(&table, &query, cfg.analysis.k)?;
    let extra = json!({"query": query.to_string(), "neighbors": neighbors});
    let report = Report {
        config: cfg.clone(),
        sizes: BTreeMap::from([("table".into(), table.exprs.len())]),
        validation_metric: String::new(),
        epochs: vec![],
        best_epoch: None,
        best_checkpoint: None,
        test: BTreeMap::new(),
        extra,
    };
    fs::write(cfg.output_dir.join("analysis.json"), report.to_json())?;
    Ok(report)
}

/// Test-split metrics of a saved model for the config's task.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<BTreeMap<String, f64>> {
    check_inputs(cfg)?;
    let ck = load_checkpoint(path)?;
    let vocab = meta_vocab(&ck.meta)?;
    let enc_cfg = meta_encoder(&ck.meta)?;
    let cfg = &ExperimentConfig { encoder: enc_cfg, ..cfg.clone() };
    match cfg.task {
        Task::PremiseSelection => {
            let data = premise_data(cfg, Some(vocab.clone()))?;
            let mut model = PremiseModel::new(&cfg.encoder, vocab.len(), 0)?;
            ck.restore(&mut model.store)?;
            premise_test_metrics(&model, &data, cfg.training.batch_size)
        }
        Task::HolistSupervised => {
            let data = holist_data(cfg, Some(vocab.clone()))?;
            let mut model = HolistModel::new(&cfg.encoder, vocab.len(), data.tactics.len().max(2), 0)?;
            ck.restore(&mut model.store)?;
            holist_metrics(&model, &data, &data.test, cfg)
        }
        Task::EndToEndRl => {
            let data = rl_data(cfg)?;
            let mut policy = NeuralPolicy::with_vocab(policy_config(cfg), vocab)?;
            ck.restore(&mut policy.store)?;
            let tasks = if data.test.is_empty() { &data.train } else { &data.test };
            Ok(BTreeMap::from([("pass_at_1".to_string(), evaluate(tasks, &mut policy, EvalMode::PassAt1, cfg.eval.budget, None)?)]))
        }
        Task::Analyze => Err(ExperimentError::ConfigInvalid("analyze has no evaluation; use the analyze command".into())),
    }
}

/// Greedy proof attempts on the test goals with a saved policy; writes
/// `proofs.jsonl` and returns pass@1.
pub fn prove_with_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<f64> {
    check_inputs(cfg)?;
    let ck = load_checkpoint(path)?;
    let vocab = meta_vocab(&ck.meta)?;
    let cfg = &ExperimentConfig { encoder: meta_encoder(&ck.meta)?, ..cfg.clone() };
    let data = rl_data(cfg)?;
    let mut policy = NeuralPolicy::with_vocab(policy_config(cfg), vocab)?;
    ck.restore(&mut policy.store)?;
    let tasks = if data.test.is_empty() { &data.train } else { &data.test };
    let attempts = attempt_all(tasks, &mut policy, cfg.eval.budget)?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("proofs.jsonl"), write_proof_log(&attempts))?;
    Ok(cumulative(&names(tasks), &attempts)?)
}
