//! Experiment configuration files.
//!
//! A config is UTF-8 text with one `key = value` pair per line:
//!
//! ```text
//! line  := ws* (key ws* '=' ws* value)? ws* ('#' any*)?
//! key   := segment ('.' segment)*
//! segment := [A-Za-z0-9_-]+
//! value := any character except '#', with surrounding whitespace removed
//! ```
//!
//! Everything from the first `#` on a line is a comment. Blank lines are
//! ignored. Values may not be empty, keys may not repeat, and unknown keys
//! are rejected. Dotted keys address nested sections (`encoder.arch`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use fembed_core::models::{Arch, EncoderConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid config field `{field}`: {msg}")]
    Invalid { field: String, msg: String },
    #[error("cannot read {path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

impl ConfigError {
    fn invalid(field: &str, msg: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.to_string(), msg: msg.into() }
    }
}

/// Parses the `key = value` grammar into an ordered map.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(ConfigError::Syntax { line, msg: "expected `key = value`".into() });
        };
        let (k, v) = (k.trim(), v.trim());
        let segment_ok = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !k.split('.').all(segment_ok) {
            return Err(ConfigError::Syntax { line, msg: format!("bad key `{k}`") });
        }
        if v.is_empty() {
            return Err(ConfigError::Syntax { line, msg: format!("empty value for `{k}`") });
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(ConfigError::Syntax { line, msg: format!("duplicate key `{k}`") });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PremiseSelection,
    HolistSupervised,
    EndToEndRl,
    Analyze,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "premise_selection" => Ok(Task::PremiseSelection),
            "holist_supervised" => Ok(Task::HolistSupervised),
            "end_to_end_rl" => Ok(Task::EndToEndRl),
            "analyze" => Ok(Task::Analyze),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// Where examples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generate a corpus from `data.theorems`, `data.max_depth`, ...
    Generate,
    /// Read a corpus JSONL file from `data.corpus`.
    Corpus,
    /// Read premise examples (JSONL) from `data.dataset`.
    Dataset,
    /// The argument-order probe.
    Probe,
}

impl FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "generate" => Ok(DataSource::Generate),
            "corpus" => Ok(DataSource::Corpus),
            "dataset" => Ok(DataSource::Dataset),
            "probe" => Ok(DataSource::Probe),
            other => Err(format!("unknown data source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub corpus: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub theorems: usize,
    pub max_depth: usize,
    pub atoms: usize,
    pub probe_examples: usize,
    pub probe_symbols: usize,
    pub negs_per_pos: usize,
    pub split: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub class_weighting: bool,
    pub tactic_weight: f64,
    pub premise_weight: f64,
    pub gamma: f64,
    pub baseline_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub metrics: Vec<String>,
    pub budget: usize,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub checkpoint: Option<PathBuf>,
    pub query: Option<String>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub encoder: EncoderConfig,
    pub data: DataConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub analysis: AnalysisConfig,
    pub output_dir: PathBuf,
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.remove(key) {
            Some(v) => v.parse().map_err(|e: T::Err| ConfigError::invalid(key, e.to_string())),
            None => Ok(default),
        }
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.0.remove(key).ok_or_else(|| ConfigError::invalid(key, "missing"))?;
        v.parse().map_err(|e: T::Err| ConfigError::invalid(key, e.to_string()))
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.0.remove(key).map(PathBuf::from)
    }
}

fn default_metrics(task: Task) -> Vec<String> {
    let m: &[&str] = match task {
        Task::PremiseSelection => &["accuracy"],
        Task::HolistSupervised => &["top5", "relative_param", "tactic_accuracy"],
        Task::EndToEndRl => &["pass_at_1", "cumulative"],
        Task::Analyze => &[],
    };
    m.iter().map(|s| s.to_string()).collect()
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut f = Fields(parse_pairs(text)?);
        let task: Task = f.required("task")?;
        let output_dir: PathBuf = f.required("output_dir")?;
        let base = EncoderConfig::default();
        let arch: Arch = f.get("encoder.arch", base.arch)?;
        let d: usize = f.get("encoder.d", 32)?;
        let layers: usize = f.get("encoder.layers", base.layers)?;
        let defaults = EncoderConfig::new(arch, d, layers);
        let encoder = EncoderConfig {
            arch,
            d,
            layers,
            heads: f.get("encoder.heads", defaults.heads)?,
            d_ff: f.get("encoder.d_ff", defaults.d_ff)?,
            pooling: f.get("encoder.pooling", defaults.pooling)?,
            max_len: f.get("encoder.max_len", defaults.max_len)?,
            mask_mode: f.get("encoder.mask_mode", defaults.mask_mode)?,
            gnn_hops_per_layer: f.get("encoder.hops", defaults.gnn_hops_per_layer)?,
            pre_norm: f.get("encoder.pre_norm", defaults.pre_norm)?,
            ensemble_graph: f.get("encoder.ensemble_graph", defaults.ensemble_graph)?,
        };
        let split = match f.0.remove("data.split") {
            Some(s) => parse_split(&s)?,
            None => [0.8, 0.1, 0.1],
        };
        let data = DataConfig {
            source: f.get("data.source", DataSource::Generate)?,
            corpus: f.path("data.corpus"),
            dataset: f.path("data.dataset"),
            seed: f.get("data.seed", 0)?,
            theorems: f.get("data.theorems", 300)?,
            max_depth: f.get("data.max_depth", 3)?,
            atoms: f.get("data.atoms", 8)?,
            probe_examples: f.get("data.probe_examples", 2000)?,
            probe_symbols: f.get("data.probe_symbols", 24)?,
            negs_per_pos: f.get("data.negs_per_pos", 1)?,
            split,
        };
        let training = TrainingConfig {
            epochs: f.get("training.epochs", 20)?,
            batch_size: f.get("training.batch_size", 32)?,
            lr: f.get("training.lr", 1e-3)?,
            seed: f.required("training.seed")?,
            class_weighting: f.get("training.class_weighting", true)?,
            tactic_weight: f.get("training.tactic_weight", 1.0)?,
            premise_weight: f.get("training.premise_weight", 1.0)?,
            gamma: f.get("training.gamma", 0.99)?,
            baseline_window: f.get("training.baseline_window", 100)?,
        };
        let metrics = match f.0.remove("eval.metrics") {
            Some(s) => s.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect(),
            None => default_metrics(task),
        };
        let eval = EvalConfig { metrics, budget: f.get("eval.budget", 16)?, top_k: f.get("eval.top_k", 5)? };
        let analysis = AnalysisConfig {
            checkpoint: f.path("analysis.checkpoint"),
            query: f.0.remove("analysis.query"),
            k: f.get("analysis.k", 5)?,
        };
        if let Some(k) = f.0.keys().next() {
            return Err(ConfigError::invalid(k, "unknown key"));
        }
        let cfg = ExperimentConfig { task, encoder, data, training, eval, analysis, output_dir };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), msg: e.to_string() })?;
        Self::from_text(&text)
    }

    /// Range checks that do not touch the file system.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.encoder.validate().map_err(|e| ConfigError::invalid("encoder", e.to_string()))?;
        let positive = [
            ("training.epochs", self.training.epochs),
            ("training.batch_size", self.training.batch_size),
            ("data.negs_per_pos", self.data.negs_per_pos),
            ("data.max_depth", self.data.max_depth),
            ("data.atoms", self.data.atoms),
            ("eval.budget", self.eval.budget),
            ("eval.top_k", self.eval.top_k),
            ("analysis.k", self.analysis.k),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(ConfigError::invalid(field, "must be at least 1"));
            }
        }
        if !(self.training.lr > 0.0 && self.training.lr.is_finite()) {
            return Err(ConfigError::invalid("training.lr", "must be positive"));
        }
        if self.data.source == DataSource::Probe && self.data.probe_symbols < 2 {
            return Err(ConfigError::invalid("data.probe_symbols", "need at least two symbols"));
        }
        if self.data.source == DataSource::Corpus && self.data.corpus.is_none() {
            return Err(ConfigError::invalid("data.corpus", "required when data.source = corpus"));
        }
        if self.data.source == DataSource::Dataset && self.data.dataset.is_none() {
            return Err(ConfigError::invalid("data.dataset", "required when data.source = dataset"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let e = &self.encoder;
        let d = &self.data;
        let t = &self.training;
        let mut lines = vec![
            format!("task = {}", serde_plain(&self.task)),
            format!("output_dir = {}", self.output_dir.display()),
            format!("encoder.arch = {}", e.arch),
            format!("encoder.d = {}", e.d),
            format!("encoder.layers = {}", e.layers),
            format!("encoder.heads = {}", e.heads),
            format!("encoder.d_ff = {}", e.d_ff),
            format!("encoder.pooling = {}", serde_plain(&e.pooling)),
            format!("encoder.max_len = {}", e.max_len),
            format!("encoder.mask_mode = {}", serde_plain(&e.mask_mode)),
            format!("encoder.hops = {}", e.gnn_hops_per_layer),
            format!("encoder.pre_norm = {}", e.pre_norm),
            format!("encoder.ensemble_graph = {}", e.ensemble_graph),
            format!("data.source = {}", serde_plain(&d.source)),
            format!("data.seed = {}", d.seed),
            format!("data.theorems = {}", d.theorems),
            format!("data.max_depth = {}", d.max_depth),
            format!("data.atoms = {}", d.atoms),
            format!("data.probe_examples = {}", d.probe_examples),
            format!("data.probe_symbols = {}", d.probe_symbols),
            format!("data.negs_per_pos = {}", d.negs_per_pos),
            format!("data.split = {},{},{}", d.split[0], d.split[1], d.split[2]),
            format!("training.epochs = {}", t.epochs),
            format!("training.batch_size = {}", t.batch_size),
            format!("training.lr = {}", t.lr),
            format!("training.seed = {}", t.seed),
            format!("training.class_weighting = {}", t.class_weighting),
            format!("training.tactic_weight = {}", t.tactic_weight),
            format!("training.premise_weight = {}", t.premise_weight),
            format!("training.gamma = {}", t.gamma),
            format!("training.baseline_window = {}", t.baseline_window),
            format!("eval.budget = {}", self.eval.budget),
            format!("eval.top_k = {}", self.eval.top_k),
            format!("analysis.k = {}", self.analysis.k),
        ];
        if !self.eval.metrics.is_empty() {
            lines.push(format!("eval.metrics = {}", self.eval.metrics.join(",")));
        }
        for (k, v) in [("data.corpus", &d.corpus), ("data.dataset", &d.dataset), ("analysis.checkpoint", &self.analysis.checkpoint)] {
            if let Some(p) = v {
                lines.push(format!("{k} = {}", p.display()));
            }
        }
        if let Some(q) = &self.analysis.query {
            lines.push(format!("analysis.query = {q}"));
        }
        lines.join("\n") + "\n"
    }
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v).expect("plain enum") {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

fn parse_split(s: &str) -> Result<[f64; 3], ConfigError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| ConfigError::invalid("data.split", e.to_string()))?;
    let [a, b, c] = parts[..] else {
        return Err(ConfigError::invalid("data.split", "expected three comma-separated ratios"));
    };
    if [a, b, c].iter().any(|r| !r.is_finite() || *r < 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(ConfigError::invalid("data.split", "ratios must be non-negative and sum to 1"));
    }
    Ok([a, b, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMOKE: &str = "
# smoke run
task = premise_selection
output_dir = out/smoke
encoder.arch = MPNN   # case-insensitive
encoder.d = 16
training.seed = 7
data.split = 0.5, 0.25, 0.25
";

    #[test]
    fn parses_dotted_keys_and_comments() {
        let c = ExperimentConfig::from_text(SMOKE).unwrap();
        assert_eq!(c.task, Task::PremiseSelection);
        assert_eq!(c.encoder.arch, Arch::Mpnn);
        assert_eq!(c.encoder.d, 16);
        assert_eq!(c.training.seed, 7);
        assert_eq!(c.data.split, [0.5, 0.25, 0.25]);
        assert_eq!(c.eval.metrics, vec!["accuracy"]);
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = ExperimentConfig::from_text(SMOKE).unwrap();
        c.analysis.query = Some("(imp p0 p1)".into());
        c.training.lr = 3e-3;
        assert_eq!(ExperimentConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn seed_is_mandatory() {
        let text = SMOKE.replace("training.seed = 7", "");
        assert_eq!(ExperimentConfig::from_text(&text), Err(ConfigError::invalid("training.seed", "missing")));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(parse_pairs("a = 1\nb"), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!(parse_pairs("a = 1\na = 2"), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!(parse_pairs("a b = 1"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_pairs("a = # nothing"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_pairs("a..b = 1"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let bad = |extra: &str| ExperimentConfig::from_text(&format!("{SMOKE}{extra}\n")).unwrap_err();
        assert!(matches!(bad("encoder.colour = red"), ConfigError::Invalid { field, .. } if field == "encoder.colour"));
        assert!(matches!(bad("training.epochs = 0"), ConfigError::Invalid { field, .. } if field == "training.epochs"));
        let text = format!("{}encoder.heads = 3\n", SMOKE.replace("MPNN", "transformer"));
        assert!(matches!(ExperimentConfig::from_text(&text), Err(ConfigError::Invalid { field, .. }) if field == "encoder"));
        assert!(matches!(bad("data.source = corpus"), ConfigError::Invalid { field, .. } if field == "data.corpus"));
        let text = SMOKE.replace("0.5, 0.25, 0.25", "0.5, 0.5, 0.5");
        assert!(matches!(ExperimentConfig::from_text(&text), Err(ConfigError::Invalid { field, .. }) if field == "data.split"));
    }
}
