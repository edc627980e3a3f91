//! Append-only CSV metric logs with header `step,split,metric,value,wall_time`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("step {step} after {last} for {split}/{metric}")]
    NonMonotone { split: String, metric: String, step: u64, last: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub wall_time: f64,
}

/// Writes rows as they arrive and flushes after each one, so a crashed
/// run leaves a readable prefix.
pub struct MetricLog {
    out: csv::Writer<Box<dyn Write>>,
    started: Instant,
    last: HashMap<(String, String), u64>,
    rows: Vec<MetricRow>,
}

impl MetricLog {
    pub fn new(sink: Box<dyn Write>) -> Self {
        MetricLog { out: csv::Writer::from_writer(sink), started: Instant::now(), last: HashMap::new(), rows: Vec::new() }
    }

    pub fn create(path: &Path) -> Result<Self, LogError> {
        Ok(Self::new(Box::new(BufWriter::new(File::create(path)?))))
    }

    /// Appends one row; steps must not decrease within a (split, metric)
    /// series.
    pub fn log(&mut self, step: u64, split: &str, metric: &str, value: f64) -> Result<(), LogError> {
        let key = (split.to_string(), metric.to_string());
        if let Some(&last) = self.last.get(&key) {
            if step < last {
                return Err(LogError::NonMonotone { split: key.0, metric: key.1, step, last });
            }
        }
        self.last.insert(key, step);
        let row = MetricRow { step, split: split.into(), metric: metric.into(), value, wall_time: self.started.elapsed().as_secs_f64() };
        self.out.serialize(&row)?;
        self.out.flush()?;
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }
}

/// Reads every complete row, stopping quietly at a truncated final line.
pub fn read_metric_log(text: &str) -> Result<Vec<MetricRow>, LogError> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut r = csv::Reader::from_reader(complete.as_bytes());
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
