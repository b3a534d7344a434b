use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::metrics::{CurveRow, RegretRow};

use super::HarnessError;

pub const LEARNING_CURVE_FILE: &str = "learning_curve.csv";
pub const REGRET_FILE: &str = "regret.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Row of `learning_curve.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCsv {
    pub config_hash: String,
    pub algo: String,
    pub state: String,
    pub seed: u64,
    pub update_count: u64,
    pub sample_count: u64,
    pub sim_time: f64,
    pub ma_reward: f64,
    pub rho_hat: f64,
}

/// Row of `regret.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCsv {
    pub config_hash: String,
    pub algo: String,
    pub state: String,
    pub seed: u64,
    pub epoch: u64,
    pub mean_q: f64,
    pub baseline_q: f64,
    pub cum_regret: f64,
}

/// Row of `eval.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCsv {
    pub config_hash: String,
    pub algo: String,
    pub state: String,
    pub seed: u64,
    pub episodes: usize,
    pub q_pi_per_epoch: f64,
    pub q_pi_per_time: f64,
    pub std: f64,
}

/// Per-trial metric values; empty cells mean "not reached" or "not run".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCsv {
    pub config_hash: String,
    pub algo: String,
    pub state: String,
    pub seed: u64,
    /// `ok` or `diverged`.
    pub status: String,
    pub failed_update: Option<u64>,
    pub u_eta: Option<u64>,
    pub n_eta: Option<u64>,
    pub q_pi: Option<f64>,
    pub regret_at_n_eta: Option<f64>,
    pub regret_total: f64,
    pub samples: u64,
    pub updates: u64,
    pub rho_star_per_epoch: f64,
    pub rho_eta: f64,
}

/// Row of `summary.csv`: one algorithm × representation cell group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCsv {
    pub config_hash: String,
    pub algo: String,
    pub state: String,
    pub u_eta_mean: Option<f64>,
    pub u_eta_std: Option<f64>,
    pub n_eta_mean: Option<f64>,
    pub n_eta_std: Option<f64>,
    pub q_pi_mean: Option<f64>,
    pub q_pi_std: Option<f64>,
    pub regret_mean: Option<f64>,
    pub regret_std: Option<f64>,
    pub seed_count: usize,
}

#[cfg(test)]
fn headers_of<T: Serialize>(sample: &T) -> Vec<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.serialize(sample).expect("in-memory serialisation");
    let bytes = w.into_inner().expect("in-memory flush");
    let text = String::from_utf8(bytes).expect("utf-8");
    text.lines()
        .next()
        .unwrap_or("")
        .split(',')
        .map(str::to_string)
        .collect()
}

/// Writes `rows` with a header line, replacing any existing file.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Reads a CSV whose header must equal `expected` exactly.
pub fn read_csv<T: DeserializeOwned>(path: &Path, expected: &[&str]) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    let header = r.headers().map_err(|e| HarnessError::csv(path, e))?.clone();
    for (i, want) in expected.iter().enumerate() {
        match header.get(i) {
            Some(got) if got == *want => {}
            Some(got) => {
                return Err(HarnessError::Schema {
                    path: path.to_path_buf(),
                    column: got.to_string(),
                    detail: format!("expected `{want}` at position {}", i + 1),
                })
            }
            None => {
                return Err(HarnessError::Schema {
                    path: path.to_path_buf(),
                    column: (*want).to_string(),
                    detail: "missing".into(),
                })
            }
        }
    }
    if let Some(extra) = header.get(expected.len()) {
        return Err(HarnessError::Schema {
            path: path.to_path_buf(),
            column: extra.to_string(),
            detail: "unexpected column".into(),
        });
    }
    r.deserialize()
        .map(|row| row.map_err(|e| HarnessError::csv(path, e)))
        .collect()
}

pub const CURVE_HEADER: [&str; 9] = [
    "config_hash",
    "algo",
    "state",
    "seed",
    "update_count",
    "sample_count",
    "sim_time",
    "ma_reward",
    "rho_hat",
];
pub const REGRET_HEADER: [&str; 8] = [
    "config_hash",
    "algo",
    "state",
    "seed",
    "epoch",
    "mean_q",
    "baseline_q",
    "cum_regret",
];
pub const EVAL_HEADER: [&str; 8] = [
    "config_hash",
    "algo",
    "state",
    "seed",
    "episodes",
    "q_pi_per_epoch",
    "q_pi_per_time",
    "std",
];
pub const METRICS_HEADER: [&str; 15] = [
    "config_hash",
    "algo",
    "state",
    "seed",
    "status",
    "failed_update",
    "u_eta",
    "n_eta",
    "q_pi",
    "regret_at_n_eta",
    "regret_total",
    "samples",
    "updates",
    "rho_star_per_epoch",
    "rho_eta",
];
pub const SUMMARY_HEADER: [&str; 12] = [
    "config_hash",
    "algo",
    "state",
    "u_eta_mean",
    "u_eta_std",
    "n_eta_mean",
    "n_eta_std",
    "q_pi_mean",
    "q_pi_std",
    "regret_mean",
    "regret_std",
    "seed_count",
];

/// Identifies every row a trial writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowKey {
    pub config_hash: String,
    pub algo: String,
    pub state: String,
    pub seed: u64,
}

impl RowKey {
    pub fn curve(&self, row: &CurveRow) -> CurveCsv {
        CurveCsv {
            config_hash: self.config_hash.clone(),
            algo: self.algo.clone(),
            state: self.state.clone(),
            seed: self.seed,
            update_count: row.update_count,
            sample_count: row.sample_count,
            sim_time: row.sim_time,
            ma_reward: row.ma_reward,
            rho_hat: row.rho_hat,
        }
    }

    pub fn regret(&self, row: &RegretRow) -> RegretCsv {
        RegretCsv {
            config_hash: self.config_hash.clone(),
            algo: self.algo.clone(),
            state: self.state.clone(),
            seed: self.seed,
            epoch: row.epoch,
            mean_q: row.mean_q,
            baseline_q: row.baseline_q,
            cum_regret: row.cum_regret,
        }
    }
}

/// Receives rows as a trial produces them.
pub trait TrialSink {
    fn curve_row(&mut self, row: &CurveRow) -> Result<(), HarnessError>;
    fn regret_row(&mut self, row: &RegretRow) -> Result<(), HarnessError>;
    fn flush(&mut self) -> Result<(), HarnessError> {
        Ok(())
    }
}

/// Keeps rows in memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemorySink {
    pub curve: Vec<CurveRow>,
    pub regret: Vec<RegretRow>,
}

impl TrialSink for MemorySink {
    fn curve_row(&mut self, row: &CurveRow) -> Result<(), HarnessError> {
        self.curve.push(*row);
        Ok(())
    }

    fn regret_row(&mut self, row: &RegretRow) -> Result<(), HarnessError> {
        self.regret.push(*row);
        Ok(())
    }
}

/// Appends rows to `learning_curve.csv` and `regret.csv` in a trial directory.
pub struct FileSink {
    key: RowKey,
    curve_path: PathBuf,
    regret_path: PathBuf,
    curve: csv::Writer<BufWriter<File>>,
    regret: csv::Writer<BufWriter<File>>,
}

impl FileSink {
    pub fn create(dir: &Path, key: RowKey) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let open = |name: &str, header: &[&str]| -> Result<(PathBuf, csv::Writer<BufWriter<File>>), HarnessError> {
            let path = dir.join(name);
            let file = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(BufWriter::new(file));
            // headers go out even if the trial logs no rows
            w.write_record(header).map_err(|e| HarnessError::csv(&path, e))?;
            Ok((path, w))
        };
        let (curve_path, curve) = open(LEARNING_CURVE_FILE, &CURVE_HEADER)?;
        let (regret_path, regret) = open(REGRET_FILE, &REGRET_HEADER)?;
        Ok(Self {
            key,
            curve_path,
            regret_path,
            curve,
            regret,
        })
    }
}

impl TrialSink for FileSink {
    fn curve_row(&mut self, row: &CurveRow) -> Result<(), HarnessError> {
        self.curve
            .serialize(self.key.curve(row))
            .map_err(|e| HarnessError::csv(&self.curve_path, e))
    }

    fn regret_row(&mut self, row: &RegretRow) -> Result<(), HarnessError> {
        self.regret
            .serialize(self.key.regret(row))
            .map_err(|e| HarnessError::csv(&self.regret_path, e))
    }

    fn flush(&mut self) -> Result<(), HarnessError> {
        self.curve
            .flush()
            .map_err(|e| HarnessError::io(&self.curve_path, e))?;
        self.regret
            .flush()
            .map_err(|e| HarnessError::io(&self.regret_path, e))
    }
}
