use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::Algo;
use crate::sim::Representation;

use super::artifacts::{
    read_csv, write_csv, CurveCsv, RegretCsv, SummaryCsv, CURVE_HEADER, LEARNING_CURVE_FILE,
    REGRET_FILE, REGRET_HEADER, SUMMARY_FILE, SUMMARY_HEADER,
};
use super::grid::trial_dirs;
use super::HarnessError;

pub const TABLE_FILE: &str = "table.txt";
pub const FIG1_FILE: &str = "fig1_input.csv";
pub const FIG2_FILE: &str = "fig2_input.csv";

/// Mean learning curve of one cell group at one sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Row {
    pub algorithm: String,
    pub representation: String,
    pub sample_count: u64,
    pub mean_reward: f64,
    pub std_reward: f64,
}

/// Mean cumulative queue-length regret of one cell group at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Row {
    pub algorithm: String,
    pub representation: String,
    pub epoch: u64,
    pub mean_regret_delta: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub table: String,
    pub fig1: Vec<Fig1Row>,
    pub fig2: Vec<Fig2Row>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// `100·(aug − base)/|base|`.
pub fn delta_percent(base: f64, aug: f64) -> f64 {
    100.0 * (aug - base) / base.abs()
}

fn fmt_count(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3e}"))
}

fn fmt_reward(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3}"))
}

fn fmt_delta(base: Option<f64>, aug: Option<f64>) -> String {
    match (base, aug) {
        (Some(b), Some(a)) if b != 0.0 => format!("{:+.1}%", delta_percent(b, a)),
        _ => "n/a".into(),
    }
}

/// Plain-text table: one line per algorithm with `(Q_k)`, `(Q_k, Q_k-1)` and
/// Δ% columns for `U_η`, `N_η`, `Q_π` and `R_Q(N_η)`.
pub fn format_table(summary: &[SummaryCsv]) -> String {
    let find = |algo: &str, state: &str| summary.iter().find(|s| s.algo == algo && s.state == state);
    let mut algos: Vec<&str> = Vec::new();
    for s in summary {
        if !algos.contains(&s.algo.as_str()) {
            algos.push(&s.algo);
        }
    }
    let base = Representation::QOnly.tag();
    let aug = Representation::QWithHistory.tag();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} | {:^32} | {:^32} | {:^28} | {:^32}",
        "", "Convergence speed U_eta", "Sampling efficiency N_eta", "Policy quality Q_pi", "Regret R_Q(N_eta)"
    );
    let group = format!("{:>10} {:>10} {:>9}", "(Q_k)", "(Q_k,Q_k-1)", "Delta%");
    let group_q = format!("{:>8} {:>10} {:>8}", "(Q_k)", "(Q_k,Q_k-1)", "Delta%");
    let _ = writeln!(out, "{:<10} | {group} | {group} | {group_q} | {group}", "Algorithm");
    let _ = writeln!(out, "{}", "-".repeat(10 + 3 + 32 + 3 + 32 + 3 + 28 + 3 + 32));
    for algo in algos {
        let name = Algo::from_tag(algo).map_or(algo.to_uppercase(), |a| match a {
            Algo::Reinforce => "REINFORCE".into(),
            Algo::A2c => "A2C".into(),
            Algo::Ppo => "PPO".into(),
        });
        let b = find(algo, base);
        let a = find(algo, aug);
        let col = |f: fn(&SummaryCsv) -> Option<f64>| (b.and_then(f), a.and_then(f));
        let (ub, ua) = col(|s| s.u_eta_mean);
        let (nb, na) = col(|s| s.n_eta_mean);
        let (qb, qa) = col(|s| s.q_pi_mean);
        let (rb, ra) = col(|s| s.regret_mean);
        let _ = writeln!(
            out,
            "{:<10} | {:>10} {:>10} {:>9} | {:>10} {:>10} {:>9} | {:>8} {:>10} {:>8} | {:>10} {:>10} {:>9}",
            name,
            fmt_count(ub),
            fmt_count(ua),
            fmt_delta(ub, ua),
            fmt_count(nb),
            fmt_count(na),
            fmt_delta(nb, na),
            fmt_reward(qb),
            fmt_reward(qa),
            fmt_delta(qb, qa),
            fmt_count(rb),
            fmt_count(ra),
            fmt_delta(rb, ra),
        );
    }
    let seeds: Vec<String> = summary
        .iter()
        .map(|s| format!("{}/{}={}", s.algo, s.state, s.seed_count))
        .collect();
    let _ = writeln!(out, "seeds aggregated: {}", seeds.join(" "));
    out
}

type GroupKey = (String, String);

/// Reads `summary.csv` and the trial directories under `dir`, and writes the
/// table and both figure-input files there. Nothing is written unless every
/// input parses.
pub fn report(dir: &Path) -> Result<Report, HarnessError> {
    let summary_path = dir.join(SUMMARY_FILE);
    let summary: Vec<SummaryCsv> = read_csv(&summary_path, &SUMMARY_HEADER)?;
    if summary.is_empty() {
        return Err(HarnessError::Report(format!(
            "{} has no rows",
            summary_path.display()
        )));
    }
    let hashes: Vec<&str> = summary.iter().map(|s| s.config_hash.as_str()).collect();
    let groups: Vec<GroupKey> = summary
        .iter()
        .map(|s| (s.algo.clone(), s.state.clone()))
        .collect();

    let mut curves: BTreeMap<GroupKey, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut regrets: BTreeMap<GroupKey, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for trial in trial_dirs(dir)? {
        let curve_path = trial.join(LEARNING_CURVE_FILE);
        if curve_path.is_file() {
            for r in read_csv::<CurveCsv>(&curve_path, &CURVE_HEADER)? {
                if hashes.contains(&r.config_hash.as_str()) {
                    curves
                        .entry((r.algo, r.state))
                        .or_default()
                        .entry(r.sample_count)
                        .or_default()
                        .push(r.ma_reward);
                }
            }
        }
        let regret_path = trial.join(REGRET_FILE);
        if regret_path.is_file() {
            for r in read_csv::<RegretCsv>(&regret_path, &REGRET_HEADER)? {
                if hashes.contains(&r.config_hash.as_str()) {
                    regrets
                        .entry((r.algo, r.state))
                        .or_default()
                        .entry(r.epoch)
                        .or_default()
                        .push(r.cum_regret);
                }
            }
        }
    }

    let mut fig1 = Vec::new();
    let mut fig2 = Vec::new();
    for key in &groups {
        for (&sample_count, xs) in curves.get(key).into_iter().flatten() {
            let (mean_reward, std_reward) = mean_std(xs);
            fig1.push(Fig1Row {
                algorithm: key.0.clone(),
                representation: key.1.clone(),
                sample_count,
                mean_reward,
                std_reward,
            });
        }
        for (&epoch, xs) in regrets.get(key).into_iter().flatten() {
            let (mean_regret_delta, std) = mean_std(xs);
            fig2.push(Fig2Row {
                algorithm: key.0.clone(),
                representation: key.1.clone(),
                epoch,
                mean_regret_delta,
                std,
            });
        }
    }

    let table = format_table(&summary);
    let table_path = dir.join(TABLE_FILE);
    std::fs::write(&table_path, &table).map_err(|e| HarnessError::io(&table_path, e))?;
    write_csv(&dir.join(FIG1_FILE), &fig1)?;
    write_csv(&dir.join(FIG2_FILE), &fig2)?;
    Ok(Report { table, fig1, fig2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_definition() {
        assert_eq!(delta_percent(-6.327, -6.327), 0.0);
        assert!((delta_percent(-6.327, -6.317) - 0.158).abs() < 1e-3);
        assert!((delta_percent(2.29e6, 4.91e6) - 114.4).abs() < 0.1);
    }

    #[test]
    fn empty_summary_is_an_error_and_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(SUMMARY_FILE), SUMMARY_HEADER.join(",") + "\n").unwrap();
        assert!(matches!(report(dir.path()), Err(HarnessError::Report(_))));
        assert!(!dir.path().join(FIG1_FILE).exists());
        assert!(!dir.path().join(FIG2_FILE).exists());
        assert!(!dir.path().join(TABLE_FILE).exists());
    }
}
