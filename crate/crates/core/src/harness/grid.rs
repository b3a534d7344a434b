use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::agents::Algo;
use crate::sim::Representation;

use super::artifacts::{read_csv, write_csv, MetricsCsv, SummaryCsv, METRICS_FILE, METRICS_HEADER, SUMMARY_FILE};
use super::train::{run_trial, Baseline, TrialSpec};
use super::{ExperimentConfig, HarnessError};

pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone)]
pub struct GridResult {
    pub baseline: Baseline,
    pub trials: Vec<MetricsCsv>,
    pub summary: Vec<SummaryCsv>,
    pub out_dir: PathBuf,
}

/// `<algo>-<state>-seed<seed>`, with `-r<k>` appended for the k-th repeat of
/// a seed listed more than once.
pub fn trial_dir_name(spec: &TrialSpec, repeat: usize) -> String {
    let base = format!("{}-{}-seed{}", spec.algo, spec.representation.tag(), spec.seed);
    if repeat == 0 {
        base
    } else {
        format!("{base}-r{repeat}")
    }
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

/// One summary row per `(algo, state)` pair, in the given order. Diverged
/// trials are dropped; metrics a surviving trial never reached are left out
/// of that metric's mean.
pub fn aggregate(
    config_hash: &str,
    algos: &[Algo],
    representations: &[Representation],
    trials: &[MetricsCsv],
) -> Vec<SummaryCsv> {
    let mut out = Vec::new();
    for algo in algos {
        for rep in representations {
            let ok: Vec<&MetricsCsv> = trials
                .iter()
                .filter(|t| t.algo == algo.tag() && t.state == rep.tag() && t.status == "ok")
                .collect();
            let pick = |f: &dyn Fn(&MetricsCsv) -> Option<f64>| -> Vec<f64> {
                ok.iter().filter_map(|t| f(t)).collect()
            };
            let (u_eta_mean, u_eta_std) = mean_std(&pick(&|t| t.u_eta.map(|v| v as f64)));
            let (n_eta_mean, n_eta_std) = mean_std(&pick(&|t| t.n_eta.map(|v| v as f64)));
            let (q_pi_mean, q_pi_std) = mean_std(&pick(&|t| t.q_pi));
            let (regret_mean, regret_std) = mean_std(&pick(&|t| t.regret_at_n_eta));
            out.push(SummaryCsv {
                config_hash: config_hash.to_string(),
                algo: algo.tag().into(),
                state: rep.tag().into(),
                u_eta_mean,
                u_eta_std,
                n_eta_mean,
                n_eta_std,
                q_pi_mean,
                q_pi_std,
                regret_mean,
                regret_std,
                seed_count: ok.len(),
            });
        }
    }
    out
}

/// Runs every algorithm × representation × seed cell on a pool of `workers`
/// threads (0 = one per logical core), then aggregates the per-trial metric
/// files into `summary.csv`.
pub fn run_grid(cfg: &ExperimentConfig, workers: usize) -> Result<GridResult, HarnessError> {
    cfg.validate()?;
    let baseline = Baseline::solve(cfg)?;
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
    let resolved = out.join(RESOLVED_CONFIG_FILE);
    std::fs::write(&resolved, cfg.to_toml()).map_err(|e| HarnessError::io(&resolved, e))?;

    let x = &cfg.experiment;
    let mut cells = Vec::new();
    for &algo in &x.algorithms {
        for &rep in &x.representations {
            let mut repeats: HashMap<u64, usize> = HashMap::new();
            for &seed in &x.seeds {
                let spec = TrialSpec::new(algo, rep, seed);
                let k = repeats.entry(seed).or_insert(0);
                cells.push((spec, out.join(trial_dir_name(&spec, *k))));
                *k += 1;
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<(), HarnessError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|(spec, dir)| run_trial(cfg, *spec, &baseline, dir).map(|_| ()))
            .collect()
    });
    results.into_iter().collect::<Result<Vec<()>, _>>()?;

    let mut trials = Vec::with_capacity(cells.len());
    for (_, dir) in &cells {
        trials.extend(read_csv::<MetricsCsv>(&dir.join(METRICS_FILE), &METRICS_HEADER)?);
    }
    let summary = aggregate(&cfg.config_hash(), &x.algorithms, &x.representations, &trials);
    write_csv(&out.join(SUMMARY_FILE), &summary)?;
    Ok(GridResult {
        baseline,
        trials,
        summary,
        out_dir: out,
    })
}

/// Directories under `root` holding a trial's metrics file.
pub(crate) fn trial_dirs(root: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| HarnessError::io(root, e))? {
        let path = entry.map_err(|e| HarnessError::io(root, e))?.path();
        if path.join(METRICS_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}
