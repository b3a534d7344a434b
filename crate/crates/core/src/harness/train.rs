use std::path::{Path, PathBuf};

use crate::agents::{build_learner, Algo, Transition};
use crate::dp::{
    extract_thresholds, relative_value_iteration, stationary_analysis, ThresholdPolicy,
    TruncatedModel,
};
use crate::metrics::{
    policy_quality, pseudo_regret, CurveRow, EpisodeQueue, EtaTarget, Evaluation, MovingAverage,
    NetworkController, RegretRow,
};
use crate::nn::{MlpParams, NnError};
use crate::rng::{RngStream, AGENT_STREAM, ENV_STREAM, EVAL_STREAM};
use crate::sim::{self, FeatureMap, IntervalTotals, Observer, Representation, WarmStartBuffer};

use super::artifacts::{write_csv, EvalCsv, FileSink, MetricsCsv, RowKey, TrialSink, EVAL_FILE, METRICS_FILE};
use super::checkpoint::{Checkpoint, CHECKPOINT_FILE};
use super::{ExperimentConfig, HarnessError};

/// The DP reference every trial is measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    /// Optimal cost per unit time.
    pub gain_per_time: f64,
    /// Optimal reward per decision epoch `ρ*` (negative).
    pub rho_star_per_epoch: f64,
    /// Stationary `E[Q]` under the optimal threshold policy.
    pub expected_q: f64,
    pub policy: ThresholdPolicy,
    pub iterations: usize,
    pub final_span: f64,
    pub q_max: usize,
    pub tol: f64,
}

impl Baseline {
    pub fn solve(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let x = &cfg.experiment;
        let model = TruncatedModel::new(&cfg.env, x.q_max);
        let solution = relative_value_iteration(&model, x.dp_tol, x.dp_max_iter)?;
        let policy = extract_thresholds(&solution, cfg.boundary_band())?;
        let stationary = stationary_analysis(&policy, &model);
        Ok(Self {
            gain_per_time: solution.gain,
            rho_star_per_epoch: -solution.gain_per_epoch(cfg.env.lambda),
            expected_q: stationary.expected_q,
            policy,
            iterations: solution.iterations,
            final_span: solution.final_span,
            q_max: x.q_max,
            tol: x.dp_tol,
        })
    }

    pub fn target(&self, cfg: &ExperimentConfig) -> EtaTarget {
        EtaTarget::new(cfg.experiment.eta_fraction, self.rho_star_per_epoch)
            .with_min_samples(cfg.ma_window_epochs() as u64)
    }
}

/// One cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrialSpec {
    pub algo: Algo,
    pub representation: Representation,
    pub seed: u64,
}

impl TrialSpec {
    pub fn new(algo: Algo, representation: Representation, seed: u64) -> Self {
        Self {
            algo,
            representation,
            seed,
        }
    }
}

/// Training stopped because an update produced non-finite parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    /// 1-based index of the rejected update.
    pub update: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub spec: TrialSpec,
    pub config_hash: String,
    pub samples: u64,
    pub updates: u64,
    pub sim_time: f64,
    /// First logged row at or above `ρ_η`.
    pub crossing: Option<CurveRow>,
    pub rho_eta: f64,
    pub rho_star_per_epoch: f64,
    pub episodes: Vec<EpisodeQueue>,
    pub baseline_q: f64,
    pub evaluation: Option<Evaluation>,
    pub failure: Option<TrialFailure>,
    pub policy: MlpParams,
    pub critic: Option<MlpParams>,
    pub final_rho_hat: f64,
}

impl TrialOutcome {
    /// `U_η`
    pub fn u_eta(&self) -> Option<u64> {
        self.crossing.map(|r| r.update_count)
    }

    /// `N_η`
    pub fn n_eta(&self) -> Option<u64> {
        self.crossing.map(|r| r.sample_count)
    }

    /// `R_Q(N_η)`
    pub fn regret_at_n_eta(&self) -> Option<f64> {
        self.n_eta()
            .map(|n| pseudo_regret(&self.episodes, self.baseline_q, Some(n)).total())
    }

    pub fn regret_total(&self) -> f64 {
        pseudo_regret(&self.episodes, self.baseline_q, None).total()
    }

    pub fn metrics_row(&self) -> MetricsCsv {
        MetricsCsv {
            config_hash: self.config_hash.clone(),
            algo: self.spec.algo.tag().into(),
            state: self.spec.representation.tag().into(),
            seed: self.spec.seed,
            status: if self.failure.is_some() { "diverged" } else { "ok" }.into(),
            failed_update: self.failure.as_ref().map(|f| f.update),
            u_eta: self.u_eta(),
            n_eta: self.n_eta(),
            q_pi: self.evaluation.as_ref().map(|e| e.per_epoch),
            regret_at_n_eta: self.regret_at_n_eta(),
            regret_total: self.regret_total(),
            samples: self.samples,
            updates: self.updates,
            rho_star_per_epoch: self.rho_star_per_epoch,
            rho_eta: self.rho_eta,
        }
    }

    pub fn eval_row(&self) -> Option<EvalCsv> {
        self.evaluation.as_ref().map(|e| EvalCsv {
            config_hash: self.config_hash.clone(),
            algo: self.spec.algo.tag().into(),
            state: self.spec.representation.tag().into(),
            seed: self.spec.seed,
            episodes: e.episodes,
            q_pi_per_epoch: e.per_epoch,
            q_pi_per_time: e.per_time,
            std: e.per_epoch_std,
        })
    }

    pub fn checkpoint(&self, observation_scale: f64) -> Checkpoint {
        Checkpoint {
            algo: self.spec.algo,
            representation: self.spec.representation,
            seed: self.spec.seed,
            config_hash: self.config_hash.clone(),
            obs_scale: observation_scale,
            policy: self.policy.clone(),
            critic: self.critic.clone(),
        }
    }
}

/// Thins the logged learning curve: every row up to `dense_rows`, then every
/// `stride`-th, plus the crossing row and the final row.
#[derive(Debug, Clone)]
pub struct CurveThinner {
    dense_rows: u64,
    stride: u64,
    seen: u64,
    pending: Option<CurveRow>,
}

impl CurveThinner {
    pub const DENSE_ROWS: u64 = 10_000;
    pub const STRIDE: u64 = 10;

    pub fn new(dense_rows: u64, stride: u64) -> Self {
        Self {
            dense_rows,
            stride: stride.max(1),
            seen: 0,
            pending: None,
        }
    }

    /// Returns the row if it should be written now.
    pub fn offer(&mut self, row: CurveRow, force: bool) -> Option<CurveRow> {
        self.seen += 1;
        if force || self.seen <= self.dense_rows || self.seen % self.stride == 0 {
            self.pending = None;
            Some(row)
        } else {
            self.pending = Some(row);
            None
        }
    }

    /// The last offered row, if it was held back.
    pub fn finish(&mut self) -> Option<CurveRow> {
        self.pending.take()
    }
}

impl Default for CurveThinner {
    fn default() -> Self {
        Self::new(Self::DENSE_ROWS, Self::STRIDE)
    }
}

/// Trains one agent, streaming curve and regret rows into `sink`, then
/// evaluates the final policy. Deterministic in `(cfg, spec)`.
pub fn train<S: TrialSink>(
    cfg: &ExperimentConfig,
    spec: TrialSpec,
    baseline: &Baseline,
    sink: &mut S,
) -> Result<TrialOutcome, HarnessError> {
    cfg.validate()?;
    let params = &cfg.env;
    let x = &cfg.experiment;
    let observer = Observer::with_scale(spec.representation, cfg.observation.scale);
    let mut env_rng = RngStream::new(spec.seed, ENV_STREAM);
    let mut learner = build_learner(
        spec.algo,
        observer.dim(),
        params.menu_size(),
        cfg.agents.get(spec.algo),
        RngStream::new(spec.seed, AGENT_STREAM),
    );
    let target = baseline.target(cfg);
    let mut ma = MovingAverage::new(cfg.ma_window_epochs());
    let mut thinner = CurveThinner::default();
    let mut buffer = WarmStartBuffer::new(params.warm_start_n);

    let mut budget = x.budget_epochs;
    let (mut samples, mut updates, mut sim_time) = (0u64, 0u64, 0.0f64);
    let mut crossing: Option<CurveRow> = None;
    let mut failure = None;
    let mut episodes = Vec::new();
    let mut cum_regret = 0.0;

    'episodes: while samples < budget {
        let mut state = sim::reset(&buffer, &mut env_rng);
        let mut totals = IntervalTotals::default();
        for k in 0..params.epochs_per_episode {
            let obs = observer.encode(&state);
            let (a, logprob) = learner.act(&obs)?;
            let (next, rec) = sim::step(&state, a, params, &mut env_rng)?;
            samples += 1;
            sim_time += rec.dt;
            ma.push(rec.reward);
            totals.add(&rec, params);
            let done = k + 1 == params.epochs_per_episode || samples == budget;
            let tr = Transition {
                obs,
                action_index: a,
                logprob_at_behavior: logprob,
                reward: rec.reward,
                dt: rec.dt,
                next_obs: observer.encode(&next),
                epoch_index: samples,
            };
            state = next;
            match learner.observe(tr, done) {
                Ok(0) => {}
                Ok(n) => {
                    updates += n;
                    let row = CurveRow {
                        update_count: updates,
                        sample_count: samples,
                        sim_time,
                        ma_reward: ma.mean(),
                        rho_hat: learner.rho().rho_hat,
                    };
                    let first = crossing.is_none() && target.reached_by(&row);
                    if first {
                        crossing = Some(row);
                        if let Some(extra) = x.stop_after_crossing {
                            budget = budget.min(samples.saturating_add(extra));
                        }
                    }
                    if let Some(r) = thinner.offer(row, first) {
                        sink.curve_row(&r)?;
                    }
                }
                Err(NnError::Diverged) => {
                    failure = Some(TrialFailure {
                        update: updates + 1,
                        message: NnError::Diverged.to_string(),
                    });
                }
                Err(e) => return Err(e.into()),
            }
            if failure.is_some() || done {
                break;
            }
        }
        buffer.record_terminal(&state);
        if totals.epochs > 0 {
            let ep = EpisodeQueue {
                epochs: totals.epochs,
                mean_q: totals.time_avg_q(),
            };
            cum_regret += (ep.mean_q - baseline.expected_q) * ep.epochs as f64;
            sink.regret_row(&RegretRow {
                epoch: samples,
                mean_q: ep.mean_q,
                baseline_q: baseline.expected_q,
                cum_regret,
            })?;
            episodes.push(ep);
        }
        if failure.is_some() {
            break 'episodes;
        }
    }
    if let Some(r) = thinner.finish() {
        sink.curve_row(&r)?;
    }
    sink.flush()?;

    let evaluation = if failure.is_none() {
        let mut controller = NetworkController {
            policy: learner.policy(),
            observer,
            greedy: x.greedy_eval,
        };
        Some(policy_quality(
            &mut controller,
            params,
            x.eval_episodes,
            buffer.clone(),
            &mut RngStream::new(spec.seed, EVAL_STREAM),
        ))
    } else {
        None
    };

    Ok(TrialOutcome {
        spec,
        config_hash: cfg.config_hash(),
        samples,
        updates,
        sim_time,
        crossing,
        rho_eta: target.threshold(),
        rho_star_per_epoch: baseline.rho_star_per_epoch,
        episodes,
        baseline_q: baseline.expected_q,
        evaluation,
        failure,
        policy: learner.policy().clone(),
        critic: learner.critic().cloned(),
        final_rho_hat: learner.rho().rho_hat,
    })
}

/// Runs one trial and writes its artifacts under `dir`: the learning curve,
/// regret trace, evaluation, per-trial metrics and a checkpoint.
pub fn run_trial(
    cfg: &ExperimentConfig,
    spec: TrialSpec,
    baseline: &Baseline,
    dir: &Path,
) -> Result<TrialOutcome, HarnessError> {
    let key = RowKey {
        config_hash: cfg.config_hash(),
        algo: spec.algo.tag().into(),
        state: spec.representation.tag().into(),
        seed: spec.seed,
    };
    let mut sink = FileSink::create(dir, key)?;
    let outcome = train(cfg, spec, baseline, &mut sink)?;
    let eval_rows: Vec<EvalCsv> = outcome.eval_row().into_iter().collect();
    write_csv(&dir.join(EVAL_FILE), &eval_rows)?;
    write_csv(&dir.join(METRICS_FILE), &[outcome.metrics_row()])?;
    let ckpt_path: PathBuf = dir.join(CHECKPOINT_FILE);
    outcome.checkpoint(cfg.observation.scale).save(&ckpt_path)?;
    Ok(outcome)
}
