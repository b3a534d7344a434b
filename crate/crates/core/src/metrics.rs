//! Learning-efficiency and policy-quality metrics.
//!
//! `U_η` and `N_η` are first crossings of a moving-average reward curve over
//! a reward floor `ρ_η` set relative to the DP optimum. `Q_π` evaluates a
//! frozen policy, and the queue-length pseudo-regret accumulates the excess
//! of the learner's time-averaged queue over the optimal policy's stationary
//! mean.

use std::collections::VecDeque;

use crate::agents::{greedy_action, select_action};
use crate::dp::ThresholdPolicy;
use crate::nn::MlpParams;
use crate::rng::RngStream;
use crate::sim::{self, EnvParams, FeatureMap, IntervalTotals, Observer, QueueState, WarmStartBuffer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub update_count: u64,
    pub sample_count: u64,
    pub sim_time: f64,
    pub ma_reward: f64,
    pub rho_hat: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    pub fn from_rows(rows: Vec<CurveRow>) -> Self {
        Self { rows }
    }

    /// Counters strictly increase row over row.
    pub fn is_well_ordered(&self) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].update_count > w[0].update_count && w[1].sample_count > w[0].sample_count
        })
    }
}

/// Reward floor for the convergence metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaTarget {
    pub eta_fraction: f64,
    /// Optimal reward per decision epoch (negative).
    pub rho_star_per_epoch: f64,
    /// Rows logged before this many samples are ignored, so a partly
    /// filled moving-average window cannot register a crossing.
    pub min_samples: u64,
}

impl EtaTarget {
    pub fn new(eta_fraction: f64, rho_star_per_epoch: f64) -> Self {
        Self {
            eta_fraction,
            rho_star_per_epoch,
            min_samples: 0,
        }
    }

    pub fn with_min_samples(mut self, min_samples: u64) -> Self {
        self.min_samples = min_samples;
        self
    }

    /// `ρ_η = ρ* − (1 − η)·|ρ*|`.
    pub fn threshold(&self) -> f64 {
        self.rho_star_per_epoch - (1.0 - self.eta_fraction) * self.rho_star_per_epoch.abs()
    }

    pub fn reached_by(&self, row: &CurveRow) -> bool {
        row.sample_count >= self.min_samples && row.ma_reward >= self.threshold()
    }
}

/// Index of the first row meeting the target.
pub fn first_crossing(curve: &LearningCurve, target: &EtaTarget) -> Option<usize> {
    curve.rows.iter().position(|r| target.reached_by(r))
}

/// `U_η`: gradient updates until the moving average first reaches `ρ_η`.
pub fn convergence_speed(curve: &LearningCurve, target: &EtaTarget) -> Option<u64> {
    first_crossing(curve, target).map(|i| curve.rows[i].update_count)
}

/// `N_η`: decision epochs until the moving average first reaches `ρ_η`.
pub fn sampling_efficiency(curve: &LearningCurve, target: &EtaTarget) -> Option<u64> {
    first_crossing(curve, target).map(|i| curve.rows[i].sample_count)
}

/// Fixed-length moving average.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    capacity: usize,
    values: VecDeque<f64>,
    sum: f64,
    since_resum: usize,
}

impl MovingAverage {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            values: VecDeque::with_capacity(capacity),
            sum: 0.0,
            since_resum: 0,
        }
    }

    pub fn push(&mut self, x: f64) {
        if self.values.len() == self.capacity {
            let old = self.values.pop_front().unwrap_or(0.0);
            self.sum -= old;
        }
        self.values.push_back(x);
        self.sum += x;
        self.since_resum += 1;
        // bound accumulated cancellation error
        if self.since_resum >= self.capacity {
            self.sum = self.values.iter().sum();
            self.since_resum = 0;
        }
    }

    pub fn is_full(&self) -> bool {
        self.values.len() == self.capacity
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.sum / self.values.len() as f64
        }
    }
}

/// Something that picks a rate index at a decision epoch.
pub trait Controller {
    fn choose(&mut self, state: &QueueState, rng: &mut RngStream) -> usize;
}

impl Controller for ThresholdPolicy {
    fn choose(&mut self, state: &QueueState, _rng: &mut RngStream) -> usize {
        self.rate_for(state.q_now as usize)
    }
}

/// A frozen network policy.
#[derive(Debug, Clone)]
pub struct NetworkController<'a> {
    pub policy: &'a MlpParams,
    pub observer: Observer,
    /// Take the most probable action instead of sampling.
    pub greedy: bool,
}

impl Controller for NetworkController<'_> {
    fn choose(&mut self, state: &QueueState, rng: &mut RngStream) -> usize {
        let obs = self.observer.encode(state);
        let picked = if self.greedy {
            greedy_action(self.policy, &obs)
        } else {
            select_action(self.policy, &obs, rng).map(|(a, _)| a)
        };
        picked.expect("observer width matches the policy input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub episodes: usize,
    /// `Q_π`: mean over episodes of reward per decision epoch.
    pub per_epoch: f64,
    pub per_epoch_std: f64,
    /// Mean over episodes of reward per unit time.
    pub per_time: f64,
    pub per_time_std: f64,
    pub mean_q: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `episodes` evaluation episodes under a frozen controller, warm
/// starting from `buffer` and from each finished episode in turn.
pub fn policy_quality<C: Controller>(
    controller: &mut C,
    params: &EnvParams,
    episodes: usize,
    mut buffer: WarmStartBuffer,
    rng: &mut RngStream,
) -> Evaluation {
    let episodes = episodes.max(1);
    let mut per_epoch = Vec::with_capacity(episodes);
    let mut per_time = Vec::with_capacity(episodes);
    let mut queue = IntervalTotals::default();
    for _ in 0..episodes {
        let mut state = sim::reset(&buffer, rng);
        let mut totals = IntervalTotals::default();
        for _ in 0..params.epochs_per_episode {
            let a = controller.choose(&state, rng);
            let (next, rec) = sim::step(&state, a, params, rng).expect("controller picks a valid rate");
            totals.add(&rec, params);
            state = next;
        }
        buffer.record_terminal(&state);
        per_epoch.push(totals.reward_per_epoch());
        per_time.push(totals.reward_per_time());
        queue.queue_area += totals.queue_area;
        queue.time += totals.time;
    }
    let (pe, pe_std) = mean_std(&per_epoch);
    let (pt, pt_std) = mean_std(&per_time);
    Evaluation {
        episodes,
        per_epoch: pe,
        per_epoch_std: pe_std,
        per_time: pt,
        per_time_std: pt_std,
        mean_q: queue.time_avg_q(),
    }
}

/// Time-averaged queue length of one training episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeQueue {
    pub epochs: u64,
    pub mean_q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretRow {
    /// Decision epochs covered through this row.
    pub epoch: u64,
    pub mean_q: f64,
    pub baseline_q: f64,
    pub cum_regret: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretTrace {
    pub rows: Vec<RegretRow>,
}

impl RegretTrace {
    pub fn total(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_regret)
    }

    pub fn epochs(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.epoch)
    }
}

/// `R_Q(N) = Σ_{k ≤ N} (E[Q_k | π_k] − E[Q | π*])`, with `E[Q_k | π_k]`
/// taken as the time-averaged queue of the episode containing epoch `k`.
/// `horizon = None` keeps every episode.
pub fn pseudo_regret(episodes: &[EpisodeQueue], baseline_q: f64, horizon: Option<u64>) -> RegretTrace {
    let limit = horizon.unwrap_or(u64::MAX);
    let mut rows = Vec::with_capacity(episodes.len());
    let (mut covered, mut cum) = (0u64, 0.0);
    for ep in episodes {
        if covered >= limit {
            break;
        }
        let take = ep.epochs.min(limit - covered);
        covered += take;
        cum += (ep.mean_q - baseline_q) * take as f64;
        rows.push(RegretRow {
            epoch: covered,
            mean_q: ep.mean_q,
            baseline_q,
            cum_regret: cum,
        });
    }
    RegretTrace { rows }
}
