//! Event-driven simulation of an M/M/1 queue whose service rate is chosen at
//! the start of every service.
//!
//! Queue lengths count every job in the system, including the one in
//! service. A decision epoch is the instant a service is about to begin, so
//! the observed queue length is always at least one. Between epochs the
//! holding and energy costs are integrated exactly over the piecewise-constant
//! queue path; nothing is time-stepped.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid environment parameters: {0}")]
    InvalidParams(String),
    #[error("action index {index} out of range for {menu} service rates")]
    InvalidAction { index: usize, menu: usize },
    #[error("decision epoch with an empty system (q_now = 0)")]
    EmptyAtEpoch,
}

/// Arrival rate, service-rate menu, cost coefficients and episode settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    pub lambda: f64,
    /// Ascending service rates; action `i` selects `rates[i]`.
    pub rates: Vec<f64>,
    pub c_q: f64,
    pub c_e: f64,
    pub epochs_per_episode: usize,
    pub warm_start_n: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            lambda: 0.04,
            rates: vec![0.0417, 0.0500, 0.0625, 0.0833, 0.1000],
            c_q: 0.4,
            c_e: 0.25,
            epochs_per_episode: 512,
            warm_start_n: 50,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidParams(m.to_string()));
        if self.rates.is_empty() {
            return bad("rate menu is empty");
        }
        if self.rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("service rates must be finite and positive");
        }
        if self.rates.windows(2).any(|w| w[0] > w[1]) {
            return bad("service rates must be sorted ascending");
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad("arrival rate must be finite and positive");
        }
        if self.lambda >= self.rates[0] {
            return bad("arrival rate must be below the slowest service rate");
        }
        if !(self.c_q > 0.0) || !(self.c_e >= 0.0) || !self.c_q.is_finite() || !self.c_e.is_finite()
        {
            return bad("need c_q > 0 and c_e >= 0");
        }
        if self.epochs_per_episode == 0 {
            return bad("epochs_per_episode must be positive");
        }
        Ok(())
    }

    pub fn menu_size(&self) -> usize {
        self.rates.len()
    }

    /// Mean number in system for a fixed rate, `λ / (μ − λ)`.
    pub fn mm1_mean_queue(&self, rate: f64) -> f64 {
        self.lambda / (rate - self.lambda)
    }

    /// Long-run cost per unit time for a fixed rate: `c_q·E[Q] + c_e·λ`.
    pub fn mm1_cost_rate(&self, rate: f64) -> f64 {
        self.c_q * self.mm1_mean_queue(rate) + self.c_e * self.lambda
    }
}

/// System state at a decision epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueState {
    pub q_now: u32,
    pub q_prev: u32,
    pub sim_time: f64,
    pub epoch_index: u64,
}

impl QueueState {
    pub fn start(q: u32) -> Self {
        Self {
            q_now: q,
            q_prev: q,
            sim_time: 0.0,
            epoch_index: 0,
        }
    }
}

/// One inter-decision interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub action_index: usize,
    /// Negated cost accrued over the interval.
    pub reward: f64,
    pub dt: f64,
    pub time_avg_q: f64,
    pub busy_time: f64,
}

impl StepRecord {
    /// Area under `Q(t)` over the interval.
    pub fn queue_area(&self) -> f64 {
        self.time_avg_q * self.dt
    }
}

/// FIFO ring of terminal queue lengths used to initialise episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartBuffer {
    capacity: usize,
    entries: VecDeque<u32>,
}

impl WarmStartBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().copied()
    }

    /// Stores the terminal queue length of a finished episode.
    pub fn record_terminal(&mut self, state: &QueueState) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(state.q_now);
    }
}

/// Starts an episode from a uniformly drawn terminal state of earlier
/// episodes, or from a single job entering service if there are none.
pub fn reset(buffer: &WarmStartBuffer, rng: &mut RngStream) -> QueueState {
    let q = if buffer.is_empty() {
        1
    } else {
        buffer.entries[rng.below(buffer.len())]
    };
    QueueState::start(q)
}

/// Simulates one service interval at `rates[action_index]`.
///
/// The interval ends at the next service start: the completion itself if jobs
/// remain, otherwise the next arrival after an idle spell (which costs
/// nothing).
pub fn step(
    state: &QueueState,
    action_index: usize,
    params: &EnvParams,
    rng: &mut RngStream,
) -> Result<(QueueState, StepRecord), SimError> {
    let rate = *params
        .rates
        .get(action_index)
        .ok_or(SimError::InvalidAction {
            index: action_index,
            menu: params.rates.len(),
        })?;
    if state.q_now == 0 {
        return Err(SimError::EmptyAtEpoch);
    }

    let service = rng.exponential(rate);
    let mut q = state.q_now;
    let mut t = 0.0;
    let mut area = 0.0;
    loop {
        let gap = rng.exponential(params.lambda);
        if t + gap < service {
            area += f64::from(q) * gap;
            t += gap;
            q += 1;
        } else {
            area += f64::from(q) * (service - t);
            break;
        }
    }
    q -= 1;

    let dt = if q >= 1 {
        service
    } else {
        q = 1;
        service + rng.exponential(params.lambda)
    };

    let reward = -(params.c_q * area + params.c_e * rate * service);
    let next = QueueState {
        q_now: q,
        q_prev: state.q_now,
        sim_time: state.sim_time + dt,
        epoch_index: state.epoch_index + 1,
    };
    let record = StepRecord {
        action_index,
        reward,
        dt,
        time_avg_q: area / dt,
        busy_time: service,
    };
    Ok((next, record))
}

/// Which queue features the agent sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Representation {
    /// `(Q_k)`
    #[serde(rename = "q")]
    QOnly,
    /// `(Q_k, Q_{k-1})`
    #[serde(rename = "qq")]
    QWithHistory,
}

impl Representation {
    pub fn tag(self) -> &'static str {
        match self {
            Representation::QOnly => "q",
            Representation::QWithHistory => "qq",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "q" => Some(Representation::QOnly),
            "qq" => Some(Representation::QWithHistory),
            _ => None,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Representation::QOnly => 1,
            Representation::QWithHistory => 2,
        }
    }
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Maps a decision-epoch state to the agent's feature vector. Alternative
/// encodings plug in by implementing this trait.
pub trait FeatureMap {
    fn dim(&self) -> usize;
    fn encode(&self, state: &QueueState) -> Vec<f64>;
}

/// Raw queue counts divided by a fixed scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observer {
    pub representation: Representation,
    pub scale: f64,
}

impl Observer {
    pub const DEFAULT_SCALE: f64 = 10.0;

    pub fn new(representation: Representation) -> Self {
        Self {
            representation,
            scale: Self::DEFAULT_SCALE,
        }
    }

    pub fn with_scale(representation: Representation, scale: f64) -> Self {
        Self {
            representation,
            scale,
        }
    }
}

impl FeatureMap for Observer {
    fn dim(&self) -> usize {
        self.representation.dim()
    }

    fn encode(&self, state: &QueueState) -> Vec<f64> {
        observe(state, self.representation, self.scale)
    }
}

pub fn observe(state: &QueueState, representation: Representation, scale: f64) -> Vec<f64> {
    let now = f64::from(state.q_now) / scale;
    match representation {
        Representation::QOnly => vec![now],
        Representation::QWithHistory => vec![now, f64::from(state.q_prev) / scale],
    }
}

/// Running totals over a stretch of simulated intervals.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntervalTotals {
    pub epochs: u64,
    pub reward: f64,
    pub time: f64,
    pub queue_area: f64,
    pub busy_time: f64,
    pub energy_cost: f64,
}

impl IntervalTotals {
    pub fn add(&mut self, record: &StepRecord, params: &EnvParams) {
        self.epochs += 1;
        self.reward += record.reward;
        self.time += record.dt;
        self.queue_area += record.queue_area();
        self.busy_time += record.busy_time;
        self.energy_cost += params.c_e * params.rates[record.action_index] * record.busy_time;
    }

    pub fn reward_per_epoch(&self) -> f64 {
        self.reward / self.epochs as f64
    }

    pub fn reward_per_time(&self) -> f64 {
        self.reward / self.time
    }

    pub fn time_avg_q(&self) -> f64 {
        self.queue_area / self.time
    }
}
