//! Exact average-cost dynamic programming for the rate-controlled queue.
//!
//! The continuous-time chain on `Q ∈ {0, …, Q_max}` is uniformised at rate
//! `Λ = λ + max μ` and solved by relative value iteration. Arrivals at
//! `Q_max` are blocked. The birth-death stationary solver doubles as an
//! independent oracle for any threshold policy.

use thiserror::Error;

use crate::rng::RngStream;
use crate::sim::{self, EnvParams, IntervalTotals, QueueState, WarmStartBuffer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("relative value iteration did not converge in {iterations} sweeps (span {span:e})")]
    NotConverged { iterations: usize, span: f64 },
    #[error("policy is not monotone in Q: rate index drops from {from} to {to} at Q = {q}")]
    NonMonotone { q: usize, from: usize, to: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// The queue truncated at `q_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedModel {
    pub lambda: f64,
    pub rates: Vec<f64>,
    pub c_q: f64,
    pub c_e: f64,
    pub q_max: usize,
}

impl TruncatedModel {
    pub const DEFAULT_Q_MAX: usize = 500;

    pub fn new(params: &EnvParams, q_max: usize) -> Self {
        Self {
            lambda: params.lambda,
            rates: params.rates.clone(),
            c_q: params.c_q,
            c_e: params.c_e,
            q_max,
        }
    }

    pub fn with_q_max(&self, q_max: usize) -> Self {
        Self {
            q_max,
            ..self.clone()
        }
    }

    pub fn uniformization_rate(&self) -> f64 {
        self.lambda + self.rates.iter().copied().fold(0.0, f64::max)
    }

    /// Cost per unit time in state `q` under rate index `a`.
    pub fn cost_rate(&self, q: usize, a: usize) -> f64 {
        let busy = if q >= 1 { 1.0 } else { 0.0 };
        self.c_q * q as f64 + self.c_e * self.rates[a] * busy
    }

    /// `(down, stay, up)` transition probabilities of the uniformised chain.
    pub fn transition(&self, q: usize, a: usize) -> (f64, f64, f64) {
        let big = self.uniformization_rate();
        let up = if q < self.q_max { self.lambda / big } else { 0.0 };
        let down = if q >= 1 { self.rates[a] / big } else { 0.0 };
        (down, 1.0 - up - down, up)
    }

    fn validate(&self) -> Result<(), DpError> {
        if self.rates.is_empty() || self.rates.iter().any(|r| !(*r > 0.0)) {
            return Err(DpError::InvalidModel("rates must be non-empty and positive".into()));
        }
        if !(self.lambda > 0.0) || self.q_max == 0 {
            return Err(DpError::InvalidModel("need λ > 0 and q_max ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpSolution {
    /// Optimal long-run cost per unit time (negate for reward).
    pub gain: f64,
    /// Relative values, zero at `Q = 0`.
    pub bias: Vec<f64>,
    /// Greedy rate index for every `Q`.
    pub policy: Vec<usize>,
    pub iterations: usize,
    pub final_span: f64,
    /// Number of rates in the menu.
    pub menu: usize,
}

impl DpSolution {
    /// Optimal cost per decision epoch: one epoch per served job, so the
    /// per-time gain is divided by the arrival rate.
    pub fn gain_per_epoch(&self, lambda: f64) -> f64 {
        self.gain / lambda
    }
}

fn bellman(model: &TruncatedModel, h: &[f64], q: usize) -> (f64, usize) {
    let big = model.uniformization_rate();
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for a in 0..model.rates.len() {
        let (down, stay, up) = model.transition(q, a);
        let mut v = model.cost_rate(q, a) / big + stay * h[q];
        if down > 0.0 {
            v += down * h[q - 1];
        }
        if up > 0.0 {
            v += up * h[q + 1];
        }
        if v < best {
            best = v;
            arg = a;
        }
    }
    (best, arg)
}

/// Relative value iteration with reference state `Q = 0`, stopping when the
/// span of successive differences drops below `tol`.
pub fn relative_value_iteration(
    model: &TruncatedModel,
    tol: f64,
    max_iter: usize,
) -> Result<DpSolution, DpError> {
    model.validate()?;
    let n = model.q_max + 1;
    let big = model.uniformization_rate();
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut policy = vec![0; n];
    let mut span = f64::INFINITY;
    for it in 1..=max_iter {
        for q in 0..n {
            let (v, a) = bellman(model, &h, q);
            next[q] = v;
            policy[q] = a;
        }
        let offset = next[0];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for q in 0..n {
            let d = next[q] - h[q];
            lo = lo.min(d);
            hi = hi.max(d);
            next[q] -= offset;
        }
        span = hi - lo;
        std::mem::swap(&mut h, &mut next);
        if span < tol {
            return Ok(DpSolution {
                gain: offset * big,
                bias: h,
                policy,
                iterations: it,
                final_span: span,
                menu: model.rates.len(),
            });
        }
    }
    Err(DpError::NotConverged {
        iterations: max_iter,
        span,
    })
}

/// Monotone switching structure: rate index `j` is used for
/// `thresholds[j-1] ≤ Q < thresholds[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdPolicy {
    pub thresholds: Vec<usize>,
}

impl ThresholdPolicy {
    /// Always the fastest rate once a job is present.
    pub fn constant_fastest(menu: usize) -> Self {
        Self {
            thresholds: vec![1; menu.saturating_sub(1)],
        }
    }

    /// Always rate index `a`.
    pub fn constant(menu: usize, a: usize) -> Self {
        Self {
            thresholds: (1..menu).map(|j| if j <= a { 0 } else { usize::MAX }).collect(),
        }
    }

    pub fn menu_size(&self) -> usize {
        self.thresholds.len() + 1
    }

    /// Rate index used at queue length `q`.
    pub fn rate_for(&self, q: usize) -> usize {
        self.thresholds.iter().take_while(|w| q >= **w).count()
    }
}

/// Reads switching points off a DP policy: `ω_j` is the first `Q ≥ 1` at
/// which rate index `j` or faster is chosen. Monotonicity is checked on
/// `1 ≤ Q ≤ Q_max − band`; states beyond are distorted by the truncation.
/// A rate never reached inside that range gets `ω_j = Q_max − band + 1`.
pub fn extract_thresholds(solution: &DpSolution, band: usize) -> Result<ThresholdPolicy, DpError> {
    let n = solution.policy.len();
    let end = n.saturating_sub(1 + band).max(1).min(n - 1);
    let interior = &solution.policy[..=end];
    for q in 2..interior.len() {
        if interior[q] < interior[q - 1] {
            return Err(DpError::NonMonotone {
                q,
                from: interior[q - 1],
                to: interior[q],
            });
        }
    }
    let thresholds = (1..solution.menu)
        .map(|j| {
            (1..interior.len())
                .find(|&q| interior[q] >= j)
                .unwrap_or(interior.len())
        })
        .collect();
    Ok(ThresholdPolicy { thresholds })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryResult {
    pub expected_q: f64,
    pub cost_per_time: f64,
    pub distribution: Vec<f64>,
}

/// Birth-death balance `π(q) λ = π(q+1) μ(q+1)` on the truncated chain.
pub fn stationary_analysis(policy: &ThresholdPolicy, model: &TruncatedModel) -> StationaryResult {
    let n = model.q_max + 1;
    let mut dist = Vec::with_capacity(n);
    let mut p = 1.0;
    dist.push(p);
    for q in 1..n {
        p *= model.lambda / model.rates[policy.rate_for(q)];
        dist.push(p);
    }
    let total: f64 = dist.iter().sum();
    dist.iter_mut().for_each(|x| *x /= total);
    let expected_q = dist.iter().enumerate().map(|(q, x)| q as f64 * x).sum();
    let cost_per_time = dist
        .iter()
        .enumerate()
        .map(|(q, x)| x * model.cost_rate(q, policy.rate_for(q)))
        .sum();
    StationaryResult {
        expected_q,
        cost_per_time,
        distribution: dist,
    }
}

/// Best cost rate over all monotone threshold policies whose thresholds lie
/// in `1..=max_threshold`.
pub fn enumerate_threshold_policies(
    model: &TruncatedModel,
    max_threshold: usize,
) -> (ThresholdPolicy, f64) {
    let m = model.rates.len();
    let mut current = vec![1usize; m.saturating_sub(1)];
    let mut best = (ThresholdPolicy { thresholds: current.clone() }, f64::INFINITY);
    loop {
        let policy = ThresholdPolicy {
            thresholds: current.clone(),
        };
        let cost = stationary_analysis(&policy, model).cost_per_time;
        if cost < best.1 {
            best = (policy, cost);
        }
        // next nondecreasing tuple
        let Some(i) = (0..current.len()).rev().find(|&i| current[i] < max_threshold) else {
            break;
        };
        let v = current[i] + 1;
        current[i..].iter_mut().for_each(|x| *x = v);
    }
    best
}

/// Time-averaged estimates with 95% batch-means half-widths.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimate {
    pub cost_rate: f64,
    pub cost_half_width: f64,
    pub expected_q: f64,
    pub q_half_width: f64,
    pub epochs: u64,
    pub time: f64,
}

const BATCHES: usize = 20;
/// Student t quantile, 0.975, 19 degrees of freedom.
const T_975_19: f64 = 2.093;

/// Runs the threshold policy through the simulator up to `horizon` time
/// units, consulting it only at service starts.
pub fn verify_by_simulation(
    policy: &ThresholdPolicy,
    params: &EnvParams,
    horizon: f64,
    rng: &mut RngStream,
) -> SimEstimate {
    let mut state = sim::reset(&WarmStartBuffer::new(0), rng);
    let batch_len = horizon / BATCHES as f64;
    let mut batches = vec![IntervalTotals::default(); BATCHES];
    let mut total = IntervalTotals::default();
    while state.sim_time < horizon {
        let a = policy.rate_for(state.q_now as usize).min(params.rates.len() - 1);
        let (next, rec) = sim::step(&state, a, params, rng).expect("threshold policy picks a valid rate");
        let b = ((state.sim_time / batch_len) as usize).min(BATCHES - 1);
        batches[b].add(&rec, params);
        total.add(&rec, params);
        state = next;
    }
    let cost: Vec<f64> = batches.iter().map(|b| -b.reward_per_time()).collect();
    let q: Vec<f64> = batches.iter().map(IntervalTotals::time_avg_q).collect();
    SimEstimate {
        cost_rate: -total.reward_per_time(),
        cost_half_width: half_width(&cost),
        expected_q: total.time_avg_q(),
        q_half_width: half_width(&q),
        epochs: total.epochs,
        time: total.time,
    }
}

fn half_width(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    T_975_19 * (var / n).sqrt()
}

/// Steps the environment under a threshold policy from an explicit state.
pub fn threshold_step(
    policy: &ThresholdPolicy,
    state: &QueueState,
    params: &EnvParams,
    rng: &mut RngStream,
) -> (QueueState, sim::StepRecord) {
    let a = policy.rate_for(state.q_now as usize).min(params.rates.len() - 1);
    sim::step(state, a, params, rng).expect("threshold policy picks a valid rate")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_model() -> TruncatedModel {
        TruncatedModel::new(&EnvParams::default(), TruncatedModel::DEFAULT_Q_MAX)
    }

    fn single(rate: f64) -> TruncatedModel {
        TruncatedModel {
            rates: vec![rate],
            ..default_model()
        }
    }

    /// Closed-form truncated M/M/1 with a single rate: geometric weights.
    fn truncated_geometric(lambda: f64, mu: f64, q_max: usize) -> (f64, f64) {
        let r = lambda / mu;
        let w: Vec<f64> = (0..=q_max).map(|q| r.powi(q as i32)).collect();
        let z: f64 = w.iter().sum();
        let eq = w.iter().enumerate().map(|(q, x)| q as f64 * x).sum::<f64>() / z;
        let busy = 1.0 - w[0] / z;
        (eq, busy)
    }

    #[test]
    fn transitions_are_stochastic() {
        let m = default_model();
        assert!(m.uniformization_rate() >= m.lambda + 0.1 - 1e-15);
        for q in [0, 1, 7, m.q_max] {
            for a in 0..m.rates.len() {
                let (d, s, u) = m.transition(q, a);
                assert!(d >= 0.0 && s >= 0.0 && u >= 0.0);
                assert!((d + s + u - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_rate_rvi_matches_birth_death() {
        let m = single(0.1);
        let sol = relative_value_iteration(&m, 1e-9, 200_000).unwrap();
        let (eq, busy) = truncated_geometric(0.04, 0.1, m.q_max);
        let oracle = 0.4 * eq + 0.25 * 0.1 * busy;
        assert!((sol.gain - oracle).abs() < 1e-6, "{} vs {}", sol.gain, oracle);
        assert_eq!(sol.bias[0], 0.0);
        assert!(sol.final_span < 1e-9);
    }

    #[test]
    fn zero_cost_model_has_zero_gain() {
        let m = TruncatedModel {
            c_q: 0.0,
            c_e: 0.0,
            ..default_model().with_q_max(50)
        };
        let sol = relative_value_iteration(&m, 1e-9, 10_000).unwrap();
        assert_eq!(sol.gain, 0.0);
    }

    #[test]
    fn non_convergence_reports_span() {
        match relative_value_iteration(&default_model(), 1e-9, 3) {
            Err(DpError::NotConverged { iterations: 3, span }) => assert!(span > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn threshold_case_map() {
        let p = ThresholdPolicy {
            thresholds: vec![2, 4, 4, 9],
        };
        let got: Vec<_> = (0..12).map(|q| p.rate_for(q)).collect();
        assert_eq!(got, vec![0, 0, 1, 1, 3, 3, 3, 3, 3, 4, 4, 4]);
        assert_eq!(ThresholdPolicy::constant_fastest(5).rate_for(1), 4);
        assert_eq!(ThresholdPolicy::constant(5, 2).rate_for(0), 2);
        assert_eq!(ThresholdPolicy::constant(5, 2).rate_for(1000), 2);
        assert_eq!(ThresholdPolicy::constant(1, 0).rate_for(3), 0);
    }

    fn solution_with(policy: Vec<usize>, menu: usize) -> DpSolution {
        DpSolution {
            menu,
            gain: 0.0,
            bias: vec![0.0; policy.len()],
            policy,
            iterations: 1,
            final_span: 0.0,
        }
    }

    #[test]
    fn thresholds_of_constant_fastest() {
        let mut pol = vec![4; 30];
        pol[0] = 0;
        let t = extract_thresholds(&solution_with(pol, 5), 2).unwrap();
        assert_eq!(t.thresholds, vec![1, 1, 1, 1]);
    }

    #[test]
    fn single_switch_point() {
        let pol: Vec<usize> = (0..20).map(|q| usize::from(q >= 3)).collect();
        let t = extract_thresholds(&solution_with(pol, 2), 1).unwrap();
        assert_eq!(t.thresholds, vec![3]);
    }

    #[test]
    fn non_monotone_interior_is_reported() {
        let mut pol = vec![1; 20];
        pol[5] = 0;
        assert!(matches!(
            extract_thresholds(&solution_with(pol, 2), 2),
            Err(DpError::NonMonotone { q: 5, from: 1, to: 0 })
        ));
        // the same dip inside the boundary band is ignored
        let mut edge = vec![1; 20];
        edge[19] = 0;
        assert!(extract_thresholds(&solution_with(edge, 2), 2).is_ok());
    }

    #[test]
    fn stationary_closed_form() {
        let m = default_model();
        for a in 0..m.rates.len() {
            let p = ThresholdPolicy::constant(m.rates.len(), a);
            let r = stationary_analysis(&p, &m);
            let mu = m.rates[a];
            if mu >= 0.0625 {
                // geometric tail is negligible at Q_max = 500
                assert!((r.expected_q - 0.04 / (mu - 0.04)).abs() < 1e-8);
            }
            assert!((r.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_limit() {
        let m = TruncatedModel {
            lambda: 1e-9,
            ..default_model()
        };
        let r = stationary_analysis(&ThresholdPolicy::constant_fastest(5), &m);
        assert!(r.distribution[0] > 1.0 - 1e-6);
    }

    #[test]
    fn enumeration_visits_all_tuples() {
        // two rates, thresholds in 1..=3 → 3 policies; best is fastest everywhere
        let m = TruncatedModel {
            rates: vec![0.05, 0.1],
            ..default_model().with_q_max(100)
        };
        let (p, c) = enumerate_threshold_policies(&m, 3);
        assert_eq!(p.thresholds, vec![1]);
        let direct = stationary_analysis(&ThresholdPolicy::constant_fastest(2), &m).cost_per_time;
        assert_eq!(c, direct);
    }
}
