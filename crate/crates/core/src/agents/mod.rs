//! Average-reward policy-gradient learners.
//!
//! All three agents centre rewards on a running estimate `ρ̂` of the
//! long-run average reward and differ in how they form the policy-gradient
//! weight: the full differential return (REINFORCE), the one-step
//! differential TD error (A2C), or a clipped likelihood-ratio surrogate over
//! one-step TD advantages (PPO).

mod a2c;
mod ppo;
mod reinforce;

pub use a2c::{a2c_update, td_error, A2c};
pub use ppo::{clipped_surrogate, ppo_update, surrogate_grad_weight, Ppo};
pub use reinforce::{differential_returns, reinforce_update, Reinforce};

use serde::{Deserialize, Serialize};

use crate::nn::{softmax, MlpParams, NnError};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Reinforce,
    A2c,
    Ppo,
}

impl Algo {
    pub const ALL: [Algo; 3] = [Algo::Reinforce, Algo::A2c, Algo::Ppo];

    pub fn tag(self) -> &'static str {
        match self {
            Algo::Reinforce => "reinforce",
            Algo::A2c => "a2c",
            Algo::Ppo => "ppo",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    pub fn uses_critic(self) -> bool {
        !matches!(self, Algo::Reinforce)
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Whether rewards are centred per decision epoch (`r − ρ̂`) or per unit of
/// elapsed time (`r − ρ̂·Δτ`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    PerEpoch,
    PerTime,
}

/// Running estimate of the average reward.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoEstimator {
    pub rho_hat: f64,
    pub beta: f64,
    pub mode: Centering,
    /// Running mean interval length, used to scale TD corrections in
    /// per-time mode.
    mean_dt: Option<f64>,
}

impl RhoEstimator {
    pub fn new(beta: f64, mode: Centering) -> Self {
        Self {
            rho_hat: 0.0,
            beta,
            mode,
            mean_dt: None,
        }
    }

    pub fn with_value(mut self, rho_hat: f64) -> Self {
        self.rho_hat = rho_hat;
        self
    }

    /// Amount subtracted from a reward earned over an interval of length `dt`.
    pub fn center(&self, dt: f64) -> f64 {
        match self.mode {
            Centering::PerEpoch => self.rho_hat,
            Centering::PerTime => self.rho_hat * dt,
        }
    }

    pub fn centered(&self, reward: f64, dt: f64) -> f64 {
        reward - self.center(dt)
    }

    /// Moves `ρ̂` by `β` times the mean centred reward of a batch of
    /// `(reward, dt)` pairs. In per-time mode the mean is taken per unit time.
    pub fn ema_update<I>(&mut self, samples: I)
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let (mut centred, mut n, mut time) = (0.0, 0usize, 0.0);
        for (r, dt) in samples {
            centred += self.centered(r, dt);
            n += 1;
            time += dt;
        }
        if n == 0 {
            return;
        }
        let step = match self.mode {
            Centering::PerEpoch => centred / n as f64,
            Centering::PerTime => centred / time,
        };
        self.rho_hat += self.beta * step;
    }

    /// Differential TD rule `ρ̂ ← ρ̂ + β·δ`; per-time mode divides `δ` by the
    /// running mean interval length.
    pub fn td_update(&mut self, delta: f64, dt: f64) {
        match self.mode {
            Centering::PerEpoch => self.rho_hat += self.beta * delta,
            Centering::PerTime => {
                let m = match self.mean_dt {
                    None => dt,
                    Some(m) => m + self.beta * (dt - m),
                };
                self.mean_dt = Some(m);
                self.rho_hat += self.beta * delta / m;
            }
        }
    }
}

/// One SMDP transition as seen by a learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action_index: usize,
    /// `ln π(a|s)` under the policy that chose the action.
    pub logprob_at_behavior: f64,
    pub reward: f64,
    pub dt: f64,
    pub next_obs: Vec<f64>,
    pub epoch_index: u64,
}

/// Learner hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Step size `β` of the average-reward estimator.
    pub rho_lr: f64,
    pub hidden: usize,
    /// PPO transitions per policy-improvement round.
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub ppo_epochs: usize,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    /// Max Euclidean norm of each gradient before a step; 0 disables.
    pub grad_clip: f64,
    pub centering: Centering,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            rho_lr: 1e-2,
            hidden: 64,
            batch_size: 1024,
            minibatch_size: 256,
            ppo_epochs: 4,
            clip_eps: 0.2,
            entropy_coef: 0.0,
            grad_clip: 5.0,
            centering: Centering::PerEpoch,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), String> {
        let rates = [self.actor_lr, self.critic_lr, self.rho_lr];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err("learning rates must be finite and non-negative".into());
        }
        if self.rho_lr > 1.0 {
            return Err("rho_lr must lie in [0, 1]".into());
        }
        if !(self.clip_eps > 0.0) {
            return Err("clip_eps must be positive".into());
        }
        if self.hidden == 0 || self.batch_size == 0 || self.minibatch_size == 0 || self.ppo_epochs == 0
        {
            return Err("hidden, batch_size, minibatch_size and ppo_epochs must be positive".into());
        }
        if !(self.grad_clip >= 0.0) || !(self.entropy_coef >= 0.0) {
            return Err("grad_clip and entropy_coef must be non-negative".into());
        }
        Ok(())
    }

    pub fn layer_dims(&self, obs_dim: usize, outputs: usize) -> [usize; 4] {
        [obs_dim, self.hidden, self.hidden, outputs]
    }
}

/// Samples an action from the policy; returns it with its log-probability.
pub fn select_action(
    policy: &MlpParams,
    obs: &[f64],
    rng: &mut RngStream,
) -> Result<(usize, f64), NnError> {
    let logits = policy.output(obs)?;
    let probs = softmax(&logits);
    let a = rng.categorical(&probs);
    Ok((a, crate::nn::log_softmax_at(&logits, a)))
}

/// Most probable action; ties go to the lowest index.
pub fn greedy_action(policy: &MlpParams, obs: &[f64]) -> Result<usize, NnError> {
    let logits = policy.output(obs)?;
    let mut best = 0;
    for (i, z) in logits.iter().enumerate() {
        if *z > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Common interface the trainer drives.
pub trait Learner: Send {
    fn algo(&self) -> Algo;
    fn policy(&self) -> &MlpParams;
    fn critic(&self) -> Option<&MlpParams>;
    fn rho(&self) -> &RhoEstimator;
    /// Samples an action for `obs` from the current policy.
    fn act(&mut self, obs: &[f64]) -> Result<(usize, f64), NnError>;
    /// Feeds one transition. Returns the number of gradient updates it
    /// triggered (0 while a learner is still collecting).
    fn observe(&mut self, tr: Transition, episode_done: bool) -> Result<u64, NnError>;
}

/// Builds a freshly initialised learner. Networks are initialised from
/// `rng`, which the learner then keeps for action sampling.
pub fn build_learner(
    algo: Algo,
    obs_dim: usize,
    actions: usize,
    cfg: &AgentConfig,
    mut rng: RngStream,
) -> Box<dyn Learner> {
    let policy = MlpParams::init_uniform(&cfg.layer_dims(obs_dim, actions), &mut rng);
    match algo {
        Algo::Reinforce => Box::new(Reinforce::new(policy, cfg.clone(), rng)),
        Algo::A2c => {
            let critic = MlpParams::init_uniform(&cfg.layer_dims(obs_dim, 1), &mut rng);
            Box::new(A2c::new(policy, critic, cfg.clone(), rng))
        }
        Algo::Ppo => {
            let critic = MlpParams::init_uniform(&cfg.layer_dims(obs_dim, 1), &mut rng);
            Box::new(Ppo::new(policy, critic, cfg.clone(), rng))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{policy_forward, MlpParams};

    #[test]
    fn uniform_policy_sampling_frequencies() {
        let p = MlpParams::zeros(&[1, 4, 4, 5]);
        let mut rng = RngStream::new(17, 1);
        let mut counts = [0usize; 5];
        let n = 100_000;
        for _ in 0..n {
            counts[select_action(&p, &[0.1], &mut rng).unwrap().0] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.2).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn near_deterministic_policy_returns_dominant_action() {
        let mut p = MlpParams::zeros(&[1, 4, 4, 3]);
        // logit gap ln(2e9) gives the others ~5e-10 each
        p.layers_mut()[2].biases = vec![0.0, (2e9f64).ln(), 0.0];
        let mut rng = RngStream::new(3, 1);
        for _ in 0..1000 {
            assert_eq!(select_action(&p, &[0.0], &mut rng).unwrap().0, 1);
        }
    }

    #[test]
    fn returned_logprob_matches_forward() {
        let p = MlpParams::init_uniform(&[2, 8, 8, 5], &mut RngStream::new(4, 1));
        let mut rng = RngStream::new(5, 1);
        for _ in 0..50 {
            let obs = [rng.uniform(), rng.uniform()];
            let (a, lp) = select_action(&p, &obs, &mut rng).unwrap();
            let probs = policy_forward(&p, &obs).unwrap();
            assert!((lp - probs[a].ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_ties_go_low() {
        let p = MlpParams::zeros(&[1, 2, 2, 4]);
        assert_eq!(greedy_action(&p, &[1.0]).unwrap(), 0);
    }

    #[test]
    fn rho_estimator_modes() {
        let mut e = RhoEstimator::new(0.5, Centering::PerEpoch).with_value(-2.0);
        assert_eq!(e.centered(-5.0, 10.0), -3.0);
        e.ema_update([(-4.0, 1.0), (-6.0, 3.0)]);
        // mean centred = -3, step 0.5
        assert_eq!(e.rho_hat, -3.5);

        let mut t = RhoEstimator::new(1.0, Centering::PerTime).with_value(-0.1);
        assert!((t.centered(-5.0, 10.0) - -4.0).abs() < 1e-15);
        t.ema_update([(-2.0, 10.0), (-6.0, 30.0)]);
        // β = 1 jumps to the batch's reward per unit time
        assert!((t.rho_hat - -0.2).abs() < 1e-15);
    }

    #[test]
    fn td_rule_per_epoch() {
        let mut e = RhoEstimator::new(0.1, Centering::PerEpoch);
        e.td_update(2.0, 7.0);
        assert!((e.rho_hat - 0.2).abs() < 1e-15);
    }

    #[test]
    fn fixed_policy_rho_tracks_mean_reward() {
        let mut e = RhoEstimator::new(1e-3, Centering::PerEpoch);
        let mut rng = RngStream::new(9, 0);
        let mut sum = 0.0;
        let n = 200_000;
        for _ in 0..n {
            let r = -7.0 + 4.0 * (rng.uniform() - 0.5);
            sum += r;
            e.ema_update([(r, 1.0)]);
        }
        assert!((e.rho_hat - sum / n as f64).abs() < 0.1, "{}", e.rho_hat);
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        let bad = AgentConfig {
            clip_eps: 0.0,
            ..AgentConfig::default()
        };
        assert!(bad.validate().is_err());
        let neg = AgentConfig {
            actor_lr: -1.0,
            ..AgentConfig::default()
        };
        assert!(neg.validate().is_err());
    }
}
