use crate::nn::{
    accumulate_entropy_grad, accumulate_logprob_grad, accumulate_value_grad, sgd_apply,
    value_forward, Direction, ForwardCache, GradBuffer, MlpParams, NnError,
};
use crate::rng::RngStream;

use super::{select_action, Algo, AgentConfig, Learner, RhoEstimator, Transition};

/// `δ = R − center + V(s') − V(s)`.
pub fn td_error(reward: f64, center: f64, v_next: f64, v_now: f64) -> f64 {
    reward - center + v_next - v_now
}

/// Reusable gradient buffers for per-step updates.
#[derive(Debug, Clone)]
struct Scratch {
    actor: GradBuffer,
    critic: GradBuffer,
    cache: ForwardCache,
}

impl Scratch {
    fn new(policy: &MlpParams, critic: &MlpParams) -> Self {
        Self {
            actor: GradBuffer::zeros_like(policy),
            critic: GradBuffer::zeros_like(critic),
            cache: ForwardCache::default(),
        }
    }
}

fn update_with(
    policy: &mut MlpParams,
    critic: &mut MlpParams,
    tr: &Transition,
    rho: &mut RhoEstimator,
    cfg: &AgentConfig,
    scratch: &mut Scratch,
) -> Result<f64, NnError> {
    scratch.critic.zero();
    let v_now = accumulate_value_grad(critic, &tr.obs, 1.0, &mut scratch.critic, &mut scratch.cache)?;
    // s' enters only as a fixed target
    let v_next = value_forward(critic, &tr.next_obs)?;
    let delta = td_error(tr.reward, rho.center(tr.dt), v_next, v_now);

    scratch.actor.zero();
    accumulate_logprob_grad(
        policy,
        &tr.obs,
        tr.action_index,
        delta,
        &mut scratch.actor,
        &mut scratch.cache,
    )?;
    if cfg.entropy_coef > 0.0 {
        accumulate_entropy_grad(policy, &tr.obs, cfg.entropy_coef, &mut scratch.actor, &mut scratch.cache)?;
    }
    scratch.actor.clip_norm(cfg.grad_clip);
    sgd_apply(policy, &scratch.actor, cfg.actor_lr, Direction::Ascent)?;

    scratch.critic.scale(delta);
    scratch.critic.clip_norm(cfg.grad_clip);
    sgd_apply(critic, &scratch.critic, cfg.critic_lr, Direction::Ascent)?;

    rho.td_update(delta, tr.dt);
    Ok(delta)
}

/// One actor-critic step on a single transition. Returns the TD error.
pub fn a2c_update(
    policy: &mut MlpParams,
    critic: &mut MlpParams,
    tr: &Transition,
    rho: &mut RhoEstimator,
    cfg: &AgentConfig,
) -> Result<f64, NnError> {
    let mut scratch = Scratch::new(policy, critic);
    update_with(policy, critic, tr, rho, cfg, &mut scratch)
}

/// Differential advantage actor-critic: one update per decision epoch.
#[derive(Debug, Clone)]
pub struct A2c {
    policy: MlpParams,
    critic: MlpParams,
    rho: RhoEstimator,
    cfg: AgentConfig,
    rng: RngStream,
    scratch: Scratch,
}

impl A2c {
    pub fn new(policy: MlpParams, critic: MlpParams, cfg: AgentConfig, rng: RngStream) -> Self {
        let scratch = Scratch::new(&policy, &critic);
        Self {
            rho: RhoEstimator::new(cfg.rho_lr, cfg.centering),
            policy,
            critic,
            cfg,
            rng,
            scratch,
        }
    }
}

impl Learner for A2c {
    fn algo(&self) -> Algo {
        Algo::A2c
    }

    fn policy(&self) -> &MlpParams {
        &self.policy
    }

    fn critic(&self) -> Option<&MlpParams> {
        Some(&self.critic)
    }

    fn rho(&self) -> &RhoEstimator {
        &self.rho
    }

    fn act(&mut self, obs: &[f64]) -> Result<(usize, f64), NnError> {
        select_action(&self.policy, obs, &mut self.rng)
    }

    fn observe(&mut self, tr: Transition, _episode_done: bool) -> Result<u64, NnError> {
        update_with(
            &mut self.policy,
            &mut self.critic,
            &tr,
            &mut self.rho,
            &self.cfg,
            &mut self.scratch,
        )?;
        Ok(1)
    }
}
