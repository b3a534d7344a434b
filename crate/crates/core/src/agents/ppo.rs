use crate::nn::{
    accumulate_entropy_grad, accumulate_logprob_grad_with, accumulate_value_grad_with, sgd_apply,
    value_forward, Direction, ForwardCache, GradBuffer, MlpParams, NnError,
};
use crate::rng::RngStream;

use super::{select_action, td_error, Algo, AgentConfig, Learner, RhoEstimator, Transition};

/// Per-sample clipped surrogate `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to `ln π`, i.e. the
/// weight on `∇ ln π`: `r·A` where the unclipped branch is active, 0 where
/// the clip binds.
pub fn surrogate_grad_weight(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let binds = (advantage > 0.0 && ratio > 1.0 + eps) || (advantage < 0.0 && ratio < 1.0 - eps);
    if binds {
        0.0
    } else {
        ratio * advantage
    }
}

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

#[allow(clippy::too_many_arguments)]
fn update_with(
    policy: &mut MlpParams,
    critic: &mut MlpParams,
    batch: &[Transition],
    rho: &mut RhoEstimator,
    cfg: &AgentConfig,
    rng: &mut RngStream,
    scratch: &mut Scratch,
) -> Result<u64, NnError> {
    if batch.is_empty() {
        return Ok(0);
    }
    let mut advantages = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for tr in batch {
        let v_now = value_forward(critic, &tr.obs)?;
        let v_next = value_forward(critic, &tr.next_obs)?;
        let center = rho.center(tr.dt);
        advantages.push(td_error(tr.reward, center, v_next, v_now));
        targets.push(tr.reward - center + v_next);
    }

    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut updates = 0;
    for _ in 0..cfg.ppo_epochs {
        rng.shuffle(&mut order);
        for mb in order.chunks(cfg.minibatch_size) {
            let inv = 1.0 / mb.len() as f64;

            scratch.actor.zero();
            for &k in mb {
                let tr = &batch[k];
                let adv = advantages[k];
                let old = tr.logprob_at_behavior;
                accumulate_logprob_grad_with(
                    policy,
                    &tr.obs,
                    tr.action_index,
                    |logprob| inv * surrogate_grad_weight((logprob - old).exp(), adv, cfg.clip_eps),
                    &mut scratch.actor,
                    &mut scratch.cache,
                )?;
                if cfg.entropy_coef > 0.0 {
                    accumulate_entropy_grad(
                        policy,
                        &tr.obs,
                        inv * cfg.entropy_coef,
                        &mut scratch.actor,
                        &mut scratch.cache,
                    )?;
                }
            }
            scratch.actor.clip_norm(cfg.grad_clip);
            sgd_apply(policy, &scratch.actor, cfg.actor_lr, Direction::Ascent)?;

            // Descent on ½(y − V)² is ascent along (y − V)∇V.
            scratch.critic.zero();
            for &k in mb {
                let target = targets[k];
                accumulate_value_grad_with(
                    critic,
                    &batch[k].obs,
                    |v| inv * (target - v),
                    &mut scratch.critic,
                    &mut scratch.cache,
                )?;
            }
            scratch.critic.clip_norm(cfg.grad_clip);
            sgd_apply(critic, &scratch.critic, cfg.critic_lr, Direction::Ascent)?;
            updates += 1;
        }
    }
    rho.ema_update(batch.iter().map(|t| (t.reward, t.dt)));
    Ok(updates)
}

/// Runs the clipped-surrogate optimisation on a batch collected under the
/// current policy. Returns the number of minibatch gradient steps taken.
pub fn ppo_update(
    policy: &mut MlpParams,
    critic: &mut MlpParams,
    batch: &[Transition],
    rho: &mut RhoEstimator,
    cfg: &AgentConfig,
    rng: &mut RngStream,
) -> Result<u64, NnError> {
    let mut scratch = Scratch::new(policy, critic);
    update_with(policy, critic, batch, rho, cfg, rng, &mut scratch)
}

/// PPO with one-step differential advantages.
#[derive(Debug, Clone)]
pub struct Ppo {
    policy: MlpParams,
    critic: MlpParams,
    rho: RhoEstimator,
    cfg: AgentConfig,
    rng: RngStream,
    batch: Vec<Transition>,
    scratch: Scratch,
}

impl Ppo {
    pub fn new(policy: MlpParams, critic: MlpParams, cfg: AgentConfig, rng: RngStream) -> Self {
        let scratch = Scratch::new(&policy, &critic);
        Self {
            rho: RhoEstimator::new(cfg.rho_lr, cfg.centering),
            batch: Vec::with_capacity(cfg.batch_size),
            policy,
            critic,
            cfg,
            rng,
            scratch,
        }
    }
}

impl Learner for Ppo {
    fn algo(&self) -> Algo {
        Algo::Ppo
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
        self.batch.push(tr);
        if self.batch.len() < self.cfg.batch_size {
            return Ok(0);
        }
        let n = update_with(
            &mut self.policy,
            &mut self.critic,
            &self.batch,
            &mut self.rho,
            &self.cfg,
            &mut self.rng,
            &mut self.scratch,
        )?;
        self.batch.clear();
        Ok(n)
    }
}
