use crate::nn::{
    accumulate_entropy_grad, accumulate_logprob_grad, sgd_apply, Direction, ForwardCache,
    GradBuffer, MlpParams, NnError,
};
use crate::rng::RngStream;

use super::{select_action, Algo, AgentConfig, Learner, RhoEstimator, Transition};

/// Differential returns `G_k = Σ_{j≥k} (r_j − center_j)`.
pub fn differential_returns(episode: &[Transition], rho: &RhoEstimator) -> Vec<f64> {
    let mut out = vec![0.0; episode.len()];
    let mut acc = 0.0;
    for (g, tr) in out.iter_mut().zip(episode).rev() {
        acc += rho.centered(tr.reward, tr.dt);
        *g = acc;
    }
    out
}

/// One policy step on a finished episode: the per-transition terms
/// `G_k ∇ ln π(a_k|s_k)` are summed into one gradient, clipped, and applied.
/// `ρ̂` then moves toward the episode's mean centred reward.
pub fn reinforce_update(
    policy: &mut MlpParams,
    episode: &[Transition],
    rho: &mut RhoEstimator,
    cfg: &AgentConfig,
) -> Result<(), NnError> {
    if episode.is_empty() {
        return Ok(());
    }
    let returns = differential_returns(episode, rho);
    let mut grad = GradBuffer::zeros_like(policy);
    let mut cache = ForwardCache::default();
    for (tr, g) in episode.iter().zip(&returns) {
        accumulate_logprob_grad(policy, &tr.obs, tr.action_index, *g, &mut grad, &mut cache)?;
        if cfg.entropy_coef > 0.0 {
            accumulate_entropy_grad(policy, &tr.obs, cfg.entropy_coef, &mut grad, &mut cache)?;
        }
    }
    grad.clip_norm(cfg.grad_clip);
    sgd_apply(policy, &grad, cfg.actor_lr, Direction::Ascent)?;
    rho.ema_update(episode.iter().map(|t| (t.reward, t.dt)));
    Ok(())
}

/// Differential REINFORCE: one update per episode.
#[derive(Debug, Clone)]
pub struct Reinforce {
    policy: MlpParams,
    rho: RhoEstimator,
    cfg: AgentConfig,
    rng: RngStream,
    episode: Vec<Transition>,
}

impl Reinforce {
    pub fn new(policy: MlpParams, cfg: AgentConfig, rng: RngStream) -> Self {
        Self {
            policy,
            rho: RhoEstimator::new(cfg.rho_lr, cfg.centering),
            cfg,
            rng,
            episode: Vec::new(),
        }
    }
}

impl Learner for Reinforce {
    fn algo(&self) -> Algo {
        Algo::Reinforce
    }

    fn policy(&self) -> &MlpParams {
        &self.policy
    }

    fn critic(&self) -> Option<&MlpParams> {
        None
    }

    fn rho(&self) -> &RhoEstimator {
        &self.rho
    }

    fn act(&mut self, obs: &[f64]) -> Result<(usize, f64), NnError> {
        select_action(&self.policy, obs, &mut self.rng)
    }

    fn observe(&mut self, tr: Transition, episode_done: bool) -> Result<u64, NnError> {
        self.episode.push(tr);
        if !episode_done {
            return Ok(0);
        }
        let episode = std::mem::take(&mut self.episode);
        reinforce_update(&mut self.policy, &episode, &mut self.rho, &self.cfg)?;
        self.episode = episode;
        self.episode.clear();
        Ok(1)
    }
}
