use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{AgentConfig, Algo};
use crate::sim::{EnvParams, Representation};

use super::HarnessError;

/// Environment variable that replaces the default output directory.
pub const OUT_ENV: &str = "QUEUECTL_OUT";
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    /// Queue counts are divided by this before reaching the networks.
    pub scale: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self { scale: 10.0 }
    }
}

/// Per-algorithm learner settings. A partial `[agents.<algo>]` table
/// overrides only the keys it names; the rest keep that algorithm's defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentsConfig {
    pub reinforce: AgentConfig,
    pub a2c: AgentConfig,
    pub ppo: AgentConfig,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            reinforce: AgentConfig::default(),
            // Per-transition clipping truncates the heavy negative tail of
            // the TD error and biases the actor toward slow rates.
            a2c: AgentConfig {
                grad_clip: 0.0,
                ..AgentConfig::default()
            },
            ppo: AgentConfig::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgents {
    reinforce: Option<toml::Table>,
    a2c: Option<toml::Table>,
    ppo: Option<toml::Table>,
}

impl<'de> Deserialize<'de> for AgentsConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = RawAgents::deserialize(d)?;
        let mut out = Self::default();
        for (algo, table) in [
            (Algo::Reinforce, raw.reinforce),
            (Algo::A2c, raw.a2c),
            (Algo::Ppo, raw.ppo),
        ] {
            let Some(table) = table else { continue };
            let mut merged = toml::Table::try_from(out.get(algo)).map_err(D::Error::custom)?;
            merged.extend(table);
            *out.get_mut(algo) = merged
                .try_into()
                .map_err(|e| D::Error::custom(format!("[agents.{algo}] {e}")))?;
        }
        Ok(out)
    }
}

impl AgentsConfig {
    pub fn get(&self, algo: Algo) -> &AgentConfig {
        match algo {
            Algo::Reinforce => &self.reinforce,
            Algo::A2c => &self.a2c,
            Algo::Ppo => &self.ppo,
        }
    }

    pub fn get_mut(&mut self, algo: Algo) -> &mut AgentConfig {
        match algo {
            Algo::Reinforce => &mut self.reinforce,
            Algo::A2c => &mut self.a2c,
            Algo::Ppo => &mut self.ppo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub algorithms: Vec<Algo>,
    pub representations: Vec<Representation>,
    pub seeds: Vec<u64>,
    /// Decision epochs per trial.
    pub budget_epochs: u64,
    /// Evaluation episodes `K` for the final policy.
    pub eval_episodes: usize,
    /// Sample from the final policy (false) or act greedily (true).
    pub greedy_eval: bool,
    pub eta_fraction: f64,
    /// Moving-average window, in episodes.
    pub ma_window_episodes: usize,
    pub q_max: usize,
    pub dp_tol: f64,
    pub dp_max_iter: usize,
    /// Fraction of `q_max` excluded from the DP monotonicity check.
    pub dp_boundary_band: f64,
    /// End a trial this many epochs after the moving average first reaches
    /// `ρ_η` instead of running out the budget.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_after_crossing: Option<u64>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            algorithms: Algo::ALL.to_vec(),
            representations: vec![Representation::QOnly, Representation::QWithHistory],
            seeds: vec![41, 72, 99, 81, 52],
            budget_epochs: 25_000_000,
            eval_episodes: 200,
            greedy_eval: false,
            eta_fraction: 0.95,
            ma_window_episodes: 100,
            q_max: 500,
            dp_tol: 1e-9,
            dp_max_iter: 1_000_000,
            dp_boundary_band: 0.05,
            stop_after_crossing: None,
        }
    }
}

/// Everything that determines a run's outputs, plus where to put them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvParams,
    pub observation: ObservationConfig,
    pub agents: AgentsConfig,
    pub experiment: ExperimentSettings,
    /// Not part of the hash.
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvParams::default(),
            observation: ObservationConfig::default(),
            agents: AgentsConfig::default(),
            experiment: ExperimentSettings::default(),
            output_dir: default_output_dir(),
        }
    }
}

/// `$QUEUECTL_OUT` if set, else `runs`.
pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Canonical TOML of every output-determining setting.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// First 16 hex digits of the SHA-256 of [`ExperimentConfig::to_toml`].
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.env
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        for algo in Algo::ALL {
            self.agents
                .get(algo)
                .validate()
                .map_err(|e| HarnessError::Config(format!("[agents.{algo}] {e}")))?;
        }
        let x = &self.experiment;
        if !(self.observation.scale > 0.0) {
            return Err(HarnessError::Config("observation scale must be positive".into()));
        }
        if !(x.eta_fraction > 0.0 && x.eta_fraction <= 1.0) {
            return Err(HarnessError::Config("eta_fraction must lie in (0, 1]".into()));
        }
        if x.eval_episodes == 0 || x.ma_window_episodes == 0 || x.q_max == 0 {
            return Err(HarnessError::Config(
                "eval_episodes, ma_window_episodes and q_max must be positive".into(),
            ));
        }
        if !(x.dp_tol > 0.0) || !(0.0..0.5).contains(&x.dp_boundary_band) {
            return Err(HarnessError::Config("need dp_tol > 0 and dp_boundary_band in [0, 0.5)".into()));
        }
        Ok(())
    }

    /// Moving-average window in decision epochs.
    pub fn ma_window_epochs(&self) -> usize {
        self.experiment.ma_window_episodes * self.env.epochs_per_episode
    }

    pub fn boundary_band(&self) -> usize {
        (self.experiment.q_max as f64 * self.experiment.dp_boundary_band).round() as usize
    }
}
