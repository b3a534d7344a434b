use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use queuectl_core::agents::Algo;
use queuectl_core::harness::{
    self, run_grid, run_trial, trial_dir_name, Baseline, Checkpoint, ExperimentConfig, TrialSpec,
    OUT_ENV,
};
use queuectl_core::metrics::{policy_quality, NetworkController};
use queuectl_core::rng::{RngStream, EVAL_STREAM};
use queuectl_core::sim::{Observer, Representation, WarmStartBuffer};

#[derive(Parser)]
#[command(name = "queuectl", version, about = "Average-reward policy-gradient control of an M/M/1 queue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write its artifacts.
    Train {
        #[arg(long, value_parser = parse_algo)]
        algo: Algo,
        #[arg(long, value_parser = parse_state)]
        state: Representation,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Run every algorithm × representation × seed cell and aggregate.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Worker threads; 0 uses one per logical core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Solve the truncated DP and print the optimal threshold policy.
    DpBaseline {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a saved policy.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        /// Environment settings; defaults if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Evaluation seed; the checkpoint's training seed if omitted.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        greedy: bool,
    },
    /// Build the table and figure inputs from a grid directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = OUT_ENV, default_value = harness::DEFAULT_OUT)]
    out: PathBuf,
    /// Decision epochs per trial.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Stop this many epochs after first reaching the reward floor.
    #[arg(long)]
    stop_after_crossing: Option<u64>,
}

fn parse_algo(s: &str) -> Result<Algo, String> {
    Algo::from_tag(s).ok_or_else(|| format!("expected one of reinforce, a2c, ppo; got `{s}`"))
}

fn parse_state(s: &str) -> Result<Representation, String> {
    Representation::from_tag(s).ok_or_else(|| format!("expected q or qq; got `{s}`"))
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = load_config(self.config.as_ref())?;
        if let Some(b) = self.budget {
            cfg.experiment.budget_epochs = b;
        }
        if let Some(k) = self.eval_episodes {
            cfg.experiment.eval_episodes = k;
        }
        if self.stop_after_crossing.is_some() {
            cfg.experiment.stop_after_crossing = self.stop_after_crossing;
        }
        cfg.output_dir = self.out.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "not reached".into(), |x| x.to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            algo,
            state,
            seed,
            common,
        } => {
            let cfg = common.resolve()?;
            let baseline = Baseline::solve(&cfg)?;
            let spec = TrialSpec::new(algo, state, seed);
            let dir = cfg.output_dir.join(trial_dir_name(&spec, 0));
            let outcome = run_trial(&cfg, spec, &baseline, &dir)?;
            println!("config_hash {}", outcome.config_hash);
            println!("artifacts   {}", dir.display());
            println!("samples     {}", outcome.samples);
            println!("updates     {}", outcome.updates);
            println!("rho*        {:.4} (floor {:.4})", baseline.rho_star_per_epoch, outcome.rho_eta);
            println!("U_eta       {}", fmt_opt(outcome.u_eta()));
            println!("N_eta       {}", fmt_opt(outcome.n_eta()));
            println!("R_Q(N_eta)  {}", fmt_opt(outcome.regret_at_n_eta().map(|r| format!("{r:.1}"))));
            match (&outcome.evaluation, &outcome.failure) {
                (_, Some(f)) => println!("diverged at update {}: {}", f.update, f.message),
                (Some(e), None) => println!(
                    "Q_pi        {:.4} ± {:.4} per epoch over {} episodes",
                    e.per_epoch, e.per_epoch_std, e.episodes
                ),
                (None, None) => {}
            }
        }
        Command::Grid { common, workers } => {
            let cfg = common.resolve()?;
            let result = run_grid(&cfg, workers)?;
            let report = harness::report(&result.out_dir)?;
            print!("{}", report.table);
            println!("wrote {}", result.out_dir.display());
        }
        Command::DpBaseline { config } => {
            let cfg = load_config(config.as_ref())?;
            let b = Baseline::solve(&cfg)?;
            let thresholds: Vec<String> = b.policy.thresholds.iter().map(usize::to_string).collect();
            println!("optimal cost per unit time   {:.10}", b.gain_per_time);
            println!("optimal reward per epoch     {:.10}", b.rho_star_per_epoch);
            println!("stationary E[Q]              {:.10}", b.expected_q);
            println!("thresholds                   {}", thresholds.join(" "));
            println!("Q_max {}  tol {:e}  iterations {}  span {:e}", b.q_max, b.tol, b.iterations, b.final_span);
            println!();
            println!("gain_per_time,gain_per_epoch,thresholds,q_max,tol,iterations");
            println!(
                "{},{},{},{},{},{}",
                b.gain_per_time,
                -b.rho_star_per_epoch,
                thresholds.join(";"),
                b.q_max,
                b.tol,
                b.iterations
            );
        }
        Command::Evaluate {
            checkpoint,
            episodes,
            config,
            seed,
            greedy,
        } => {
            let cfg = load_config(config.as_ref())?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let mut controller = NetworkController {
                policy: &ckpt.policy,
                observer: Observer::with_scale(ckpt.representation, ckpt.obs_scale),
                greedy,
            };
            let mut rng = RngStream::new(seed.unwrap_or(ckpt.seed), EVAL_STREAM);
            let e = policy_quality(
                &mut controller,
                &cfg.env,
                episodes,
                WarmStartBuffer::new(cfg.env.warm_start_n),
                &mut rng,
            );
            println!("algo,state,seed,episodes,q_pi_per_epoch,q_pi_per_time,std,mean_q");
            println!(
                "{},{},{},{},{},{},{},{}",
                ckpt.algo,
                ckpt.representation.tag(),
                ckpt.seed,
                e.episodes,
                e.per_epoch,
                e.per_time,
                e.per_epoch_std,
                e.mean_q
            );
        }
        Command::Report { input } => {
            let report = harness::report(&input)?;
            print!("{}", report.table);
            println!(
                "fig1_input.csv: {} rows, fig2_input.csv: {} rows",
                report.fig1.len(),
                report.fig2.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
