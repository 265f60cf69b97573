//! Command-line front end. Exit codes: 0 success, 1 invalid input, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use plas::agent::{DirectAgent, PlasAgent};
use plas::checkpoint::write_atomic;
use plas::cvae::BehaviorCvae;
use plas::envs::TransitionDataset;
use plas::experiment::{
    aggregate_from_logs, diagnose_learner, prepare_cvae, prepare_dataset, run_experiment,
    run_sweep, train_bc_stage, train_plas_stage, train_unconstrained_stage, ExperimentConfig,
    RunOptions, RunPaths, SweepAxis,
};
use plas::mmd::{self, Estimator, KernelFamily, KernelSpec, MmdScenario};
use plas::{Error, Result};

#[derive(Parser)]
#[command(
    name = "plas",
    version,
    about = "Offline RL in the latent action space of a CVAE"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set agent.epsilon=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, extra: Vec<String>) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        let mut all = extra;
        all.extend(self.overrides.iter().cloned());
        base.with_overrides(&all)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline dataset (JSONL plus a `.meta.json` sidecar).
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        env: Option<String>,
        /// random, medium, medium_replay, medium_expert, expert or custom.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the behavior CVAE on a dataset.
    TrainCvae {
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Train the latent policy on a frozen CVAE.
    TrainPlas {
        #[command(flatten)]
        stage: StageArgs,
        /// CVAE checkpoint; defaults to `<out-dir>/cvae.ckpt.json`.
        #[arg(long)]
        cvae: Option<PathBuf>,
    },
    /// Train the behavior-cloning baseline.
    TrainBc {
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Train the unconstrained off-policy baseline.
    TrainUnconstrained {
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Q-error and support diagnostics of a trained agent.
    Diagnose {
        #[command(flatten)]
        stage: StageArgs,
        /// Agent checkpoint (`plas.ckpt.json` or `unconstrained.ckpt.json`).
        #[arg(long)]
        agent: PathBuf,
        /// CVAE checkpoint, required for latent-policy agents.
        #[arg(long)]
        cvae: Option<PathBuf>,
        /// Report path; defaults to printing JSON on stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline for every seed in the config.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from the artifacts already in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// One-axis sweep over max_latent_action or epsilon.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// `max_latent_action` or `epsilon`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; the axis defaults when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Only rebuild the aggregate CSVs from the per-cell logs.
        #[arg(long)]
        from_logs: bool,
    },
    /// Sampled-MMD simulations.
    MmdLab {
        /// `matched-normal` (1), `bimodal-hole` (2) or `all`.
        #[arg(long, default_value = "all")]
        scenario: String,
        /// Kernels as `family:sigma`, comma-separated; the default set when omitted.
        #[arg(long, value_delimiter = ',')]
        kernels: Vec<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Use the unbiased U-statistic instead of the V-statistic.
        #[arg(long)]
        unbiased: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args, Clone)]
struct StageArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset file; defaults to `<out-dir>/dataset.jsonl`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

impl StageArgs {
    fn setup(&self) -> Result<(ExperimentConfig, RunPaths, TransitionDataset)> {
        let paths = RunPaths::new(&self.out_dir);
        let dataset_path = self.dataset.clone().unwrap_or_else(|| paths.dataset());
        let mut config = self.config.load(Vec::new())?;
        config.dataset.path = Some(dataset_path.clone());
        let dataset = prepare_dataset(&config, self.seed, &dataset_path, RunOptions::default())?;
        Ok((config, paths, dataset))
    }
}

fn load_cvae(path: &Path) -> Result<Arc<BehaviorCvae>> {
    Ok(Arc::new(BehaviorCvae::load(path)?.0))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_kernel(text: &str) -> Result<KernelSpec> {
    let bad = || Error::Format {
        what: "kernel",
        reason: format!("`{text}` is not family:sigma"),
    };
    let (family, sigma) = text.split_once(':').ok_or_else(bad)?;
    let sigma: f64 = sigma.trim().parse().map_err(|_| bad())?;
    let family = match family.trim() {
        "gaussian" => KernelFamily::Gaussian,
        "laplacian" => KernelFamily::Laplacian,
        other => {
            return Err(Error::Unknown {
                what: "kernel family",
                name: other.to_string(),
            })
        }
    };
    KernelSpec::new(family, sigma)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            config,
            env,
            kind,
            size,
            seed,
            out,
        } => {
            let mut extra = Vec::new();
            if let Some(e) = env {
                extra.push(format!("env=\"{e}\""));
            }
            if let Some(k) = kind {
                extra.push(format!("dataset.kind=\"{}\"", k.replace('-', "_")));
            }
            if let Some(n) = size {
                extra.push(format!("dataset.size={n}"));
            }
            let config = config.load(extra)?;
            let ds = prepare_dataset(&config, seed, &out, RunOptions::default())?;
            eprintln!("wrote {} transitions to {}", ds.len(), out.display());
        }
        Command::TrainCvae { stage } => {
            let (config, paths, dataset) = stage.setup()?;
            prepare_cvae(&config, stage.seed, &dataset, &paths, RunOptions::default())?;
            eprintln!("wrote {}", paths.cvae().display());
        }
        Command::TrainPlas { stage, cvae } => {
            let (config, paths, dataset) = stage.setup()?;
            let cvae = load_cvae(&cvae.unwrap_or_else(|| paths.cvae()))?;
            let agent = train_plas_stage(
                &config,
                stage.seed,
                &dataset,
                cvae,
                &paths,
                RunOptions::default(),
            )?;
            print_json(&agent.log().last())?;
        }
        Command::TrainBc { stage } => {
            let (config, paths, dataset) = stage.setup()?;
            train_bc_stage(&config, stage.seed, &dataset, &paths)?;
            eprintln!("wrote {}", paths.checkpoint("bc").display());
        }
        Command::TrainUnconstrained { stage } => {
            let (config, paths, dataset) = stage.setup()?;
            let agent = train_unconstrained_stage(
                &config,
                stage.seed,
                &dataset,
                &paths,
                RunOptions::default(),
            )?;
            print_json(&agent.log().last())?;
        }
        Command::Diagnose {
            stage,
            agent,
            cvae,
            out,
        } => {
            let (config, _, dataset) = stage.setup()?;
            let env = config.env()?;
            let report = match cvae {
                Some(c) => {
                    let (a, _) = PlasAgent::load(&agent, load_cvae(&c)?)?;
                    diagnose_learner(&a, &dataset, &env, &config.diagnostics, stage.seed)?
                }
                None => {
                    let (a, _) = DirectAgent::load(&agent)?;
                    diagnose_learner(&a, &dataset, &env, &config.diagnostics, stage.seed)?
                }
            };
            match out {
                Some(p) => write_atomic(&p, serde_json::to_string_pretty(&report)?.as_bytes())?,
                None => print_json(&report)?,
            }
        }
        Command::Run { config, resume } => {
            let config = config.load(Vec::new())?;
            let summaries = run_experiment(&config, RunOptions { resume })?;
            print_json(&summaries)?;
        }
        Command::Sweep {
            config,
            axis,
            values,
            from_logs,
        } => {
            let axis: SweepAxis = axis.parse()?;
            let config = config.load(Vec::new())?;
            if from_logs {
                let rows = aggregate_from_logs(&config.output_dir.join(format!("sweep-{axis}")))?;
                eprintln!("re-aggregated {} rows", rows.len());
                return Ok(());
            }
            let values = if values.is_empty() {
                axis.default_values()
            } else {
                values
            };
            let report = run_sweep(&config, axis, &values)?;
            for (value, seed, msg) in &report.failures {
                eprintln!("cell {axis}={value} seed {seed} failed: {msg}");
            }
            print!(
                "{}",
                fs::read_to_string(report.summary_csv()).map_err(|e| Error::Io {
                    path: report.summary_csv(),
                    source: e,
                })?
            );
        }
        Command::MmdLab {
            scenario,
            kernels,
            samples,
            repeats,
            unbiased,
            seed,
            out_dir,
        } => {
            let kernels = if kernels.is_empty() {
                mmd::default_kernels()
            } else {
                kernels
                    .iter()
                    .map(|k| parse_kernel(k))
                    .collect::<Result<_>>()?
            };
            let scenarios = match scenario.as_str() {
                "all" => vec![MmdScenario::matched_normal(), MmdScenario::bimodal_hole()],
                name => vec![MmdScenario::by_name(name)?],
            };
            fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            for mut sc in scenarios {
                sc.n_samples = samples.unwrap_or(sc.n_samples);
                sc.n_repeats = repeats.unwrap_or(sc.n_repeats);
                if unbiased {
                    sc.estimator = Estimator::UStatistic;
                }
                let points = mmd::run_scenario(&sc, &kernels, seed)?;
                write_atomic(
                    &out_dir.join(format!("{}.csv", sc.name)),
                    mmd::curves_csv(&points).as_bytes(),
                )?;
                write_atomic(
                    &out_dir.join(format!("{}.dat", sc.name)),
                    mmd::gnuplot_long(&points).as_bytes(),
                )?;
                for k in &kernels {
                    let c = mmd::curve(&points, k);
                    println!("{}: {k} argmin x = {:?}", sc.name, mmd::argmin(&c));
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
