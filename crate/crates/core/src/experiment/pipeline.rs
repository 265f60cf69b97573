//! Dataset → CVAE → agent → diagnostics, with checkpoints and resume.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DiagnosticsConfig, ExperimentConfig};
use crate::agent::{
    train_loop_with, DirectAgent, OffPolicyLearner, PlasAgent, PolicyHead, TrainLogEntry,
    TrainOptions,
};
use crate::baselines::{train_bc, BcPolicy};
use crate::checkpoint::write_atomic;
use crate::cvae::{train_cvae, BehaviorCvae};
use crate::diagnostics::{
    learner_q_error_report, write_csv, NeighborIndex, QErrorReport, QErrorRow, SupportSummary,
    THRESHOLD_PERCENTILE,
};
use crate::envs::generate::generate_with;
use crate::envs::{evaluate, Policy, ReferenceScores, ToyEnv, TransitionDataset};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Learners that can be trained next to PLAS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Bc,
    Unconstrained,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Reuse artifacts already in the run directory, continuing training
    /// from the last agent checkpoint. Artifacts written under a different
    /// config hash abort the run.
    pub resume: bool,
}

/// File layout of one `(config, seed)` run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunPaths { dir: dir.into() }
    }

    pub fn for_seed(output_dir: &Path, seed: u64) -> Self {
        Self::new(output_dir.join(format!("seed-{seed}")))
    }

    pub fn dataset(&self) -> PathBuf {
        self.dir.join("dataset.jsonl")
    }

    pub fn cvae(&self) -> PathBuf {
        self.dir.join("cvae.ckpt.json")
    }

    pub fn cvae_log(&self) -> PathBuf {
        self.dir.join("cvae_log.jsonl")
    }

    /// Checkpoint of a learner named `plas`, `unconstrained` or `bc`.
    pub fn checkpoint(&self, learner: &str) -> PathBuf {
        self.dir.join(format!("{learner}.ckpt.json"))
    }

    pub fn train_log(&self, learner: &str) -> PathBuf {
        self.dir.join(format!("{learner}_log.jsonl"))
    }

    pub fn diagnostics(&self, learner: &str) -> PathBuf {
        self.dir.join(format!("{learner}_diagnostics.json"))
    }

    pub fn q_error_csv(&self) -> PathBuf {
        self.dir.join("q_error.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.json")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// JSON object of `value` with `config_hash` and `seed` added.
fn stamped<T: Serialize>(value: &T, hash: &str, seed: u64) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(value)?;
    if let serde_json::Value::Object(m) = &mut v {
        m.insert("config_hash".into(), hash.into());
        m.insert("seed".into(), seed.into());
    }
    Ok(v)
}

fn jsonl<T: Serialize>(entries: &[T], hash: &str, seed: u64) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(&stamped(e, hash, seed)?)?);
        out.push('\n');
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T, hash: &str, seed: u64) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&stamped(value, hash, seed)?)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn check_hash(path: &Path, expected: &str, found: Option<&str>) -> Result<()> {
    if found == Some(expected) {
        Ok(())
    } else {
        Err(Error::HashMismatch {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            found: found.unwrap_or("none").to_string(),
        })
    }
}

/// Reads a training log written by the pipeline (extra stamp fields are ignored).
pub fn read_train_log(path: &Path) -> Result<Vec<TrainLogEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Loads `config.dataset.path`, reuses a stamped dataset at `path` when
/// resuming, or generates and writes a fresh one.
pub fn prepare_dataset(
    config: &ExperimentConfig,
    seed: u64,
    path: &Path,
    options: RunOptions,
) -> Result<TransitionDataset> {
    let hash = config.config_hash()?;
    let env = config.env()?;
    let dataset = if let Some(src) = &config.dataset.path {
        TransitionDataset::read(src)?
    } else if options.resume && path.exists() {
        let ds = TransitionDataset::read(path)?;
        check_hash(path, &hash, ds.metadata().config_hash.as_deref())?;
        ds
    } else {
        let d = &config.dataset;
        let mut ds = generate_with(
            &env,
            d.kind,
            d.size,
            config.dataset_seed(seed),
            &d.generator,
        )?;
        ds.stamp(&hash);
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        ds.write(path)?;
        ds
    };
    if dataset.metadata().env_name != env.name() {
        return Err(Error::invalid(
            "dataset.path",
            format!("dataset was collected on `{}`", dataset.metadata().env_name),
        ));
    }
    Ok(dataset)
}

/// Trains the CVAE (or reloads it when resuming) and writes its checkpoint and log.
pub fn prepare_cvae(
    config: &ExperimentConfig,
    seed: u64,
    dataset: &TransitionDataset,
    paths: &RunPaths,
    options: RunOptions,
) -> Result<Arc<BehaviorCvae>> {
    let hash = config.config_hash()?;
    let ckpt = paths.cvae();
    if options.resume && ckpt.exists() {
        let (cvae, found) = BehaviorCvae::load(&ckpt)?;
        check_hash(&ckpt, &hash, found.as_deref())?;
        if cvae.state_dim() != dataset.state_dim() || cvae.action_dim() != dataset.action_dim() {
            return Err(Error::invalid(
                "cvae",
                "checkpoint dimensions differ from the dataset",
            ));
        }
        return Ok(Arc::new(cvae));
    }
    create_dir(&paths.dir)?;
    let (cvae, log) = train_cvae(dataset, &config.cvae, seed)?;
    write_atomic(&paths.cvae_log(), jsonl(&log, &hash, seed)?.as_bytes())?;
    cvae.save(&ckpt, Some(&hash))?;
    Ok(Arc::new(cvae))
}

/// Runs `agent` to `config.agent.steps`, streaming its log to `log_path` and
/// calling `save` every `checkpoint_interval` steps and at the end.
///
/// The log file is first rewritten from the learner's in-memory log, so a
/// resumed run produces the same file as an uninterrupted one.
#[allow(clippy::too_many_arguments)]
fn run_learner<P, S>(
    agent: &mut OffPolicyLearner<P>,
    dataset: &TransitionDataset,
    env: &ToyEnv,
    seed: u64,
    hash: &str,
    log_path: &Path,
    checkpoint_interval: usize,
    save: S,
) -> Result<()>
where
    P: PolicyHead + Policy,
    S: Fn(&OffPolicyLearner<P>) -> Result<()>,
{
    write_atomic(log_path, jsonl(agent.log(), hash, seed)?.as_bytes())?;
    let mut file = OpenOptions::new()
        .append(true)
        .open(log_path)
        .map_err(|e| Error::io(log_path, e))?;
    let steps = agent.config().steps;
    train_loop_with(agent, dataset, env, &TrainOptions::new(seed), |a, entry| {
        let line = serde_json::to_string(&stamped(entry, hash, seed)?)?;
        writeln!(file, "{line}").map_err(|e| Error::io(log_path, e))?;
        if entry.step % checkpoint_interval == 0 || entry.step == steps {
            file.flush().map_err(|e| Error::io(log_path, e))?;
            save(a)?;
        }
        Ok(())
    })?;
    save(agent)
}

pub fn train_plas_stage(
    config: &ExperimentConfig,
    seed: u64,
    dataset: &TransitionDataset,
    cvae: Arc<BehaviorCvae>,
    paths: &RunPaths,
    options: RunOptions,
) -> Result<PlasAgent> {
    let hash = config.config_hash()?;
    let env = config.env()?;
    let ckpt = paths.checkpoint("plas");
    create_dir(&paths.dir)?;
    let mut agent = if options.resume && ckpt.exists() {
        let (agent, found) = PlasAgent::load(&ckpt, cvae)?;
        check_hash(&ckpt, &hash, found.as_deref())?;
        agent
    } else {
        PlasAgent::build(cvae, config.agent.clone(), seed)?
    };
    run_learner(
        &mut agent,
        dataset,
        &env,
        seed,
        &hash,
        &paths.train_log("plas"),
        config.checkpoint_interval,
        |a| a.save(&ckpt, seed, Some(&hash)),
    )?;
    Ok(agent)
}

/// The unconstrained learner always skips non-finite updates.
pub fn train_unconstrained_stage(
    config: &ExperimentConfig,
    seed: u64,
    dataset: &TransitionDataset,
    paths: &RunPaths,
    options: RunOptions,
) -> Result<DirectAgent> {
    let hash = config.config_hash()?;
    let env = config.env()?;
    let ckpt = paths.checkpoint("unconstrained");
    create_dir(&paths.dir)?;
    let mut agent = if options.resume && ckpt.exists() {
        let (agent, found) = DirectAgent::load(&ckpt)?;
        check_hash(&ckpt, &hash, found.as_deref())?;
        agent
    } else {
        let cfg = crate::agent::AgentConfig {
            skip_non_finite: true,
            ..config.agent.clone()
        };
        DirectAgent::build(dataset.state_dim(), dataset.action_dim(), cfg, seed)?
    };
    run_learner(
        &mut agent,
        dataset,
        &env,
        seed,
        &hash,
        &paths.train_log("unconstrained"),
        config.checkpoint_interval,
        |a| a.save(&ckpt, seed, Some(&hash)),
    )?;
    Ok(agent)
}

pub fn train_bc_stage(
    config: &ExperimentConfig,
    seed: u64,
    dataset: &TransitionDataset,
    paths: &RunPaths,
) -> Result<BcPolicy> {
    let hash = config.config_hash()?;
    create_dir(&paths.dir)?;
    let (policy, log) = train_bc(dataset, &config.bc, seed)?;
    write_atomic(&paths.train_log("bc"), jsonl(&log, &hash, seed)?.as_bytes())?;
    policy.save(&paths.checkpoint("bc"), Some(&hash))?;
    Ok(policy)
}

/// Support-distance statistics of a policy's actions at dataset states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    /// 99th percentile of the dataset's own leave-one-out distances.
    pub threshold: f64,
    pub violation_rate: f64,
    pub mean_distance: f64,
    pub median_distance: f64,
    pub p95_distance: f64,
    pub max_distance: f64,
    pub probes: usize,
}

impl SupportReport {
    fn new(summary: &SupportSummary, threshold: f64) -> Self {
        SupportReport {
            threshold,
            violation_rate: summary.violation_rate(threshold),
            mean_distance: summary.mean,
            median_distance: summary.median,
            p95_distance: summary.p95,
            max_distance: summary.max,
            probes: summary.distances.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub step: usize,
    pub q_error: QErrorReport,
    pub support: SupportReport,
}

/// Q-error against Monte-Carlo returns plus support distances at probe states.
pub fn diagnose_learner<P: PolicyHead + Policy>(
    agent: &OffPolicyLearner<P>,
    dataset: &TransitionDataset,
    env: &ToyEnv,
    config: &DiagnosticsConfig,
    seed: u64,
) -> Result<DiagnosticsReport> {
    let q_error = learner_q_error_report(agent, env, config.q_error_episodes, seed)?;
    let index = NeighborIndex::new(dataset);
    let threshold = index.calibrate_threshold(config.neighbors, THRESHOLD_PERCENTILE)?;
    let k = config.support_probes.min(dataset.len());
    let idx = dataset.sample_indices(k, &mut rng::stream(seed, streams::PROBE))?;
    let states = dataset.batch(&idx).states;
    let actions = agent.policy().act_batch(states.view())?;
    let summary = crate::diagnostics::support_distance_with(
        &index,
        states.view(),
        actions.view(),
        config.neighbors,
    )?;
    Ok(DiagnosticsReport {
        step: agent.iteration(),
        q_error,
        support: SupportReport::new(&summary, threshold),
    })
}

/// Final numbers of one learner in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSummary {
    pub learner: String,
    pub return_mean: f64,
    pub return_std: f64,
    pub normalized_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub learners: Vec<LearnerSummary>,
    pub plas_diagnostics: DiagnosticsReport,
}

impl RunSummary {
    pub fn learner(&self, name: &str) -> Option<&LearnerSummary> {
        self.learners.iter().find(|l| l.learner == name)
    }
}

fn final_eval(log: &[TrainLogEntry]) -> Option<(f64, f64)> {
    let last = log.last()?;
    Some((last.eval_return_mean?, last.eval_return_std.unwrap_or(0.0)))
}

fn learner_summary(
    name: &str,
    mean: f64,
    std: f64,
    refs: &ReferenceScores,
) -> Result<LearnerSummary> {
    Ok(LearnerSummary {
        learner: name.to_string(),
        return_mean: mean,
        return_std: std,
        normalized_score: refs.normalize(mean)?,
    })
}

/// Runs the whole pipeline once per seed under `config.output_dir/seed-<s>/`.
///
/// The config is validated before anything is computed. Every file written
/// carries the config hash and the seed.
pub fn run_experiment(config: &ExperimentConfig, options: RunOptions) -> Result<Vec<RunSummary>> {
    config.validate()?;
    let hash = config.config_hash()?;
    let env = config.env()?;
    let refs = ReferenceScores::for_env(&env)?;
    create_dir(&config.output_dir)?;
    let resolved = format!("# config_hash = \"{hash}\"\n{}", config.to_toml_string()?);
    let config_path = config.output_dir.join("config.toml");
    if options.resume && config_path.exists() {
        let old = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
        let old_hash = ExperimentConfig::from_toml_str(&old)?.config_hash()?;
        check_hash(&config_path, &hash, Some(&old_hash))?;
    }
    write_atomic(&config_path, resolved.as_bytes())?;

    let mut summaries = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let paths = RunPaths::for_seed(&config.output_dir, seed);
        create_dir(&paths.dir)?;
        let dataset = prepare_dataset(config, seed, &paths.dataset(), options)?;
        let cvae = prepare_cvae(config, seed, &dataset, &paths, options)?;
        let plas = train_plas_stage(config, seed, &dataset, cvae, &paths, options)?;
        let diag = diagnose_learner(&plas, &dataset, &env, &config.diagnostics, seed)?;
        write_json(&paths.diagnostics("plas"), &diag, &hash, seed)?;

        let ds_name = format!("{}-{}", env.name(), config.dataset.kind);
        let mut q_rows = vec![QErrorRow::new(
            &hash,
            "plas",
            &ds_name,
            seed,
            diag.step,
            &diag.q_error,
        )];
        let (m, s) = final_eval(plas.log())
            .ok_or_else(|| Error::invalid("agent.eval_episodes", "no final evaluation"))?;
        let mut learners = vec![learner_summary("plas", m, s, &refs)?];

        for cmp in &config.compare {
            match cmp {
                Comparison::Unconstrained => {
                    let agent = train_unconstrained_stage(config, seed, &dataset, &paths, options)?;
                    let d = diagnose_learner(&agent, &dataset, &env, &config.diagnostics, seed)?;
                    write_json(&paths.diagnostics("unconstrained"), &d, &hash, seed)?;
                    q_rows.push(QErrorRow::new(
                        &hash,
                        "unconstrained",
                        &ds_name,
                        seed,
                        d.step,
                        &d.q_error,
                    ));
                    if let Some((m, s)) = final_eval(agent.log()) {
                        learners.push(learner_summary("unconstrained", m, s, &refs)?);
                    }
                }
                Comparison::Bc => {
                    let policy = train_bc_stage(config, seed, &dataset, &paths)?;
                    let eval = evaluate(&env, &policy, config.agent.eval_episodes.max(1), seed)?;
                    learners.push(learner_summary("bc", eval.mean, eval.std, &refs)?);
                }
            }
        }
        write_csv(&paths.q_error_csv(), &q_rows)?;

        let summary = RunSummary {
            config_hash: hash.clone(),
            seed,
            run_dir: paths.dir.clone(),
            learners,
            plas_diagnostics: diag,
        };
        write_json(&paths.summary(), &summary, &hash, seed)?;
        summaries.push(summary);
    }
    Ok(summaries)
}
