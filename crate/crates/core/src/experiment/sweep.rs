//! One-axis hyperparameter sweeps over PLAS runs.
//!
//! Layout under `output_dir/sweep-<axis>/`:
//!
//! ```text
//! shared/seed-<s>/        dataset and CVAE, shared by every cell of seed s
//! <axis>=<v>/seed-<s>/    cell.json, plas_log.jsonl, plas.ckpt.json
//! aggregate.csv           one row per (value, seed)
//! summary.csv             one row per value, mean and std over seeds
//! ```
//!
//! The CVAE does not depend on either sweep axis, so it is trained once per
//! seed. Cells run in parallel and write only inside their own directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::{
    prepare_cvae, prepare_dataset, read_train_log, train_plas_stage, RunOptions, RunPaths,
};
use super::ExperimentConfig;
use crate::agent::TrainLogEntry;
use crate::checkpoint::write_atomic;
use crate::cvae::BehaviorCvae;
use crate::diagnostics::csv_bytes;
use crate::envs::{ReferenceScores, ToyEnv, TransitionDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    MaxLatentAction,
    Epsilon,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::MaxLatentAction => "max_latent_action",
            SweepAxis::Epsilon => "epsilon",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::MaxLatentAction => vec![0.5, 1.0, 2.0, 3.0],
            SweepAxis::Epsilon => vec![0.0, 0.01, 0.05, 0.1, 0.2, 0.5],
        }
    }

    /// `config` with the axis set to `value`, validated.
    pub fn apply(self, config: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = config.clone();
        match self {
            SweepAxis::MaxLatentAction => c.agent.max_latent_action = value,
            SweepAxis::Epsilon => c.agent.epsilon = Some(value),
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "max_latent_action" | "mla" => Ok(SweepAxis::MaxLatentAction),
            "epsilon" | "eps" => Ok(SweepAxis::Epsilon),
            _ => Err(Error::Unknown {
                what: "sweep axis",
                name: s.to_string(),
            }),
        }
    }
}

/// Dataset and CVAE shared by every cell of one seed, or why they failed.
type Prepared = std::result::Result<(TransitionDataset, Arc<BehaviorCvae>), String>;

/// Contents of `cell.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    pub env: String,
    pub config_hash: String,
    pub steps: usize,
    /// Failure message, if the cell failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub config_hash: String,
    /// `ok` or `failed`.
    pub status: String,
    pub final_return: Option<f64>,
    pub normalized_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub axis: String,
    pub value: f64,
    pub runs: usize,
    pub completed: usize,
    pub mean_normalized_score: Option<f64>,
    pub std_normalized_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummaryRow>,
    /// `(value, seed, message)` of every failed cell.
    pub failures: Vec<(f64, u64, String)>,
}

impl SweepReport {
    pub fn aggregate_csv(&self) -> PathBuf {
        self.dir.join("aggregate.csv")
    }

    pub fn summary_csv(&self) -> PathBuf {
        self.dir.join("summary.csv")
    }

    /// Mean normalized score per value, in sweep order.
    pub fn mean_scores(&self) -> Vec<(f64, Option<f64>)> {
        self.summary
            .iter()
            .map(|r| (r.value, r.mean_normalized_score))
            .collect()
    }
}

fn cell_dir(sweep_dir: &Path, axis: SweepAxis, value: f64, seed: u64) -> PathBuf {
    sweep_dir
        .join(format!("{axis}={value}"))
        .join(format!("seed-{seed}"))
}

/// The row a cell contributes, from its metadata and training log alone.
fn row_for(cell: &SweepCell, log: &[TrainLogEntry], refs: &ReferenceScores) -> Result<SweepRow> {
    let finished = log
        .last()
        .filter(|e| e.step == cell.steps)
        .and_then(|e| e.eval_return_mean);
    let normalized = finished.map(|r| refs.normalize(r)).transpose()?;
    Ok(SweepRow {
        axis: cell.axis.to_string(),
        value: cell.value,
        seed: cell.seed,
        config_hash: cell.config_hash.clone(),
        status: if finished.is_some() { "ok" } else { "failed" }.into(),
        final_return: finished,
        normalized_score: normalized,
    })
}

fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.seed.cmp(&b.seed)));
}

fn summarize(rows: &[SweepRow]) -> Vec<SweepSummaryRow> {
    let mut out: Vec<SweepSummaryRow> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let j = i + rows[i..]
            .iter()
            .take_while(|r| r.value == rows[i].value)
            .count();
        let scores: Vec<f64> = rows[i..j]
            .iter()
            .filter_map(|r| r.normalized_score)
            .collect();
        let n = scores.len() as f64;
        let mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / n);
        let std = mean.map(|m| {
            if scores.len() < 2 {
                0.0
            } else {
                (scores.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            }
        });
        out.push(SweepSummaryRow {
            axis: rows[i].axis.clone(),
            value: rows[i].value,
            runs: j - i,
            completed: scores.len(),
            mean_normalized_score: mean,
            std_normalized_score: std,
        });
        i = j;
    }
    out
}

fn write_outputs(dir: &Path, rows: &[SweepRow], summary: &[SweepSummaryRow]) -> Result<()> {
    write_atomic(&dir.join("aggregate.csv"), &csv_bytes(rows)?)?;
    write_atomic(&dir.join("summary.csv"), &csv_bytes(summary)?)
}

fn write_cell(dir: &Path, cell: &SweepCell) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(
        &dir.join("cell.json"),
        serde_json::to_string_pretty(cell)?.as_bytes(),
    )
}

/// One PLAS run per `(value, seed)`; the base config's `seeds` are the seeds.
///
/// A failing cell is recorded (status `failed`, message in its `cell.json`
/// and in [`SweepReport::failures`]) and the sweep carries on. Only invalid
/// axis values or an unwritable output directory abort the whole sweep.
pub fn run_sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepReport> {
    base.validate()?;
    if values.is_empty() {
        return Err(Error::invalid("sweep.values", "need at least one value"));
    }
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|&v| axis.apply(base, v))
        .collect::<Result<_>>()?;
    let env = base.env()?;
    let refs = ReferenceScores::for_env(&env)?;
    let dir = base.output_dir.join(format!("sweep-{axis}"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let shared: Vec<(u64, Prepared)> = base
        .seeds
        .iter()
        .map(|&seed| {
            let paths = RunPaths::for_seed(&dir.join("shared"), seed);
            let prepared = prepare_dataset(base, seed, &paths.dataset(), RunOptions::default())
                .and_then(|ds| {
                    let cvae = prepare_cvae(base, seed, &ds, &paths, RunOptions::default())?;
                    Ok((ds, cvae))
                });
            (seed, prepared.map_err(|e| e.to_string()))
        })
        .collect();

    let jobs: Vec<(&ExperimentConfig, f64, usize)> = configs
        .iter()
        .zip(values)
        .flat_map(|(c, &v)| (0..shared.len()).map(move |s| (c, v, s)))
        .collect();
    let results: Vec<Result<(SweepRow, Option<String>)>> = jobs
        .par_iter()
        .map(|&(config, value, s)| {
            let (seed, prepared) = &shared[s];
            run_cell(config, axis, value, *seed, prepared, &dir, &env, &refs)
        })
        .collect();

    let mut rows = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        let (row, err) = r?;
        if let Some(e) = err {
            failures.push((row.value, row.seed, e));
        }
        rows.push(row);
    }
    sort_rows(&mut rows);
    let summary = summarize(&rows);
    write_outputs(&dir, &rows, &summary)?;
    Ok(SweepReport {
        dir,
        rows,
        summary,
        failures,
    })
}

/// Runs one cell. The outer `Result` fails only when the cell's own
/// directory cannot be written; training failures come back as a row.
#[allow(clippy::too_many_arguments)]
fn run_cell(
    config: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
    seed: u64,
    prepared: &Prepared,
    dir: &Path,
    env: &ToyEnv,
    refs: &ReferenceScores,
) -> Result<(SweepRow, Option<String>)> {
    let paths = RunPaths::new(cell_dir(dir, axis, value, seed));
    let mut cell = SweepCell {
        axis,
        value,
        seed,
        env: env.name().to_string(),
        config_hash: config.config_hash()?,
        steps: config.agent.steps,
        error: None,
    };
    write_cell(&paths.dir, &cell)?;
    let outcome = match prepared {
        Ok((dataset, cvae)) => train_plas_stage(
            config,
            seed,
            dataset,
            cvae.clone(),
            &paths,
            RunOptions::default(),
        )
        .map(|agent| agent.log().to_vec())
        .map_err(|e| e.to_string()),
        Err(e) => Err(format!("shared stage failed: {e}")),
    };
    match outcome {
        Ok(log) => Ok((row_for(&cell, &log, refs)?, None)),
        Err(e) => {
            cell.error = Some(e.clone());
            write_cell(&paths.dir, &cell)?;
            Ok((row_for(&cell, &[], refs)?, Some(e)))
        }
    }
}

/// Rebuilds the aggregate rows of a sweep directory from each cell's
/// `cell.json` and training log, and rewrites `aggregate.csv` and `summary.csv`.
pub fn aggregate_from_logs(sweep_dir: &Path) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    let entries = fs::read_dir(sweep_dir).map_err(|e| Error::io(sweep_dir, e))?;
    for value_dir in entries {
        let value_dir = value_dir.map_err(|e| Error::io(sweep_dir, e))?.path();
        if !value_dir.is_dir() {
            continue;
        }
        for seed_dir in fs::read_dir(&value_dir).map_err(|e| Error::io(&value_dir, e))? {
            let seed_dir = seed_dir.map_err(|e| Error::io(&value_dir, e))?.path();
            let cell_path = seed_dir.join("cell.json");
            if !cell_path.is_file() {
                continue;
            }
            let text = fs::read_to_string(&cell_path).map_err(|e| Error::io(&cell_path, e))?;
            let cell: SweepCell = serde_json::from_str(&text)?;
            let refs = ReferenceScores::for_env(&ToyEnv::by_name(&cell.env)?)?;
            let log_path = RunPaths::new(&seed_dir).train_log("plas");
            let log = if cell.error.is_none() && log_path.is_file() {
                read_train_log(&log_path)?
            } else {
                Vec::new()
            };
            rows.push(row_for(&cell, &log, &refs)?);
        }
    }
    sort_rows(&mut rows);
    write_outputs(sweep_dir, &rows, &summarize(&rows))?;
    Ok(rows)
}
