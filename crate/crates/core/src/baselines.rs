//! Comparison learners: behavior cloning and the unconstrained off-policy agent.
//!
//! The unconstrained agent is [`crate::agent::OffPolicyLearner`] with a plain
//! tanh actor in place of the latent policy: same critics, same targets, same
//! optimizers, no support constraint and no target-policy smoothing noise.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::agent::{train_loop, AgentConfig, DirectAgent, TrainOptions};
use crate::checkpoint;
use crate::diagnostics::{NeighborIndex, DEFAULT_NEIGHBORS};
use crate::diffnet::{Activation, AdamState, Mlp};
use crate::envs::{Policy, ToyEnv, TransitionDataset};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

pub const BC_CHECKPOINT_FORMAT: &str = "plas.bc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub log_interval: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            batch_size: 100,
            steps: 50_000,
            log_interval: 500,
        }
    }
}

impl BcConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let field = |name: &str| format!("{prefix}{name}");
        if self.hidden.contains(&0) {
            return Err(Error::invalid(
                field("hidden"),
                "hidden widths must be positive",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(field("learning_rate"), "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid(field("batch_size"), "must be positive"));
        }
        if self.log_interval == 0 {
            return Err(Error::invalid(field("log_interval"), "must be positive"));
        }
        Ok(())
    }
}

/// Tanh-output regression of dataset actions on states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcPolicy {
    pub net: Mlp,
}

impl BcPolicy {
    pub fn act_batch(&self, states: ndarray::ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.forward_batch(states)
    }

    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        checkpoint::save(path, BC_CHECKPOINT_FORMAT, config_hash, self)
    }

    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let c = checkpoint::load::<BcPolicy>(path, BC_CHECKPOINT_FORMAT)?;
        Ok((c.payload, c.config_hash))
    }
}

impl Policy for BcPolicy {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcLogEntry {
    pub step: usize,
    /// Mean squared error over the interval.
    pub loss: f64,
}

/// Minimizes `mean |net(s) - a|^2` over minibatches.
pub fn train_bc(
    dataset: &TransitionDataset,
    config: &BcConfig,
    seed: u64,
) -> Result<(BcPolicy, Vec<BcLogEntry>)> {
    config.validate("bc.")?;
    let mut sizes = vec![dataset.state_dim()];
    sizes.extend_from_slice(&config.hidden);
    sizes.push(dataset.action_dim());
    let mut net = Mlp::new(
        &sizes,
        Activation::Relu,
        Activation::Tanh,
        &mut rng::stream(seed, streams::ACTOR_INIT),
    )?;
    let mut opt = AdamState::new(&net, config.learning_rate);
    let mut batch_rng = rng::stream(seed, streams::MINIBATCH);
    let k = config.batch_size.min(dataset.len());
    let count = (k * dataset.action_dim()) as f64;
    let mut log = Vec::new();
    let (mut acc, mut acc_n) = (0.0, 0usize);
    for step in 1..=config.steps {
        let batch = dataset.sample_batch(k, &mut batch_rng)?;
        let trace = net.forward_trace(batch.states.view())?;
        let diff = trace.output() - &batch.actions;
        let loss = diff.mapv(|d| d * d).sum() / count;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: step,
                context: "behavior cloning loss".into(),
            });
        }
        let grad = diff.mapv(|d| 2.0 * d / count);
        let (grads, _) = net.backward(&trace, grad.view())?;
        opt.step(&mut net, &grads)?;
        acc += loss;
        acc_n += 1;
        if step % config.log_interval == 0 || step == config.steps {
            log.push(BcLogEntry {
                step,
                loss: acc / acc_n as f64,
            });
            acc = 0.0;
            acc_n = 0;
        }
    }
    Ok((BcPolicy { net }, log))
}

/// Mean squared error of `policy` over the whole dataset.
pub fn bc_dataset_mse(policy: &BcPolicy, dataset: &TransitionDataset) -> Result<f64> {
    let pred = policy.act_batch(dataset.states().view())?;
    let diff = pred - dataset.actions();
    Ok(diff.mapv(|d| d * d).mean().unwrap_or(0.0))
}

/// Twin-critic deterministic actor-critic on the fixed dataset with no
/// action constraint.
///
/// Non-finite losses skip the offending update and are counted in the log
/// instead of aborting the run.
pub fn train_unconstrained(
    dataset: &TransitionDataset,
    env: &ToyEnv,
    config: &AgentConfig,
    seed: u64,
) -> Result<DirectAgent> {
    let mut agent = build_unconstrained(dataset, config, seed)?;
    train_loop(&mut agent, dataset, env, &TrainOptions::new(seed))?;
    Ok(agent)
}

/// Diagnostic variant of [`train_unconstrained`]: Bellman targets bootstrap
/// on the dataset action nearest to the policy's choice (among the
/// actions at the nearest dataset states) instead of the policy's action.
pub fn train_unconstrained_projected(
    dataset: &TransitionDataset,
    env: &ToyEnv,
    config: &AgentConfig,
    seed: u64,
) -> Result<DirectAgent> {
    let mut agent = build_unconstrained(dataset, config, seed)?;
    agent.project_next_actions(Arc::new(NeighborIndex::new(dataset)), DEFAULT_NEIGHBORS);
    train_loop(&mut agent, dataset, env, &TrainOptions::new(seed))?;
    Ok(agent)
}

fn build_unconstrained(
    dataset: &TransitionDataset,
    config: &AgentConfig,
    seed: u64,
) -> Result<DirectAgent> {
    let config = AgentConfig {
        skip_non_finite: true,
        ..config.clone()
    };
    DirectAgent::build(dataset.state_dim(), dataset.action_dim(), config, seed)
}
