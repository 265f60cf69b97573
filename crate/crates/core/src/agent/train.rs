use serde::{Deserialize, Deserializer, Serialize};

use super::{OffPolicyLearner, PolicyHead};
use crate::envs::{evaluate, Policy, ToyEnv, TransitionDataset};
use crate::error::Result;

/// One line of the training log. Losses and Q are means over the interval
/// ending at `step`; evaluation fields are present only at evaluation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    #[serde(deserialize_with = "nan_as_null")]
    pub critic_loss: f64,
    #[serde(deserialize_with = "nan_as_null")]
    pub mean_q: f64,
    pub eval_return_mean: Option<f64>,
    pub eval_return_std: Option<f64>,
    /// Updates skipped in this interval because of a non-finite loss.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub skipped_updates: usize,
}

// serde_json writes NaN as null; read it back as NaN.
fn nan_as_null<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Seed of the evaluation start states; every evaluation point faces the same ones.
    pub eval_seed: u64,
}

impl TrainOptions {
    pub fn new(eval_seed: u64) -> Self {
        TrainOptions { eval_seed }
    }
}

/// Runs the learner from its current iteration up to `config.steps`.
pub fn train_loop<P: PolicyHead + Policy>(
    agent: &mut OffPolicyLearner<P>,
    dataset: &TransitionDataset,
    env: &ToyEnv,
    options: &TrainOptions,
) -> Result<()> {
    train_loop_with(agent, dataset, env, options, |_, _| Ok(()))
}

/// [`train_loop`] calling `on_log` after every log entry is recorded, e.g. to
/// stream the log to disk or checkpoint.
///
/// Evaluation happens at log points whose step is a multiple of
/// `eval_interval`, and after the final iteration.
pub fn train_loop_with<P, F>(
    agent: &mut OffPolicyLearner<P>,
    dataset: &TransitionDataset,
    env: &ToyEnv,
    options: &TrainOptions,
    mut on_log: F,
) -> Result<()>
where
    P: PolicyHead + Policy,
    F: FnMut(&OffPolicyLearner<P>, &TrainLogEntry) -> Result<()>,
{
    let cfg = agent.config().clone();
    let mut loss_sum = 0.0;
    let mut q_sum = 0.0;
    let mut counted = 0usize;
    let mut skipped = 0usize;
    while agent.iteration() < cfg.steps {
        let batch = agent.sample_batch(dataset)?;
        let stats = agent.train_step(&batch)?;
        if stats.skipped {
            skipped += 1;
        } else {
            loss_sum += stats.critic_loss;
            q_sum += stats.mean_q;
            counted += 1;
        }
        let step = agent.iteration();
        let last = step == cfg.steps;
        if !step.is_multiple_of(cfg.log_interval) && !last {
            continue;
        }
        let evaluate_now =
            last || (cfg.eval_interval > 0 && step.is_multiple_of(cfg.eval_interval));
        let summary = if evaluate_now && cfg.eval_episodes > 0 {
            Some(evaluate(
                env,
                agent.policy(),
                cfg.eval_episodes,
                options.eval_seed,
            )?)
        } else {
            None
        };
        let k = counted as f64;
        let entry = TrainLogEntry {
            step,
            critic_loss: if counted > 0 { loss_sum / k } else { f64::NAN },
            mean_q: if counted > 0 { q_sum / k } else { f64::NAN },
            eval_return_mean: summary.as_ref().map(|s| s.mean),
            eval_return_std: summary.as_ref().map(|s| s.std),
            skipped_updates: skipped,
        };
        agent.push_log(entry.clone());
        on_log(agent, &entry)?;
        loss_sum = 0.0;
        q_sum = 0.0;
        counted = 0;
        skipped = 0;
    }
    Ok(())
}
