//! Online actor-critic used to produce "medium" behavior.
//!
//! The learner is the same [`DirectAgent`] the unconstrained offline
//! baseline uses, fed from a growing replay buffer while it interacts with
//! the environment. Training stops as soon as an evaluation reaches the
//! target normalized score.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{evaluate, Batch, ReferenceScores, ToyEnv, Transition};
use crate::agent::{AgentConfig, DirectAgent, DirectPolicy};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    /// Learner hyperparameters; `steps` and the logging fields are unused.
    pub agent: AgentConfig,
    /// Uniform-random actions before learning starts.
    pub warmup_steps: usize,
    /// Std of the Gaussian exploration noise added to the policy's action.
    pub exploration_noise: f64,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Stop once an evaluation reaches this normalized score.
    pub target_score: f64,
    pub max_env_steps: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            agent: AgentConfig::default(),
            warmup_steps: 100,
            exploration_noise: 0.2,
            eval_interval: 20,
            eval_episodes: 5,
            target_score: 50.0,
            max_env_steps: 20_000,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.agent.validate(&format!("{prefix}agent."))?;
        if !(self.exploration_noise >= 0.0 && self.exploration_noise.is_finite()) {
            return Err(Error::invalid(
                format!("{prefix}exploration_noise"),
                "must be >= 0",
            ));
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(Error::invalid(
                format!("{prefix}eval_interval"),
                "evaluation must be enabled",
            ));
        }
        if self.max_env_steps == 0 {
            return Err(Error::invalid(
                format!("{prefix}max_env_steps"),
                "must be positive",
            ));
        }
        Ok(())
    }
}

/// Result of an online run.
#[derive(Debug, Clone)]
pub struct OnlineRun {
    /// Policy at the stopping point.
    pub policy: DirectPolicy,
    /// Every transition collected, in order.
    pub buffer: Vec<Transition>,
    /// Normalized score of `policy` at the last evaluation.
    pub normalized_score: f64,
    pub env_steps: usize,
    pub reached_target: bool,
}

/// Trains online until an evaluation reaches `config.target_score`
/// (normalized against `refs`) or `max_env_steps` is exhausted.
pub fn train_online(
    env: &ToyEnv,
    config: &OnlineConfig,
    refs: &ReferenceScores,
    seed: u64,
) -> Result<OnlineRun> {
    config.validate("online.")?;
    let mut agent = DirectAgent::build(
        env.state_dim(),
        env.action_dim(),
        config.agent.clone(),
        seed,
    )?;
    let mut reset_rng = rng::stream(seed, streams::ENV_RESET);
    let mut explore_rng = rng::stream(seed, streams::EXPLORATION);
    let mut batch_rng = rng::stream(seed, streams::ONLINE_MINIBATCH);
    let noise = Normal::new(0.0, config.exploration_noise)
        .map_err(|e| Error::invalid("online.exploration_noise", e.to_string()))?;

    let mut buffer: Vec<Transition> = Vec::with_capacity(config.max_env_steps);
    let mut state = env.reset(&mut reset_rng);
    let mut t = 0usize;
    let mut score = f64::NEG_INFINITY;
    for step in 1..=config.max_env_steps {
        let action: Vec<f64> = if step <= config.warmup_steps {
            env.random_action(&mut explore_rng, 1.0)
        } else {
            let a = super::Policy::act(agent.policy(), &state)?;
            a.iter()
                .map(|v| (v + noise.sample(&mut explore_rng)).clamp(-1.0, 1.0))
                .collect()
        };
        let out = env.step(&state, &action)?;
        t += 1;
        let finished = out.done || t >= env.horizon();
        buffer.push(Transition {
            state: std::mem::replace(&mut state, out.next_state.clone()),
            action,
            reward: out.reward,
            next_state: out.next_state,
            done: out.done,
        });
        if finished {
            state = env.reset(&mut reset_rng);
            t = 0;
        }
        if step > config.warmup_steps {
            let k = config.agent.batch_size.min(buffer.len());
            let rows: Vec<&Transition> = (0..k)
                .map(|_| &buffer[batch_rng.random_range(0..buffer.len())])
                .collect();
            agent.train_step(&Batch::from_transitions(&rows))?;
            if step % config.eval_interval == 0 {
                let eval = evaluate(env, agent.policy(), config.eval_episodes, seed)?;
                score = refs.normalize(eval.mean)?;
                if score >= config.target_score {
                    return Ok(OnlineRun {
                        policy: agent.policy().clone(),
                        buffer,
                        normalized_score: score,
                        env_steps: step,
                        reached_target: true,
                    });
                }
            }
        }
    }
    Ok(OnlineRun {
        policy: agent.policy().clone(),
        buffer,
        normalized_score: score,
        env_steps: config.max_env_steps,
        reached_target: false,
    })
}
