//! The latent-space policy learner and the shared off-policy machinery.
//!
//! [`OffPolicyLearner`] owns a [`PolicyHead`], its Polyak-averaged target
//! copy and a [`CriticPair`]. One training iteration is
//!
//! 1. sample a minibatch,
//! 2. compute next actions with the target (or online) policy,
//! 3. one Adam step on each critic toward the soft clipped double-Q target,
//! 4. one Adam step on the policy ascending `Q1(s, pi(s))` (or the soft mix),
//! 5. Polyak updates of critics and policy targets.
//!
//! [`train_plas`] runs this loop with a [`LatentPolicy`]; the unconstrained
//! baseline runs the very same loop with a [`DirectPolicy`].

mod critic;
mod policy;
mod train;

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::cvae::BehaviorCvae;
use crate::diagnostics::NeighborIndex;
use crate::diffnet::{AdamSnapshot, AdamState, Gradients, Mlp};
use crate::envs::{Batch, Policy, TransitionDataset};
use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};

pub use critic::{compute_target, soft_clipped, CriticPair, CriticSnapshot};
pub use policy::{
    DirectPolicy, LatentActor, LatentPolicy, LatentTrace, PerturbationHead, PolicyHead,
};
pub use train::{train_loop, train_loop_with, TrainLogEntry, TrainOptions};

pub const CHECKPOINT_FORMAT: &str = "plas.agent";

/// Quantity the actor ascends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorObjective {
    /// `Q1(s, pi(s))`.
    #[default]
    Q1,
    /// `lambda * min(Q1, Q2) + (1 - lambda) * max(Q1, Q2)`.
    SoftMix,
}

/// Which policy produces `a'` inside the Bellman target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NextActionSource {
    #[default]
    Target,
    Online,
}

/// Hyperparameters of the off-policy learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub log_interval: usize,
    /// Evaluate every this many steps (and always after the last one).
    /// Zero disables periodic evaluation.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub max_latent_action: f64,
    /// Perturbation bound; `None` disables the perturbation head.
    pub epsilon: Option<f64>,
    pub actor_objective: ActorObjective,
    pub next_action: NextActionSource,
    /// Skip updates whose loss is non-finite instead of aborting.
    pub skip_non_finite: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![64, 64],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            tau: 0.005,
            lambda: 1.0,
            gamma: 0.99,
            batch_size: 100,
            steps: 50_000,
            log_interval: 500,
            eval_interval: 500,
            eval_episodes: 10,
            max_latent_action: 2.0,
            epsilon: None,
            actor_objective: ActorObjective::Q1,
            next_action: NextActionSource::Target,
            skip_non_finite: false,
        }
    }
}

impl AgentConfig {
    /// Checks every field; errors name the offending field under `prefix`.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let field = |name: &str| format!("{prefix}{name}");
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(field(name), format!("{v} must be positive")))
            }
        };
        if self.hidden.contains(&0) {
            return Err(Error::invalid(
                field("hidden"),
                "hidden widths must be positive",
            ));
        }
        positive("actor_lr", self.actor_lr)?;
        positive("critic_lr", self.critic_lr)?;
        positive("max_latent_action", self.max_latent_action)?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid(
                field("tau"),
                format!("{} is outside (0, 1]", self.tau),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(
                field("lambda"),
                format!("{} is outside [0, 1]", self.lambda),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(
                field("gamma"),
                format!("{} is outside [0, 1)", self.gamma),
            ));
        }
        if let Some(eps) = self.epsilon {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(Error::invalid(
                    field("epsilon"),
                    format!("{eps} must be >= 0"),
                ));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid(field("batch_size"), "must be positive"));
        }
        if self.log_interval == 0 {
            return Err(Error::invalid(field("log_interval"), "must be positive"));
        }
        if self.eval_interval > 0 && self.eval_episodes == 0 {
            return Err(Error::invalid(
                field("eval_episodes"),
                "must be positive when evaluating",
            ));
        }
        Ok(())
    }
}

/// Per-iteration numbers reported by [`OffPolicyLearner::train_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub critic_loss: f64,
    pub mean_q: f64,
    /// True when the update was skipped because of a non-finite loss.
    pub skipped: bool,
}

/// Policy, target policy, twin critics and optimizers.
#[derive(Debug, Clone)]
pub struct OffPolicyLearner<P: PolicyHead> {
    policy: P,
    target_policy: P,
    critics: CriticPair,
    actor_opts: Vec<AdamState>,
    config: AgentConfig,
    batch_rng: Rng,
    iteration: usize,
    log: Vec<TrainLogEntry>,
    projector: Option<(Arc<NeighborIndex>, usize)>,
}

/// The latent-space policy learner.
pub type PlasAgent = OffPolicyLearner<LatentPolicy>;
/// The unconstrained baseline learner.
pub type DirectAgent = OffPolicyLearner<DirectPolicy>;

/// Everything needed to continue training bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSnapshot {
    pub config: AgentConfig,
    pub policy: Vec<Mlp>,
    pub target_policy: Vec<Mlp>,
    pub actor_opts: Vec<AdamSnapshot>,
    pub critics: CriticSnapshot,
    pub seed: u64,
    /// Position of the minibatch stream, in 32-bit words.
    pub batch_rng_word_pos: u128,
    pub iteration: usize,
    pub log: Vec<TrainLogEntry>,
    /// Hash of the frozen CVAE, for latent policies.
    pub cvae_hash: Option<String>,
    /// Perturbation bound of the saved policy, `None` without a head.
    pub epsilon: Option<f64>,
    pub max_latent_action: Option<f64>,
}

impl<P: PolicyHead> OffPolicyLearner<P> {
    /// Wraps an initialized policy; critics are drawn from the critic stream of `seed`.
    pub fn new(policy: P, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate("agent.")?;
        let mut critic_rng = rng::stream(seed, streams::CRITIC_INIT);
        let critics = CriticPair::new(
            policy.state_dim(),
            policy.action_dim(),
            &config.hidden,
            config.critic_lr,
            config.lambda,
            config.gamma,
            &mut critic_rng,
        )?;
        Self::with_critics(policy, critics, config, seed)
    }

    pub fn with_critics(
        policy: P,
        critics: CriticPair,
        config: AgentConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate("agent.")?;
        let actor_opts = policy
            .trainable()
            .into_iter()
            .map(|net| AdamState::new(net, config.actor_lr))
            .collect();
        Ok(OffPolicyLearner {
            target_policy: policy.clone(),
            policy,
            critics,
            actor_opts,
            config,
            batch_rng: rng::stream(seed, streams::MINIBATCH),
            iteration: 0,
            log: Vec::new(),
            projector: None,
        })
    }

    /// Diagnostic mode: bootstrap only on dataset actions. Every next action
    /// is replaced by the closest action stored at the `k` dataset states
    /// nearest to `s'`.
    pub fn project_next_actions(&mut self, index: Arc<NeighborIndex>, k: usize) {
        self.projector = Some((index, k));
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }

    /// Direct access to the online policy, e.g. for finite-difference checks.
    pub fn policy_mut(&mut self) -> &mut P {
        &mut self.policy
    }

    pub fn target_policy(&self) -> &P {
        &self.target_policy
    }

    pub fn critics(&self) -> &CriticPair {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut CriticPair {
        &mut self.critics
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    /// Completed training iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn log(&self) -> &[TrainLogEntry] {
        &self.log
    }

    pub(crate) fn push_log(&mut self, entry: TrainLogEntry) {
        self.log.push(entry);
    }

    pub fn sample_batch(&mut self, dataset: &TransitionDataset) -> Result<Batch> {
        let k = self.config.batch_size.min(dataset.len());
        dataset.sample_batch(k, &mut self.batch_rng)
    }

    /// `a'` for the Bellman target.
    pub fn next_actions(&self, next_states: ArrayView2<f64>) -> Result<Array2<f64>> {
        let actions = match self.config.next_action {
            NextActionSource::Target => self.target_policy.act_batch(next_states)?,
            NextActionSource::Online => self.policy.act_batch(next_states)?,
        };
        Ok(match &self.projector {
            Some((index, k)) => index.project(next_states, actions.view(), *k),
            None => actions,
        })
    }

    /// One Adam step per critic; returns the mean squared TD error.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<f64> {
        let next = self.next_actions(batch.next_states.view())?;
        self.critics.update(batch, next.view())
    }

    /// Actor loss (minus the batch mean of the configured objective) and its
    /// gradient for every trainable policy network, critics held fixed.
    pub fn actor_loss_gradients(&self, states: ArrayView2<f64>) -> Result<(f64, Vec<Gradients>)> {
        let (loss, _, grads) = self.actor_pass(states)?;
        Ok((loss, grads))
    }

    fn actor_pass(&self, states: ArrayView2<f64>) -> Result<(f64, f64, Vec<Gradients>)> {
        if states.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        let (actions, trace) = self.policy.forward(states)?;
        let (loss, mean_q, action_grad) = self.objective_action_grad(states, actions.view())?;
        Ok((
            loss,
            mean_q,
            self.policy.backward(&trace, action_grad.view())?,
        ))
    }

    /// One Adam step per policy network ascending the configured objective.
    /// Returns the batch mean of `Q1(s, pi(s))` before the step.
    pub fn actor_update(&mut self, states: ArrayView2<f64>) -> Result<f64> {
        let (_, mean_q, grads) = self.actor_pass(states)?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::non_finite("actor gradient"));
        }
        for ((net, opt), g) in self
            .policy
            .trainable_mut()
            .into_iter()
            .zip(&mut self.actor_opts)
            .zip(&grads)
        {
            opt.step(net, g)?;
        }
        Ok(mean_q)
    }

    /// Actor loss, mean `Q1` and the gradient of the loss with respect to
    /// the actions.
    fn objective_action_grad(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(f64, f64, Array2<f64>)> {
        let n = states.nrows() as f64;
        let sd = states.ncols();
        let x = CriticPair::state_action(states, actions);
        let t1 = self.critics.q1.forward_trace(x.view())?;
        let q1 = t1.output().column(0).to_owned();
        let mean_q = q1.mean().unwrap_or(0.0);
        let (loss, input_grad) = match self.config.actor_objective {
            ActorObjective::Q1 => {
                let g = Array2::from_elem((states.nrows(), 1), -1.0 / n);
                (-mean_q, self.critics.q1.backward(&t1, g.view())?.1)
            }
            ActorObjective::SoftMix => {
                let t2 = self.critics.q2.forward_trace(x.view())?;
                let q2 = t2.output().column(0);
                let lambda = self.critics.lambda;
                let mut g1 = Array2::zeros((states.nrows(), 1));
                let mut g2 = Array2::zeros((states.nrows(), 1));
                let mut objective = 0.0;
                for i in 0..states.nrows() {
                    objective += soft_clipped(q1[i], q2[i], lambda);
                    let (w1, w2) = if q1[i] <= q2[i] {
                        (lambda, 1.0 - lambda)
                    } else {
                        (1.0 - lambda, lambda)
                    };
                    g1[[i, 0]] = -w1 / n;
                    g2[[i, 0]] = -w2 / n;
                }
                (
                    -objective / n,
                    self.critics.q1.backward(&t1, g1.view())?.1
                        + self.critics.q2.backward(&t2, g2.view())?.1,
                )
            }
        };
        let action_grad = input_grad.slice_axis(Axis(1), (sd..).into()).to_owned();
        Ok((loss, mean_q, action_grad))
    }

    pub fn update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        self.critics.update_targets(tau)?;
        for (t, o) in self
            .target_policy
            .trainable_mut()
            .into_iter()
            .zip(self.policy.trainable())
        {
            crate::diffnet::polyak_update(t, o, tau)?;
        }
        Ok(())
    }

    /// Critic step, actor step and target updates on one minibatch.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepStats> {
        self.iteration += 1;
        let result = self
            .critic_update(batch)
            .and_then(|loss| Ok((loss, self.actor_update(batch.states.view())?)))
            .and_then(|(loss, q)| {
                self.update_targets()?;
                Ok((loss, q))
            });
        match result {
            Ok((critic_loss, mean_q)) => Ok(StepStats {
                critic_loss,
                mean_q,
                skipped: false,
            }),
            Err(Error::NonFinite { .. }) if self.config.skip_non_finite => Ok(StepStats {
                critic_loss: f64::NAN,
                mean_q: f64::NAN,
                skipped: true,
            }),
            Err(Error::NonFinite { context }) => Err(Error::Diverged {
                iteration: self.iteration,
                context,
            }),
            Err(e) => Err(e),
        }
    }

    /// `Q1(s, pi(s))` for each row.
    pub fn q_values(&self, states: ArrayView2<f64>) -> Result<ndarray::Array1<f64>> {
        let actions = self.policy.act_batch(states)?;
        self.critics.q1_values(states, actions.view())
    }

    fn snapshot_with(
        &self,
        seed: u64,
        cvae_hash: Option<String>,
        epsilon: Option<f64>,
        mla: Option<f64>,
    ) -> LearnerSnapshot {
        LearnerSnapshot {
            config: self.config.clone(),
            policy: self.policy.trainable().into_iter().cloned().collect(),
            target_policy: self
                .target_policy
                .trainable()
                .into_iter()
                .cloned()
                .collect(),
            actor_opts: self.actor_opts.iter().map(AdamState::snapshot).collect(),
            critics: self.critics.snapshot(),
            seed,
            batch_rng_word_pos: self.batch_rng.get_word_pos(),
            iteration: self.iteration,
            log: self.log.clone(),
            cvae_hash,
            epsilon,
            max_latent_action: mla,
        }
    }

    /// Rebuilds a learner from `template` (for shapes and frozen parts) and a snapshot.
    pub fn restore_into(template: P, snap: &LearnerSnapshot) -> Result<Self> {
        let mut policy = template.clone();
        let mut target_policy = template;
        assign_nets(policy.trainable_mut(), &snap.policy)?;
        assign_nets(target_policy.trainable_mut(), &snap.target_policy)?;
        let actor_opts = policy
            .trainable()
            .into_iter()
            .zip(&snap.actor_opts)
            .map(|(net, s)| AdamState::restore(net, s))
            .collect::<Result<Vec<_>>>()?;
        if actor_opts.len() != snap.policy.len() {
            return Err(Error::Format {
                what: "agent checkpoint",
                reason: "optimizer count does not match policy networks".into(),
            });
        }
        let mut batch_rng = rng::stream(snap.seed, streams::MINIBATCH);
        batch_rng.set_word_pos(snap.batch_rng_word_pos);
        Ok(OffPolicyLearner {
            policy,
            target_policy,
            critics: CriticPair::restore(&snap.critics)?,
            actor_opts,
            config: snap.config.clone(),
            batch_rng,
            iteration: snap.iteration,
            log: snap.log.clone(),
            projector: None,
        })
    }
}

fn assign_nets(targets: Vec<&mut Mlp>, nets: &[Mlp]) -> Result<()> {
    if targets.len() != nets.len() {
        return Err(Error::Format {
            what: "agent checkpoint",
            reason: format!(
                "expected {} policy networks, found {}",
                targets.len(),
                nets.len()
            ),
        });
    }
    for (t, n) in targets.into_iter().zip(nets) {
        if !t.same_shape(n) {
            return Err(Error::Format {
                what: "agent checkpoint",
                reason: "policy network shape differs from the configuration".into(),
            });
        }
        *t = n.clone();
    }
    Ok(())
}

impl<P: PolicyHead + Policy> Policy for OffPolicyLearner<P> {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.policy.act(state)
    }
}

impl PlasAgent {
    /// Fresh latent-space learner on top of a frozen CVAE.
    pub fn build(cvae: Arc<BehaviorCvae>, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate("agent.")?;
        let policy = LatentPolicy::new(
            cvae,
            &config.hidden,
            config.max_latent_action,
            config.epsilon,
            &mut rng::stream(seed, streams::ACTOR_INIT),
            &mut rng::stream(seed, streams::PERTURBATION_INIT),
        )?;
        Self::new(policy, config, seed)
    }

    pub fn snapshot(&self, seed: u64) -> LearnerSnapshot {
        let p = self.policy();
        self.snapshot_with(
            seed,
            Some(p.cvae().content_hash()),
            p.perturbation.as_ref().map(|h| h.epsilon),
            Some(p.actor.max_latent_action),
        )
    }

    /// Restores a checkpointed learner; `cvae` must be the model it was trained on.
    pub fn restore(cvae: Arc<BehaviorCvae>, snap: &LearnerSnapshot) -> Result<Self> {
        let hash = cvae.content_hash();
        if snap.cvae_hash.as_deref() != Some(hash.as_str()) {
            return Err(Error::HashMismatch {
                path: "cvae".into(),
                expected: snap.cvae_hash.clone().unwrap_or_default(),
                found: hash,
            });
        }
        let template = LatentPolicy::new(
            cvae,
            &snap.config.hidden,
            snap.max_latent_action
                .unwrap_or(snap.config.max_latent_action),
            snap.epsilon,
            &mut rng::stream(0, 0),
            &mut rng::stream(0, 0),
        )?;
        Self::restore_into(template, snap)
    }

    pub fn save(&self, path: &Path, seed: u64, config_hash: Option<&str>) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_FORMAT, config_hash, &self.snapshot(seed))
    }

    pub fn load(path: &Path, cvae: Arc<BehaviorCvae>) -> Result<(Self, Option<String>)> {
        let c = checkpoint::load::<LearnerSnapshot>(path, CHECKPOINT_FORMAT)?;
        Ok((Self::restore(cvae, &c.payload)?, c.config_hash))
    }
}

impl DirectAgent {
    /// Fresh unconstrained learner.
    pub fn build(
        state_dim: usize,
        action_dim: usize,
        config: AgentConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate("agent.")?;
        let policy = DirectPolicy::new(
            state_dim,
            action_dim,
            &config.hidden,
            &mut rng::stream(seed, streams::ACTOR_INIT),
        )?;
        Self::new(policy, config, seed)
    }

    pub fn snapshot(&self, seed: u64) -> LearnerSnapshot {
        self.snapshot_with(seed, None, None, None)
    }

    pub fn restore(snap: &LearnerSnapshot) -> Result<Self> {
        let net = snap.policy.first().cloned().ok_or_else(|| Error::Format {
            what: "agent checkpoint",
            reason: "no policy network".into(),
        })?;
        Self::restore_into(DirectPolicy::from_net(net)?, snap)
    }

    pub fn save(&self, path: &Path, seed: u64, config_hash: Option<&str>) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_FORMAT, config_hash, &self.snapshot(seed))
    }

    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let c = checkpoint::load::<LearnerSnapshot>(path, CHECKPOINT_FORMAT)?;
        Ok((Self::restore(&c.payload)?, c.config_hash))
    }
}

/// Trains the latent-space policy on a frozen CVAE.
///
/// Evaluation rollouts run on `env` at every `eval_interval` and after the
/// last iteration. Returns the learner; its [`OffPolicyLearner::log`] holds
/// the training log.
pub fn train_plas(
    dataset: &TransitionDataset,
    cvae: Arc<BehaviorCvae>,
    env: &crate::envs::ToyEnv,
    config: &AgentConfig,
    seed: u64,
) -> Result<PlasAgent> {
    if cvae.state_dim() != dataset.state_dim() || cvae.action_dim() != dataset.action_dim() {
        return Err(Error::invalid("cvae", "dimensions differ from the dataset"));
    }
    let mut agent = PlasAgent::build(cvae, config.clone(), seed)?;
    train_loop(&mut agent, dataset, env, &TrainOptions::new(seed))?;
    Ok(agent)
}
