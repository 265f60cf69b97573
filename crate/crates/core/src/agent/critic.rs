use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffnet::{polyak_update, Activation, AdamSnapshot, AdamState, Gradients, Mlp};
use crate::envs::Batch;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `y = lambda * min(q1, q2) + (1 - lambda) * max(q1, q2)`.
pub fn soft_clipped(q1: f64, q2: f64, lambda: f64) -> f64 {
    lambda * q1.min(q2) + (1.0 - lambda) * q1.max(q2)
}

/// Bellman target `r + gamma * (1 - done) * soft_clipped(q1', q2')`.
pub fn compute_target(
    reward: f64,
    next_q1: f64,
    next_q2: f64,
    done: bool,
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    if done {
        return Ok(reward);
    }
    Ok(reward + gamma * soft_clipped(next_q1, next_q2, lambda))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(
            "lambda",
            format!("{lambda} is outside [0, 1]"),
        ));
    }
    Ok(())
}

/// Twin Q-networks over `(s, a)` with their Polyak-averaged targets and optimizers.
#[derive(Debug, Clone)]
pub struct CriticPair {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub lambda: f64,
    pub gamma: f64,
    opt1: AdamState,
    opt2: AdamState,
}

/// Serializable state of a [`CriticPair`], optimizer moments included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticSnapshot {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub lambda: f64,
    pub gamma: f64,
    pub opt1: AdamSnapshot,
    pub opt2: AdamSnapshot,
}

impl CriticPair {
    /// Fresh critics; targets start as exact copies.
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        learning_rate: f64,
        lambda: f64,
        gamma: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng)?;
        let q2 = Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng)?;
        Self::from_networks(q1, q2, learning_rate, lambda, gamma)
    }

    pub fn from_networks(
        q1: Mlp,
        q2: Mlp,
        learning_rate: f64,
        lambda: f64,
        gamma: f64,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        if !q1.same_shape(&q2) || q1.output_dim() != 1 {
            return Err(Error::invalid(
                "critics",
                "twin critics must share a shape with one output",
            ));
        }
        Ok(CriticPair {
            opt1: AdamState::new(&q1, learning_rate),
            opt2: AdamState::new(&q2, learning_rate),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            lambda,
            gamma,
        })
    }

    pub fn snapshot(&self) -> CriticSnapshot {
        CriticSnapshot {
            q1: self.q1.clone(),
            q2: self.q2.clone(),
            q1_target: self.q1_target.clone(),
            q2_target: self.q2_target.clone(),
            lambda: self.lambda,
            gamma: self.gamma,
            opt1: self.opt1.snapshot(),
            opt2: self.opt2.snapshot(),
        }
    }

    pub fn restore(snap: &CriticSnapshot) -> Result<Self> {
        check_lambda(snap.lambda)?;
        Ok(CriticPair {
            opt1: AdamState::restore(&snap.q1, &snap.opt1)?,
            opt2: AdamState::restore(&snap.q2, &snap.opt2)?,
            q1: snap.q1.clone(),
            q2: snap.q2.clone(),
            q1_target: snap.q1_target.clone(),
            q2_target: snap.q2_target.clone(),
            lambda: snap.lambda,
            gamma: snap.gamma,
        })
    }

    pub fn state_action(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
        concatenate![Axis(1), states, actions]
    }

    /// `Q1(s, a)` for each row.
    pub fn q1_values(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        let x = Self::state_action(states, actions);
        Ok(self.q1.forward_batch(x.view())?.column(0).to_owned())
    }

    /// `soft_clipped(Q1, Q2)` of the online critics for each row.
    pub fn soft_values(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        let x = Self::state_action(states, actions);
        let a = self.q1.forward_batch(x.view())?;
        let b = self.q2.forward_batch(x.view())?;
        Ok(ndarray::Zip::from(a.column(0))
            .and(b.column(0))
            .map_collect(|&p, &q| soft_clipped(p, q, self.lambda)))
    }

    /// Targets `r + gamma (1 - done) y` computed by the target critics at
    /// `(s', next_actions)`.
    pub fn targets(
        &self,
        rewards: ArrayView1<f64>,
        next_states: ArrayView2<f64>,
        next_actions: ArrayView2<f64>,
        dones: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        let x = Self::state_action(next_states, next_actions);
        let t1 = self.q1_target.forward_batch(x.view())?;
        let t2 = self.q2_target.forward_batch(x.view())?;
        let mut out = Array1::zeros(rewards.len());
        for i in 0..rewards.len() {
            out[i] = compute_target(
                rewards[i],
                t1[[i, 0]],
                t2[[i, 0]],
                dones[i] > 0.5,
                self.lambda,
                self.gamma,
            )?;
        }
        Ok(out)
    }

    /// Squared TD error `mean (Q_i(s, a) - y)^2` of each online critic and
    /// its parameter gradient, targets held fixed.
    pub fn loss_gradients(
        &self,
        batch: &Batch,
        next_actions: ArrayView2<f64>,
    ) -> Result<[(f64, Gradients); 2]> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let y = self.targets(
            batch.rewards.view(),
            batch.next_states.view(),
            next_actions,
            batch.dones.view(),
        )?;
        let x = Self::state_action(batch.states.view(), batch.actions.view());
        let n = batch.len() as f64;
        let one = |net: &Mlp| -> Result<(f64, Gradients)> {
            let trace = net.forward_trace(x.view())?;
            let err = &trace.output().column(0) - &y;
            let loss = err.mapv(|e| e * e).sum() / n;
            if !loss.is_finite() {
                return Err(Error::non_finite("critic loss"));
            }
            let grad = err.mapv(|e| 2.0 * e / n).insert_axis(Axis(1));
            Ok((loss, net.backward(&trace, grad.view())?.0))
        };
        Ok([one(&self.q1)?, one(&self.q2)?])
    }

    /// One Adam step on each critic toward the shared targets.
    ///
    /// Returns the mean of the two critics' squared TD errors, measured
    /// before the step.
    pub fn update(&mut self, batch: &Batch, next_actions: ArrayView2<f64>) -> Result<f64> {
        let [(l1, g1), (l2, g2)] = self.loss_gradients(batch, next_actions)?;
        self.opt1.step(&mut self.q1, &g1)?;
        self.opt2.step(&mut self.q2, &g2)?;
        Ok((l1 + l2) / 2.0)
    }

    pub fn update_targets(&mut self, tau: f64) -> Result<()> {
        polyak_update(&mut self.q1_target, &self.q1, tau)?;
        polyak_update(&mut self.q2_target, &self.q2, tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_min_and_soft_mix() {
        assert_eq!(compute_target(0.0, 2.0, 4.0, false, 1.0, 1.0).unwrap(), 2.0);
        assert_eq!(soft_clipped(2.0, 4.0, 0.75), 2.5);
        assert_eq!(
            compute_target(0.0, 2.0, 4.0, false, 0.75, 1.0).unwrap(),
            2.5
        );
    }

    #[test]
    fn terminal_transitions_do_not_bootstrap() {
        assert_eq!(
            compute_target(1.25, 1e9, -1e9, true, 0.3, 0.99).unwrap(),
            1.25
        );
    }

    #[test]
    fn lambda_out_of_range_is_rejected() {
        assert!(compute_target(0.0, 1.0, 1.0, false, 1.5, 0.9).is_err());
        assert!(compute_target(0.0, 1.0, 1.0, false, -0.1, 0.9).is_err());
    }

    #[test]
    fn terminal_zero_reward_batch_with_zero_critics_has_zero_loss() {
        let q = Mlp::zeros(&[3, 4, 1], Activation::Relu, Activation::Identity).unwrap();
        let mut critics = CriticPair::from_networks(q.clone(), q.clone(), 1e-3, 1.0, 0.99).unwrap();
        let batch = Batch {
            states: Array2::ones((5, 2)),
            actions: Array2::zeros((5, 1)),
            rewards: Array1::zeros(5),
            next_states: Array2::ones((5, 2)),
            dones: Array1::ones(5),
        };
        let next = Array2::zeros((5, 1));
        assert_eq!(critics.update(&batch, next.view()).unwrap(), 0.0);
        assert_eq!(critics.q1, q);
        assert_eq!(critics.q2, q);
    }
}
