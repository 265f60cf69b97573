//! Q-function error analysis and dataset-support probes.
//!
//! [`q_error_report`] rolls out a policy, compares the critic's `Q(s_t, a_t)`
//! with the truncated discounted return `G(s_t, a_t)` actually collected
//! from that point on, and summarizes the errors `e = Q - G`.
//!
//! [`NeighborIndex`] measures how far an action lies from the dataset's
//! actions at similar states: the distance of `(s, a)` is the smallest
//! `|a - a_i|` over the `k` dataset states nearest to `s`. The toy
//! environments end within 100 steps, so the default truncation of 1000
//! never binds there.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::agent::{OffPolicyLearner, PolicyHead};
use crate::checkpoint::write_atomic;
use crate::envs::{rollout, Policy, ToyEnv, TransitionDataset};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

pub const DEFAULT_TRUNCATION: usize = 1000;
pub const DEFAULT_NEIGHBORS: usize = 10;
pub const THRESHOLD_PERCENTILE: f64 = 99.0;

/// `G_t = sum_{k < min(T - t, truncation)} gamma^k r_{t+k}` for every `t`.
pub fn empirical_return(rewards: &[f64], gamma: f64, truncation: usize) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::invalid("rewards", "empty reward sequence"));
    }
    if truncation == 0 {
        return Err(Error::invalid("truncation", "must be positive"));
    }
    let n = rewards.len();
    Ok((0..n)
        .map(|t| {
            let end = n.min(t + truncation);
            let mut g = 0.0;
            let mut discount = 1.0;
            for &r in &rewards[t..end] {
                g += discount * r;
                discount *= gamma;
            }
            g
        })
        .collect())
}

/// Summary of estimation errors `e = Q - G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QErrorReport {
    pub mse: f64,
    /// Fraction of points with `e > 0`.
    pub positive_error_pct: f64,
    /// Mean of the positive errors, 0 when there are none.
    pub positive_error_mean: f64,
    /// Mean of the non-positive errors, 0 when there are none.
    pub negative_error_mean: f64,
    pub n_points: usize,
    pub n_episodes: usize,
}

impl QErrorReport {
    pub fn from_errors(errors: &[f64], n_episodes: usize) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::invalid("errors", "no completed episodes"));
        }
        if errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::non_finite("q error"));
        }
        let n = errors.len();
        let (pos, neg): (Vec<f64>, Vec<f64>) = errors.iter().partition(|&&e| e > 0.0);
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Ok(QErrorReport {
            mse: errors.iter().map(|e| e * e).sum::<f64>() / n as f64,
            positive_error_pct: pos.len() as f64 / n as f64,
            positive_error_mean: mean(&pos),
            negative_error_mean: mean(&neg),
            n_points: n,
            n_episodes,
        })
    }
}

/// Rolls out `policy` for `n_episodes` (start states keyed by `seed` exactly
/// as in [`crate::envs::evaluate`]) and compares `q(s, a)` with the
/// empirical returns.
pub fn q_error_report<P, Q>(
    policy: &P,
    q: Q,
    env: &ToyEnv,
    n_episodes: usize,
    gamma: f64,
    truncation: usize,
    seed: u64,
) -> Result<QErrorReport>
where
    P: Policy + ?Sized,
    Q: Fn(ArrayView2<f64>, ArrayView2<f64>) -> Result<Vec<f64>>,
{
    if n_episodes == 0 {
        return Err(Error::invalid("n_episodes", "must be positive"));
    }
    let mut errors = Vec::new();
    for i in 0..n_episodes {
        let mut rng = rng::indexed_stream(seed, streams::EVALUATION, i as u64);
        let episode = rollout(env, policy, &mut rng)?;
        let returns = empirical_return(&episode.rewards(), gamma, truncation)?;
        let states = rows(episode.transitions.iter().map(|t| t.state.as_slice()));
        let actions = rows(episode.transitions.iter().map(|t| t.action.as_slice()));
        let qs = q(states.view(), actions.view())?;
        errors.extend(qs.iter().zip(&returns).map(|(q, g)| q - g));
    }
    QErrorReport::from_errors(&errors, n_episodes)
}

/// [`q_error_report`] for a trained learner, using its first online critic.
pub fn learner_q_error_report<P: PolicyHead + Policy>(
    agent: &OffPolicyLearner<P>,
    env: &ToyEnv,
    n_episodes: usize,
    seed: u64,
) -> Result<QErrorReport> {
    let critics = agent.critics();
    q_error_report(
        agent.policy(),
        |s, a| Ok(critics.q1_values(s, a)?.to_vec()),
        env,
        n_episodes,
        critics.gamma,
        DEFAULT_TRUNCATION,
        seed,
    )
}

fn rows<'a>(it: impl Iterator<Item = &'a [f64]>) -> Array2<f64> {
    let v: Vec<&[f64]> = it.collect();
    let width = v.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((v.len(), width), |(i, j)| v[i][j])
}

/// One CSV row of a Q-error curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QErrorRow {
    pub config_hash: String,
    pub algorithm: String,
    pub dataset: String,
    pub seed: u64,
    pub step: usize,
    pub mse: f64,
    pub positive_error_pct: f64,
    pub positive_error_mean: f64,
    pub negative_error_mean: f64,
    pub n_points: usize,
    pub n_episodes: usize,
}

impl QErrorRow {
    pub fn new(
        config_hash: &str,
        algorithm: &str,
        dataset: &str,
        seed: u64,
        step: usize,
        r: &QErrorReport,
    ) -> Self {
        QErrorRow {
            config_hash: config_hash.to_string(),
            algorithm: algorithm.to_string(),
            dataset: dataset.to_string(),
            seed,
            step,
            mse: r.mse,
            positive_error_pct: r.positive_error_pct,
            positive_error_mean: r.positive_error_mean,
            negative_error_mean: r.negative_error_mean,
            n_points: r.n_points,
            n_episodes: r.n_episodes,
        }
    }
}

/// Writes rows to CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Format {
            what: "csv row",
            reason: e.to_string(),
        })?;
    }
    w.into_inner().map_err(|e| Error::Format {
        what: "csv",
        reason: e.to_string(),
    })
}

/// Brute-force nearest-neighbor lookup over a dataset's states.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    states: Array2<f64>,
    actions: Array2<f64>,
}

impl NeighborIndex {
    pub fn new(dataset: &TransitionDataset) -> Self {
        NeighborIndex {
            states: dataset.states(),
            actions: dataset.actions(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    /// Indices of the `k` dataset states closest to `state` (L2), nearest
    /// first, ties by index. `exclude` removes one index from consideration.
    pub fn k_nearest(
        &self,
        state: ArrayView1<f64>,
        k: usize,
        exclude: Option<usize>,
    ) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .states
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, row)| {
                let dist: f64 = row.iter().zip(state).map(|(a, b)| (a - b) * (a - b)).sum();
                (dist, i)
            })
            .collect();
        let k = k.min(d.len());
        if k == 0 {
            return Vec::new();
        }
        d.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
        d.truncate(k);
        d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        d.into_iter().map(|(_, i)| i).collect()
    }

    /// `(nearest dataset action among the k neighbors, its L2 distance to `action`)`.
    fn closest_action(
        &self,
        state: ArrayView1<f64>,
        action: ArrayView1<f64>,
        k: usize,
        exclude: Option<usize>,
    ) -> (usize, f64) {
        self.k_nearest(state, k, exclude)
            .into_iter()
            .map(|i| {
                let d: f64 = self
                    .actions
                    .row(i)
                    .iter()
                    .zip(action)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (i, d.sqrt())
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distances"))
            .unwrap_or((usize::MAX, f64::INFINITY))
    }

    pub fn action_distance(
        &self,
        state: ArrayView1<f64>,
        action: ArrayView1<f64>,
        k: usize,
    ) -> f64 {
        self.closest_action(state, action, k, None).1
    }

    /// Replaces each action by the closest dataset action at the `k` nearest states.
    pub fn project(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        k: usize,
    ) -> Array2<f64> {
        let mut out = actions.to_owned();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let (j, _) = self.closest_action(states.row(i), actions.row(i), k, None);
            row.assign(&self.actions.row(j));
        }
        out
    }

    /// Leave-one-out distance of every dataset pair to the rest of the dataset.
    pub fn leave_one_out_distances(&self, k: usize) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                self.closest_action(self.states.row(i), self.actions.row(i), k, Some(i))
                    .1
            })
            .collect()
    }

    /// Support threshold: the given percentile of the leave-one-out distances.
    pub fn calibrate_threshold(&self, k: usize, pct: f64) -> Result<f64> {
        if self.len() < 2 {
            return Err(Error::invalid(
                "dataset",
                "calibration needs at least two transitions",
            ));
        }
        percentile(&self.leave_one_out_distances(k), pct)
    }
}

/// Distribution of probe distances to the dataset support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSummary {
    pub distances: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl SupportSummary {
    pub fn from_distances(distances: Vec<f64>) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::invalid("probes", "no probe points"));
        }
        let mean = distances.iter().sum::<f64>() / distances.len() as f64;
        Ok(SupportSummary {
            mean,
            median: percentile(&distances, 50.0)?,
            p95: percentile(&distances, 95.0)?,
            max: distances.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            distances,
        })
    }

    /// Fraction of probes strictly beyond `threshold`.
    pub fn violation_rate(&self, threshold: f64) -> f64 {
        self.distances.iter().filter(|&&d| d > threshold).count() as f64
            / self.distances.len() as f64
    }
}

/// Distance of each probe `(states[i], actions[i])` to the dataset support.
pub fn support_distance(
    dataset: &TransitionDataset,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    k: usize,
) -> Result<SupportSummary> {
    support_distance_with(&NeighborIndex::new(dataset), states, actions, k)
}

pub fn support_distance_with(
    index: &NeighborIndex,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    k: usize,
) -> Result<SupportSummary> {
    if states.ncols() != index.states.ncols() {
        return Err(Error::shape(
            "probe state",
            index.states.ncols(),
            states.ncols(),
        ));
    }
    if actions.ncols() != index.actions.ncols() {
        return Err(Error::shape(
            "probe action",
            index.actions.ncols(),
            actions.ncols(),
        ));
    }
    if states.nrows() != actions.nrows() {
        return Err(Error::shape("probe count", states.nrows(), actions.nrows()));
    }
    if k == 0 {
        return Err(Error::invalid("k", "must be positive"));
    }
    let d = (0..states.nrows())
        .map(|i| index.action_distance(states.row(i), actions.row(i), k))
        .collect();
    SupportSummary::from_distances(d)
}

/// Linear-interpolation percentile (`pct` in `[0, 100]`).
pub fn percentile(values: &[f64], pct: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("values", "empty"));
    }
    if !(0.0..=100.0).contains(&pct) {
        return Err(Error::invalid(
            "percentile",
            format!("{pct} is outside [0, 100]"),
        ));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = pct / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{GeneratorKind, Transition};

    #[test]
    fn single_reward_return() {
        assert_eq!(empirical_return(&[1.0], 0.99, 1000).unwrap(), vec![1.0]);
    }

    #[test]
    fn truncated_geometric_series() {
        let g = empirical_return(&vec![1.0; 2500], 0.99, 1000).unwrap();
        let closed = (1.0 - 0.99f64.powi(1000)) / 0.01;
        assert!((g[0] - closed).abs() < 1e-9);
        assert!((g[0] - 99.9957).abs() < 1e-4);
        assert!((g[1500] - closed).abs() < 1e-9);
        assert!((g[2499] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_one_and_gamma_zero_give_immediate_rewards() {
        let r = [0.5, -1.0, 2.0];
        assert_eq!(empirical_return(&r, 0.9, 1).unwrap(), r.to_vec());
        assert_eq!(empirical_return(&r, 0.0, 1000).unwrap(), r.to_vec());
    }

    #[test]
    fn empty_rewards_are_rejected() {
        assert!(empirical_return(&[], 0.9, 10).is_err());
    }

    #[test]
    fn two_point_errors() {
        let r = QErrorReport::from_errors(&[1.0, -1.0], 1).unwrap();
        assert_eq!(r.mse, 1.0);
        assert_eq!(r.positive_error_pct, 0.5);
        assert_eq!(r.positive_error_mean, 1.0);
        assert_eq!(r.negative_error_mean, -1.0);
    }

    #[test]
    fn perfect_critic_reports_zeros() {
        let r = QErrorReport::from_errors(&[0.0; 7], 2).unwrap();
        assert_eq!(
            (
                r.mse,
                r.positive_error_pct,
                r.positive_error_mean,
                r.negative_error_mean
            ),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 4.0);
        assert_eq!(percentile(&v, 50.0).unwrap(), 2.5);
    }

    fn line_dataset() -> TransitionDataset {
        let t = (0..30)
            .map(|i| Transition {
                state: vec![i as f64],
                action: vec![if i % 2 == 0 { 0.5 } else { -0.5 }],
                reward: 0.0,
                next_state: vec![i as f64],
                done: false,
            })
            .collect();
        TransitionDataset::from_transitions("edge-following", GeneratorKind::Custom, 0, t).unwrap()
    }

    #[test]
    fn dataset_probes_have_zero_distance() {
        let ds = line_dataset();
        let s = support_distance(&ds, ds.states().view(), ds.actions().view(), 10).unwrap();
        assert!(s.distances.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn nearest_states_come_first() {
        let ds = line_dataset();
        let idx = NeighborIndex::new(&ds);
        let n = idx.k_nearest(ndarray::aview1(&[10.2]), 3, None);
        assert_eq!(n, vec![10, 11, 9]);
        assert_eq!(
            idx.k_nearest(ndarray::aview1(&[10.0]), 2, Some(10)),
            vec![9, 11]
        );
    }

    #[test]
    fn projection_snaps_to_dataset_actions() {
        let ds = line_dataset();
        let idx = NeighborIndex::new(&ds);
        let s = ndarray::arr2(&[[4.0], [7.0]]);
        let a = ndarray::arr2(&[[0.9], [-0.1]]);
        assert_eq!(
            idx.project(s.view(), a.view(), 4),
            ndarray::arr2(&[[0.5], [-0.5]])
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ds = line_dataset();
        let s = Array2::zeros((2, 2));
        let a = Array2::zeros((2, 1));
        assert!(matches!(
            support_distance(&ds, s.view(), a.view(), 3),
            Err(Error::Shape { .. })
        ));
    }
}
