#![allow(dead_code)]

use std::io::Write;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use plas::envs::generate::{generate_with, GeneratorConfig};
use plas::envs::{GeneratorKind, ToyEnv, TransitionDataset};
use plas::rng::Rng;

/// Central-difference step.
pub const H: f64 = 1e-5;
/// Acceptance tolerance on the relative gradient error.
pub const REL_TOL: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|)`, with the denominator floored at 1e-3 so that
/// entries that are essentially zero are compared on an absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, Default)]
pub struct FdCheck {
    /// Largest relative error over all coordinates.
    pub worst: f64,
    /// Coordinates whose stencil straddled a kink and were re-checked at `H / 100`.
    pub kinks: usize,
}

impl FdCheck {
    pub fn merge(self, other: FdCheck) -> FdCheck {
        FdCheck {
            worst: self.worst.max(other.worst),
            kinks: self.kinks + other.kinks,
        }
    }
}

/// Compares `analytic` with central differences of `loss` around `params`.
///
/// Relu networks are only piecewise smooth. When a coordinate fails and its
/// forward and backward differences disagree, a kink lies inside the
/// stencil and the central difference is no oracle there; that coordinate
/// is re-measured with a stencil a hundred times narrower.
pub fn fd_check(params: &[f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> FdCheck {
    assert_eq!(params.len(), analytic.len());
    let mut p = params.to_vec();
    let mut central = |p: &mut Vec<f64>, i: usize, h: f64| {
        p[i] = params[i] + h;
        let up = loss(p);
        p[i] = params[i] - h;
        let down = loss(p);
        p[i] = params[i];
        let mid = loss(p);
        ((up - down) / (2.0 * h), (up - mid) / h, (mid - down) / h)
    };
    let mut out = FdCheck::default();
    for (i, &g) in analytic.iter().enumerate() {
        let (c, fwd, bwd) = central(&mut p, i, H);
        let mut err = rel_err(g, c);
        if err > REL_TOL && rel_err(fwd, bwd) > REL_TOL {
            out.kinks += 1;
            err = rel_err(g, central(&mut p, i, H / 100.0).0);
        }
        out.worst = out.worst.max(err);
    }
    out
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

/// Random hidden widths: one to three layers of 2 to 9 units.
pub fn random_hidden(rng: &mut Rng) -> Vec<usize> {
    let depth = rng.random_range(1..=3);
    (0..depth).map(|_| rng.random_range(2..10)).collect()
}

/// State-independent actions around `centers` on the edge-following task.
pub fn bimodal_dataset(centers: &[f64], noise: f64, size: usize, seed: u64) -> TransitionDataset {
    let config = GeneratorConfig {
        custom: plas::envs::generate::CustomBehavior::Bimodal {
            centers: centers.to_vec(),
            noise,
        },
        ..GeneratorConfig::default()
    };
    generate_with(
        &ToyEnv::edge_following(),
        GeneratorKind::Custom,
        size,
        seed,
        &config,
    )
    .unwrap()
}

/// Prints a line past the test harness's output capture.
pub fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}
