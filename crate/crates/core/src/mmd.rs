//! Sampled-MMD simulations between a behavior distribution and a
//! parameterized agent distribution.
//!
//! Two scenarios ship:
//!
//! 1. behavior `N(0, 1)`, agent `N(0, x)` with `x` the standard deviation,
//!    swept over `0.1..=3.0`;
//! 2. behavior uniform on `[-2, -1] ∪ [1, 2]`, agent `N(x, 0.5)`, swept over
//!    `-3.0..=3.0`.
//!
//! Every repeat draws one behavior sample set and one standard-normal set
//! `e`; the agent samples at sweep value `x` are `loc(x) + scale(x) * e`.
//! Reusing the same draws across the sweep and across kernels (common
//! random numbers) makes each curve smooth in `x`, so its argmin reflects
//! the shape of the loss rather than sampling noise.

use std::fmt::{self, Write as _};

use ndarray::ArrayView2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Laplacian,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Laplacian => "laplacian",
        })
    }
}

/// `gaussian: exp(-|x - y|^2 / (2 sigma^2))`, `laplacian: exp(-|x - y|_1 / sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub sigma: f64,
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(sigma={})", self.family, self.sigma)
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma: f64) -> Result<Self> {
        let spec = KernelSpec { family, sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, sigma)
    }

    pub fn laplacian(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Laplacian, sigma)
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(
                "sigma",
                format!("{} must be positive", self.sigma),
            ));
        }
        Ok(())
    }

    /// Kernel value for two points of equal dimension.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.validate()?;
        if x.len() != y.len() {
            return Err(Error::shape("kernel argument", x.len(), y.len()));
        }
        let k = match self.family {
            KernelFamily::Gaussian => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * self.sigma * self.sigma)).exp()
            }
            KernelFamily::Laplacian => {
                let d1: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
                (-d1 / self.sigma).exp()
            }
        };
        Ok(k)
    }

    /// Kernel as a function of the scalar difference `d`, for 1-d samples.
    fn scalar(&self) -> impl Fn(f64) -> f64 + Sync {
        let (family, sigma) = (self.family, self.sigma);
        let g = 1.0 / (2.0 * sigma * sigma);
        let l = 1.0 / sigma;
        move |d: f64| match family {
            KernelFamily::Gaussian => (-d * d * g).exp(),
            KernelFamily::Laplacian => (-d.abs() * l).exp(),
        }
    }
}

/// Gaussian and Laplacian kernels at sigma 2, 3, 5 and 10.
///
/// Bandwidths of 1 and below behave differently on the bimodal scenario:
/// their curves do bottom out at the mode centers. See [`narrow_kernels`].
pub fn default_kernels() -> Vec<KernelSpec> {
    kernel_grid(&[2.0, 3.0, 5.0, 10.0])
}

/// Gaussian and Laplacian kernels at sigma 0.1 and 1.
pub fn narrow_kernels() -> Vec<KernelSpec> {
    kernel_grid(&[0.1, 1.0])
}

fn kernel_grid(sigmas: &[f64]) -> Vec<KernelSpec> {
    let mut out = Vec::new();
    for family in [KernelFamily::Gaussian, KernelFamily::Laplacian] {
        for &sigma in sigmas {
            out.push(KernelSpec { family, sigma });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Biased estimate including the diagonal terms; never negative.
    #[default]
    VStatistic,
    /// Unbiased estimate excluding the diagonal terms; may dip below zero.
    UStatistic,
}

/// Squared MMD estimate between two sample sets (rows are samples).
pub fn sampled_mmd(
    spec: &KernelSpec,
    p: ArrayView2<f64>,
    q: ArrayView2<f64>,
    estimator: Estimator,
) -> Result<f64> {
    spec.validate()?;
    if p.nrows() == 0 || q.nrows() == 0 {
        return Err(Error::invalid("samples", "sample sets must be non-empty"));
    }
    if estimator == Estimator::UStatistic && (p.nrows() < 2 || q.nrows() < 2) {
        return Err(Error::invalid(
            "samples",
            "the unbiased estimate needs two samples per set",
        ));
    }
    if p.ncols() != q.ncols() {
        return Err(Error::shape("sample dimension", p.ncols(), q.ncols()));
    }
    let within = |x: ArrayView2<f64>| -> Result<f64> {
        let n = x.nrows();
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += spec.eval(
                    x.row(i).as_slice().unwrap_or(&x.row(i).to_vec()),
                    &x.row(j).to_vec(),
                )?;
            }
        }
        Ok(match estimator {
            Estimator::VStatistic => (2.0 * off + n as f64) / (n * n) as f64,
            Estimator::UStatistic => 2.0 * off / (n * (n - 1)) as f64,
        })
    };
    let mut cross = 0.0;
    for a in p.rows() {
        let a = a.to_vec();
        for b in q.rows() {
            cross += spec.eval(&a, &b.to_vec())?;
        }
    }
    let cross = cross / (p.nrows() * q.nrows()) as f64;
    Ok(within(p)? - 2.0 * cross + within(q)?)
}

/// Mean kernel value over all pairs `(x_i, x_j)`, diagonal included when
/// `with_diagonal`.
fn within_1d<K: Fn(f64) -> f64>(k: &K, x: &[f64], with_diagonal: bool) -> f64 {
    let n = x.len();
    let mut off = 0.0;
    for i in 0..n {
        let xi = x[i];
        for &xj in &x[i + 1..] {
            off += k(xi - xj);
        }
    }
    if with_diagonal {
        (2.0 * off + n as f64) / (n * n) as f64
    } else {
        2.0 * off / (n * (n - 1)) as f64
    }
}

fn cross_1d<K: Fn(f64) -> f64>(k: &K, p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for &a in p {
        for &b in q {
            s += k(a - b);
        }
    }
    s / (p.len() * q.len()) as f64
}

/// Fast squared-MMD estimate for scalar samples.
pub fn sampled_mmd_1d(
    spec: &KernelSpec,
    p: &[f64],
    q: &[f64],
    estimator: Estimator,
) -> Result<f64> {
    let pv = ArrayView2::from_shape((p.len(), 1), p).expect("column view");
    let qv = ArrayView2::from_shape((q.len(), 1), q).expect("column view");
    if p.len() < 2 || q.len() < 2 {
        return sampled_mmd(spec, pv, qv, estimator);
    }
    spec.validate()?;
    let k = spec.scalar();
    let diag = estimator == Estimator::VStatistic;
    Ok(within_1d(&k, p, diag) - 2.0 * cross_1d(&k, p, q) + within_1d(&k, q, diag))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorSampler {
    StdNormal,
    /// Uniform on `[-outer, -inner] ∪ [inner, outer]`.
    UniformBimodal {
        inner: f64,
        outer: f64,
    },
}

impl BehaviorSampler {
    fn sample(&self, rng: &mut rng::Rng) -> f64 {
        match *self {
            BehaviorSampler::StdNormal => StandardNormal.sample(rng),
            BehaviorSampler::UniformBimodal { inner, outer } => {
                let mag = rng.random_range(inner..=outer);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentFamily {
    /// `N(mean, x)` with `x` the standard deviation.
    ScaledNormal { mean: f64 },
    /// `N(x, std)`.
    ShiftedNormal { std: f64 },
}

impl AgentFamily {
    fn loc_scale(&self, x: f64) -> (f64, f64) {
        match *self {
            AgentFamily::ScaledNormal { mean } => (mean, x),
            AgentFamily::ShiftedNormal { std } => (x, std),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdScenario {
    pub name: String,
    pub behavior: BehaviorSampler,
    pub agent: AgentFamily,
    pub sweep: Vec<f64>,
    pub n_samples: usize,
    pub n_repeats: usize,
    #[serde(default)]
    pub estimator: Estimator,
}

/// `start + i * step` for `i = 0..=count`, computed from integers to avoid drift.
fn grid(start_tenths: i64, end_tenths: i64) -> Vec<f64> {
    (start_tenths..=end_tenths)
        .map(|i| i as f64 / 10.0)
        .collect()
}

impl MmdScenario {
    /// Behavior `N(0, 1)`, agent `N(0, x)`, `x` in `0.1..=3.0`.
    pub fn matched_normal() -> Self {
        MmdScenario {
            name: "matched-normal".into(),
            behavior: BehaviorSampler::StdNormal,
            agent: AgentFamily::ScaledNormal { mean: 0.0 },
            sweep: grid(1, 30),
            n_samples: 500,
            n_repeats: 20,
            estimator: Estimator::VStatistic,
        }
    }

    /// Behavior uniform on `[-2, -1] ∪ [1, 2]`, agent `N(x, 0.5)`, `x` in `-3..=3`.
    pub fn bimodal_hole() -> Self {
        MmdScenario {
            name: "bimodal-hole".into(),
            behavior: BehaviorSampler::UniformBimodal {
                inner: 1.0,
                outer: 2.0,
            },
            agent: AgentFamily::ShiftedNormal { std: 0.5 },
            sweep: grid(-30, 30),
            n_samples: 500,
            n_repeats: 20,
            estimator: Estimator::VStatistic,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "matched-normal" | "1" => Ok(Self::matched_normal()),
            "bimodal-hole" | "2" => Ok(Self::bimodal_hole()),
            _ => Err(Error::Unknown {
                what: "mmd scenario",
                name: name.into(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() || self.sweep.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(
                "sweep",
                "need at least one finite sweep value",
            ));
        }
        if self.n_samples < 2 {
            return Err(Error::invalid("n_samples", "must be at least 2"));
        }
        if self.n_repeats == 0 {
            return Err(Error::invalid("n_repeats", "must be positive"));
        }
        if let AgentFamily::ScaledNormal { .. } = self.agent {
            if self.sweep.iter().any(|&x| x < 0.0) {
                return Err(Error::invalid("sweep", "standard deviations must be >= 0"));
            }
        }
        if let AgentFamily::ShiftedNormal { std } = self.agent {
            if std.is_nan() || std < 0.0 {
                return Err(Error::invalid("agent.std", "must be >= 0"));
            }
        }
        if let BehaviorSampler::UniformBimodal { inner, outer } = self.behavior {
            if !(0.0 <= inner && inner < outer) {
                return Err(Error::invalid("behavior", "need 0 <= inner < outer"));
            }
        }
        Ok(())
    }
}

/// One point of a loss curve: mean and sample std over repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub kernel: KernelFamily,
    pub sigma: f64,
    pub x: f64,
    pub mean: f64,
    pub std: f64,
}

/// Runs every `(kernel, x, repeat)` cell and averages over repeats.
///
/// Output is ordered by kernel (input order), then sweep value.
pub fn run_scenario(
    scenario: &MmdScenario,
    kernels: &[KernelSpec],
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    scenario.validate()?;
    for k in kernels {
        k.validate()?;
    }
    let n = scenario.n_samples;
    let repeats: Vec<(Vec<f64>, Vec<f64>)> = (0..scenario.n_repeats)
        .map(|r| {
            let mut b = rng::indexed_stream(seed, streams::MMD_BEHAVIOR, r as u64);
            let mut e = rng::indexed_stream(seed, streams::MMD_AGENT, r as u64);
            let behavior = (0..n).map(|_| scenario.behavior.sample(&mut b)).collect();
            let noise = (0..n).map(|_| StandardNormal.sample(&mut e)).collect();
            (behavior, noise)
        })
        .collect();
    let diag = scenario.estimator == Estimator::VStatistic;

    let per_kernel: Vec<Vec<CurvePoint>> = kernels
        .par_iter()
        .map(|spec| {
            let k = spec.scalar();
            // Per repeat: the behavior-behavior term, and the agent-agent term
            // when the agent's scale does not move with x.
            let fixed: Vec<(f64, Option<f64>)> = repeats
                .iter()
                .map(|(p, e)| {
                    let pp = within_1d(&k, p, diag);
                    let qq = match scenario.agent {
                        AgentFamily::ShiftedNormal { std } => {
                            let q: Vec<f64> = e.iter().map(|v| std * v).collect();
                            Some(within_1d(&k, &q, diag))
                        }
                        AgentFamily::ScaledNormal { .. } => None,
                    };
                    (pp, qq)
                })
                .collect();
            scenario
                .sweep
                .par_iter()
                .map(|&x| {
                    let (loc, scale) = scenario.agent.loc_scale(x);
                    let values: Vec<f64> = repeats
                        .iter()
                        .zip(&fixed)
                        .map(|((p, e), (pp, qq))| {
                            let q: Vec<f64> = e.iter().map(|v| loc + scale * v).collect();
                            let qq = qq.unwrap_or_else(|| within_1d(&k, &q, diag));
                            pp - 2.0 * cross_1d(&k, p, &q) + qq
                        })
                        .collect();
                    let (mean, std) = mean_std(&values);
                    CurvePoint {
                        kernel: spec.family,
                        sigma: spec.sigma,
                        x,
                        mean,
                        std,
                    }
                })
                .collect()
        })
        .collect();
    Ok(per_kernel.into_iter().flatten().collect())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// The points of one kernel's curve, in sweep order.
pub fn curve<'a>(points: &'a [CurvePoint], spec: &KernelSpec) -> Vec<&'a CurvePoint> {
    points
        .iter()
        .filter(|p| p.kernel == spec.family && p.sigma == spec.sigma)
        .collect()
}

/// Sweep value with the smallest mean loss (first one on ties).
pub fn argmin(curve: &[&CurvePoint]) -> Option<f64> {
    curve
        .iter()
        .min_by(|a, b| a.mean.total_cmp(&b.mean))
        .map(|p| p.x)
}

/// True when the curve's minima sit at the two mode centers `±center` and
/// nowhere else: the lowest point on each side of zero lies within `tol`
/// of `∓center` / `±center`, and the global minimum is one of them.
pub fn minima_exclusively_at(curve: &[&CurvePoint], center: f64, tol: f64) -> bool {
    let side = |pred: &dyn Fn(f64) -> bool| {
        curve
            .iter()
            .filter(|p| pred(p.x))
            .min_by(|a, b| a.mean.total_cmp(&b.mean))
            .copied()
    };
    let (Some(left), Some(right)) = (side(&|x| x < 0.0), side(&|x| x > 0.0)) else {
        return false;
    };
    let global = curve
        .iter()
        .min_by(|a, b| a.mean.total_cmp(&b.mean))
        .map(|p| p.mean);
    let eps = 1e-9;
    (left.x + center).abs() <= tol + eps
        && (right.x - center).abs() <= tol + eps
        && global.is_some_and(|g| g >= left.mean.min(right.mean))
}

/// CSV with header `kernel,sigma,x,mean,std`.
pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("kernel,sigma,x,mean,std\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{},{}", p.kernel, p.sigma, p.x, p.mean, p.std);
    }
    out
}

/// Whitespace-separated long format, one block per kernel separated by two
/// blank lines (addressable with gnuplot's `index`).
pub fn gnuplot_long(points: &[CurvePoint]) -> String {
    let mut out = String::new();
    let mut current: Option<(KernelFamily, f64)> = None;
    for p in points {
        if current != Some((p.kernel, p.sigma)) {
            if current.is_some() {
                out.push_str("\n\n");
            }
            let _ = writeln!(out, "# {} sigma={}\n# x mean std", p.kernel, p.sigma);
            current = Some((p.kernel, p.sigma));
        }
        let _ = writeln!(out, "{} {} {}", p.x, p.mean, p.std);
    }
    out
}
