//! Fits the behavior CVAE to a mixed-quality dataset and compares decoded
//! actions with the dataset's own.

use ndarray::Axis;
use plas::cvae::{mean_posterior_std, sample_decoded, train_cvae, CvaeConfig};
use plas::diagnostics::{support_distance, DEFAULT_NEIGHBORS};
use plas::envs::generate::generate_dataset;
use plas::envs::{GeneratorKind, ToyEnv};
use plas::rng;

fn main() -> plas::Result<()> {
    let env = ToyEnv::edge_following();
    let data = generate_dataset(&env, GeneratorKind::MediumExpert, 5000, 0)?;
    let config = CvaeConfig {
        steps: 3000,
        kl_weight: 0.005,
        log_interval: 500,
        ..CvaeConfig::default()
    };
    let (cvae, log) = train_cvae(&data, &config, 0)?;
    for e in &log {
        println!(
            "step {:5}  recon {:.5}  kl {:.4}  total {:.5}",
            e.step, e.report.reconstruction_loss, e.report.kl_loss, e.report.total
        );
    }

    let std = mean_posterior_std(&cvae, data.states().view(), data.actions().view())?;
    println!("mean posterior std per latent dim: {std:.3}");

    let picks: Vec<usize> = (0..data.len()).step_by(10).collect();
    let states = data.states().select(Axis(0), &picks);
    let decoded = sample_decoded(&cvae, states.view(), 1, &mut rng::stream(0, 1))?;
    let d = support_distance(&data, states.view(), decoded.view(), DEFAULT_NEIGHBORS)?;
    println!(
        "prior decodes: median distance to neighbor actions {:.4}, p95 {:.4}",
        d.median, d.p95
    );
    Ok(())
}
