//! Q-error against Monte-Carlo returns and distance to the data support,
//! for the latent policy and the unconstrained learner.

use std::sync::Arc;

use ndarray::Axis;
use plas::agent::{train_plas, AgentConfig, PolicyHead};
use plas::baselines::train_unconstrained;
use plas::cvae::{train_cvae, CvaeConfig};
use plas::diagnostics::{
    learner_q_error_report, support_distance, NeighborIndex, DEFAULT_NEIGHBORS,
};
use plas::envs::generate::generate_dataset;
use plas::envs::{GeneratorKind, ToyEnv};

fn main() -> plas::Result<()> {
    let env = ToyEnv::edge_following();
    let data = generate_dataset(&env, GeneratorKind::MediumExpert, 10_000, 0)?;
    let cvae_config = CvaeConfig {
        steps: 3000,
        kl_weight: 0.005,
        ..CvaeConfig::default()
    };
    let (cvae, _) = train_cvae(&data, &cvae_config, 0)?;
    let config = AgentConfig {
        steps: 10_000,
        eval_interval: 0,
        ..AgentConfig::default()
    };
    let plas = train_plas(&data, Arc::new(cvae), &env, &config, 0)?;
    let free = train_unconstrained(&data, &env, &config, 0)?;

    let threshold = NeighborIndex::new(&data).calibrate_threshold(DEFAULT_NEIGHBORS, 99.0)?;
    let picks: Vec<usize> = (0..data.len()).step_by(10).collect();
    let states = data.states().select(Axis(0), &picks);
    println!("support threshold {threshold:.4}");

    let plas_q = learner_q_error_report(&plas, &env, 10, 0)?;
    let plas_support = support_distance(
        &data,
        states.view(),
        plas.policy().act_batch(states.view())?.view(),
        DEFAULT_NEIGHBORS,
    )?;
    println!("plas          {plas_q:?}");
    println!(
        "              support median {:.4}, violations {:.3}",
        plas_support.median,
        plas_support.violation_rate(threshold)
    );

    let free_q = learner_q_error_report(&free, &env, 10, 0)?;
    let free_support = support_distance(
        &data,
        states.view(),
        free.policy().act_batch(states.view())?.view(),
        DEFAULT_NEIGHBORS,
    )?;
    println!("unconstrained {free_q:?}");
    println!(
        "              support median {:.4}, violations {:.3}",
        free_support.median,
        free_support.violation_rate(threshold)
    );
    Ok(())
}
