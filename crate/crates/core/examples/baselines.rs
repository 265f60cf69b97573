//! Behavior cloning and the unconstrained off-policy learner, including the
//! nearest-neighbor projected variant, on random edge-following data.

use plas::agent::AgentConfig;
use plas::baselines::{
    bc_dataset_mse, train_bc, train_unconstrained, train_unconstrained_projected, BcConfig,
};
use plas::envs::generate::generate_dataset;
use plas::envs::{evaluate, GeneratorKind, ToyEnv};

fn main() -> plas::Result<()> {
    let env = ToyEnv::edge_following();
    let data = generate_dataset(&env, GeneratorKind::Random, 2000, 1)?;
    let states = data.states();
    let bound = data
        .transitions()
        .iter()
        .map(|t| env.value_upper_bound(&t.state, 0.99))
        .sum::<f64>()
        / data.len() as f64;

    let (bc, _) = train_bc(
        &data,
        &BcConfig {
            steps: 3000,
            ..BcConfig::default()
        },
        0,
    )?;
    println!(
        "bc: dataset mse {:.4}, return {:.2}",
        bc_dataset_mse(&bc, &data)?,
        evaluate(&env, &bc, 10, 0)?.mean
    );

    println!("mean value upper bound over dataset states: {bound:.2}");
    for steps in [5000, 25_000] {
        let config = AgentConfig {
            steps,
            eval_interval: 0,
            ..AgentConfig::default()
        };
        let free = train_unconstrained(&data, &env, &config, 1)?;
        let projected = train_unconstrained_projected(&data, &env, &config, 1)?;
        println!(
            "{steps:6} steps: mean Q unconstrained {:.2}, projected {:.2}; return unconstrained {:.2}",
            free.q_values(states.view())?.mean().unwrap_or(f64::NAN),
            projected.q_values(states.view())?.mean().unwrap_or(f64::NAN),
            evaluate(&env, &free, 10, 0)?.mean
        );
    }
    Ok(())
}
