//! Trains the latent policy on the edge-following task and prints its
//! learning curve next to the behavior-cloning score.

use std::sync::Arc;

use plas::agent::{train_plas, AgentConfig};
use plas::baselines::{train_bc, BcConfig};
use plas::cvae::{train_cvae, CvaeConfig};
use plas::envs::generate::generate_dataset;
use plas::envs::{evaluate, GeneratorKind, ReferenceScores, ToyEnv};

fn main() -> plas::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let env = ToyEnv::edge_following();
    let refs = ReferenceScores::for_env(&env)?;
    let data = generate_dataset(&env, GeneratorKind::MediumExpert, 10_000, seed)?;

    let cvae_config = CvaeConfig {
        steps: 3000,
        kl_weight: 0.005,
        ..CvaeConfig::default()
    };
    let (cvae, _) = train_cvae(&data, &cvae_config, seed)?;
    let config = AgentConfig {
        steps: 20_000,
        eval_interval: 2000,
        log_interval: 2000,
        ..AgentConfig::default()
    };
    let agent = train_plas(&data, Arc::new(cvae), &env, &config, seed)?;
    for e in agent.log() {
        if let Some(ret) = e.eval_return_mean {
            println!(
                "step {:6}  critic loss {:8.4}  mean Q {:7.2}  return {:7.2}  normalized {:6.1}",
                e.step,
                e.critic_loss,
                e.mean_q,
                ret,
                refs.normalize(ret)?
            );
        }
    }

    let bc_config = BcConfig {
        steps: 3000,
        ..BcConfig::default()
    };
    let (bc, _) = train_bc(&data, &bc_config, seed)?;
    let bc_ret = evaluate(&env, &bc, config.eval_episodes, seed)?.mean;
    println!(
        "behavior cloning return {bc_ret:.2} (normalized {:.1})",
        refs.normalize(bc_ret)?
    );
    Ok(())
}
