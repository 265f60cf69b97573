//! Generates every dataset kind on both toy tasks and writes them to a
//! directory (first argument, default `target/datasets`).

use std::path::PathBuf;

use plas::envs::generate::generate_dataset;
use plas::envs::{GeneratorKind, ToyEnv};

fn main() -> plas::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/datasets"));
    std::fs::create_dir_all(&out).expect("create output directory");

    for env in [ToyEnv::point_mass(), ToyEnv::edge_following()] {
        for kind in GeneratorKind::ALL {
            if kind == GeneratorKind::Custom {
                continue;
            }
            let data = generate_dataset(&env, kind, 5000, 0)?;
            let rewards: Vec<f64> = data.transitions().iter().map(|t| t.reward).collect();
            let episodes = data.transitions().iter().filter(|t| t.done).count();
            let path = out.join(format!("{}-{kind}.jsonl", env.name()));
            data.write(&path)?;
            println!(
                "{:15} {:14} {:5} transitions  {:4} terminal  mean reward {:7.3}  -> {}",
                env.name(),
                kind.to_string(),
                data.len(),
                episodes,
                rewards.iter().sum::<f64>() / rewards.len() as f64,
                path.display()
            );
        }
    }
    Ok(())
}
