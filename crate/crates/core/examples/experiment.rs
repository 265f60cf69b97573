//! The whole pipeline from a TOML config: dataset, CVAE, PLAS, baselines and
//! diagnostics, with every artifact under `output_dir`.

use plas::experiment::{run_experiment, ExperimentConfig, RunOptions};

const CONFIG: &str = r#"
env = "edge-following"
seeds = [0]
output_dir = "target/experiment-example"
checkpoint_interval = 2000
compare = ["bc", "unconstrained"]

[dataset]
kind = "medium_expert"
size = 5000

[cvae]
steps = 2000
kl_weight = 0.005

[agent]
steps = 6000
log_interval = 1000
eval_interval = 2000

[bc]
steps = 2000
"#;

fn main() -> plas::Result<()> {
    let config = ExperimentConfig::from_toml_str(CONFIG)?;
    println!("config hash {}", config.config_hash()?);
    for run in run_experiment(&config, RunOptions::default())? {
        println!("seed {} -> {}", run.seed, run.run_dir.display());
        for l in &run.learners {
            println!(
                "  {:13} return {:7.2} +- {:5.2}  normalized {:6.1}",
                l.learner, l.return_mean, l.return_std, l.normalized_score
            );
        }
        let q = &run.plas_diagnostics.q_error;
        println!(
            "  plas Q-error mse {:.3}, positive {:.0}%",
            q.mse,
            100.0 * q.positive_error_pct
        );
    }
    Ok(())
}
