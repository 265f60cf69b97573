//! A small perturbation-bound sweep over two seeds.

use plas::experiment::{run_sweep, ExperimentConfig, SweepAxis};

fn main() -> plas::Result<()> {
    let base = ExperimentConfig::default().with_overrides(&[
        "output_dir=\"target/sweep-example\"",
        "seeds=[0, 1]",
        "checkpoint_interval=1000",
        "dataset.size=5000",
        "cvae.steps=2000",
        "cvae.kl_weight=0.005",
        "agent.steps=5000",
        "agent.log_interval=1000",
        "agent.eval_interval=0",
    ])?;
    let report = run_sweep(&base, SweepAxis::Epsilon, &[0.0, 0.1, 0.5])?;
    for (value, score) in report.mean_scores() {
        match score {
            Some(s) => println!("epsilon {value:4}: mean normalized score {s:6.1}"),
            None => println!("epsilon {value:4}: no completed runs"),
        }
    }
    println!("rows in {}", report.aggregate_csv().display());
    Ok(())
}
