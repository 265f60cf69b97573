//! Sampled MMD between a behavior distribution and a one-parameter agent
//! family, for each default kernel.

use plas::mmd::{self, MmdScenario};

fn main() -> plas::Result<()> {
    let kernels = mmd::default_kernels();
    for mut scenario in [MmdScenario::matched_normal(), MmdScenario::bimodal_hole()] {
        scenario.n_repeats = 5;
        let points = mmd::run_scenario(&scenario, &kernels, 0)?;
        println!("{}", scenario.name);
        for k in &kernels {
            let c = mmd::curve(&points, k);
            let best = c.iter().map(|p| p.mean).fold(f64::INFINITY, f64::min);
            println!(
                "  {:22} argmin x = {:5.1}  min MMD^2 {best:.4}",
                k.to_string(),
                mmd::argmin(&c).unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}
