// Scratch probe: hybrid vs additive at n = 12800 as sweeps grow. Not part of the build.

use kanreg::experiment::{run_cell, Architecture, ExperimentConfig};
use kanreg::targets::TargetSpec;

fn main() {
    let mut cfg = ExperimentConfig::new(TargetSpec::piecewise(2, 5).unwrap());
    for sweeps in [50usize, 150, 400] {
        cfg.train.max_sweeps = sweeps;
        for arch in [Architecture::Additive, Architecture::Hybrid] {
            let mut mses = Vec::new();
            for rep in 0..3u64 {
                let row = run_cell(&cfg, arch, 12800, rep).unwrap();
                mses.push(row.test_mse);
            }
            let avg: f64 = mses.iter().sum::<f64>() / mses.len() as f64;
            println!(
                "sweeps={sweeps:4} arch={:_<8} test_mse = {:?} (mean {avg:.3e})",
                arch.as_str(),
                mses.iter().map(|m| format!("{m:.2e}")).collect::<Vec<_>>()
            );
        }
    }
}
