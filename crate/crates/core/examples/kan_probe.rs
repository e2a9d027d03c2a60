// Scratch probe for the KAN convergence protocol. Not part of the build.

use kanreg::experiment::{run_experiment, Architecture, ExperimentConfig};
use kanreg::targets::TargetSpec;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arch = if args.iter().any(|a| a == "--hybrid") {
        Architecture::Hybrid
    } else {
        Architecture::Additive
    };
    let fourier = args.iter().any(|a| a == "--fourier");

    let target = if fourier {
        TargetSpec::fourier(2).unwrap()
    } else {
        TargetSpec::piecewise(2, 5).unwrap()
    };
    let mut cfg = ExperimentConfig::new(target);
    cfg.architectures = vec![arch];
    let start = Instant::now();
    let outcome = run_experiment(&cfg, 0).unwrap();
    println!("elapsed: {:.1}s, failures: {}", start.elapsed().as_secs_f64(), outcome.failures.len());
    for s in &outcome.report.summaries {
        println!("arch={} slope={:.4} stderr={:.4}", s.arch, s.slope, s.stderr);
        for (n, m) in &s.medians {
            println!("  n={n:6} median={m:.4e}");
        }
    }
    let sweeps: Vec<usize> = outcome.report.rows.iter().map(|r| r.sweeps).collect();
    println!("sweeps: min={} max={}", sweeps.iter().min().unwrap(), sweeps.iter().max().unwrap());
}
