// Scratch probe: hybrid drift diagnostics at n = 12800. Not part of the build.

use kanreg::experiment::{estimate_test_mse, ExperimentConfig, Architecture};
use kanreg::model::{init_model, InitOptions};
use kanreg::spline::knot_count_rule;
use kanreg::targets::{generate, GenConfig, TargetSpec};
use kanreg::train::{fit, TrainConfig};

fn main() {
    let target = TargetSpec::piecewise(2, 5).unwrap();
    let cfg = ExperimentConfig::new(target.clone());
    let n = 12800;
    let k = knot_count_rule(n, 2, 1.0);
    let data = generate(&target, &GenConfig::new(n, 0.05, 424242).unwrap()).unwrap();
    let init = InitOptions {
        degree: 3,
        inner_knots: k,
        outer_knots: k,
        smoothness: 2,
        seed: 7,
        ..InitOptions::new(Architecture::Hybrid.kinds(cfg.q))
    };
    let model = init_model(5, &init).unwrap();

    for sweeps in [5usize, 10, 20, 50, 100, 150] {
        let tcfg = TrainConfig {
            max_sweeps: sweeps,
            inner_knot_count: Some(k),
            outer_knot_count: Some(k),
            tol: 1e-12,
            ..TrainConfig::default()
        };
        let (fitted, trace) = fit(&model, &data, &tcfg).unwrap();
        let test = estimate_test_mse(&fitted, &target, 20000, 99).unwrap();
        let max_inner: f64 = fitted
            .nodes
            .iter()
            .flat_map(|nd| nd.inner.iter())
            .flat_map(|f| f.coefficients().iter().map(|c| c.abs()))
            .fold(0.0, f64::max);
        let widths: Vec<String> = fitted
            .nodes
            .iter()
            .map(|nd| format!("{:.2}", nd.normalizer.width()))
            .collect();
        println!(
            "sweeps={sweeps:4} train={:.3e} test={test:.3e} max|c_inner|={max_inner:.2e} widths={widths:?} skipped={} damped={} rises={}",
            trace.mse_per_sweep.last().unwrap(),
            trace.skipped_inner_updates,
            trace.damped_inner_updates,
            trace.normalizer_mse_increases,
        );
    }
}
