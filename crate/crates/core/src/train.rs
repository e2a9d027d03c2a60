//! Least-squares backfitting for KAN models: cyclic node-wise partial
//! residuals, exact outer-spline refits, and linearized (Gauss-Newton) inner
//! refits with a derivative floor. Deterministic given (model, data, config).

use crate::model::{AggregationKind, KanModel, KanNode, ModelError, Normalizer};
use crate::spline::{fit_least_squares, knot_count_rule, KnotVector, SplineError, SplineFunction};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dataset dimension {data} does not match model dimension {model}")]
    DimensionMismatch { model: usize, data: usize },
    #[error("dataset must contain at least one sample")]
    EmptyData,
    #[error("input value {value} at sample {row} is outside [0, 1]")]
    InputOutOfRange { row: usize, value: f64 },
    #[error("dataset contains a non-finite value at sample {0}")]
    NonFiniteData(usize),
    #[error("inputs have {xs} values, expected n*d = {expected}")]
    ShapeMismatch { xs: usize, expected: usize },
    #[error("node index {index} out of range for {count} nodes")]
    NodeIndex { index: usize, count: usize },
    #[error("coordinate index {index} out of range for dimension {dimension}")]
    CoordinateIndex { index: usize, dimension: usize },
    #[error("invalid training config: {0}")]
    BadConfig(&'static str),
    #[error("training aborted at sweep {sweep}, node {node}: {source}")]
    Aborted {
        sweep: usize,
        node: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error("training produced a non-finite training MSE at sweep {0}")]
    NonFiniteMse(usize),
}

/// Regression sample set: n inputs in [0,1]^d stored row-major plus responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dimension: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    pub noise_sigma: Option<f64>,
}

impl Dataset {
    pub fn new(
        dimension: usize,
        xs: Vec<f64>,
        ys: Vec<f64>,
        noise_sigma: Option<f64>,
    ) -> Result<Self, TrainError> {
        if ys.is_empty() {
            return Err(TrainError::EmptyData);
        }
        if xs.len() != ys.len() * dimension {
            return Err(TrainError::ShapeMismatch {
                xs: xs.len(),
                expected: ys.len() * dimension,
            });
        }
        for (i, &v) in xs.iter().enumerate() {
            if !v.is_finite() {
                return Err(TrainError::NonFiniteData(i / dimension));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(TrainError::InputOutOfRange {
                    row: i / dimension,
                    value: v,
                });
            }
        }
        if let Some(i) = ys.iter().position(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteData(i));
        }
        Ok(Self {
            dimension,
            xs,
            ys,
            noise_sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.row(i)[j]).collect()
    }
}

/// Backfitting controls. Knot counts left as None default to
/// knot_count_rule(n, r) with the model's smoothness hint.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub max_sweeps: usize,
    pub tol: f64,
    pub ridge: f64,
    pub deriv_floor: f64,
    pub inner_knot_count: Option<usize>,
    pub outer_knot_count: Option<usize>,
    pub degree: usize,
    pub seed: u64,
    /// Keep every normalizer fixed during fitting. Sweep-wise MSE monotonicity
    /// is only guaranteed in this mode.
    pub freeze_normalizers: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 50,
            tol: 1e-6,
            ridge: 1e-8,
            deriv_floor: 1e-3,
            inner_knot_count: None,
            outer_knot_count: None,
            degree: 3,
            seed: 0,
            freeze_normalizers: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.max_sweeps == 0 {
            return Err(TrainError::BadConfig("max_sweeps must be at least 1"));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(TrainError::BadConfig("tol must be positive and finite"));
        }
        if self.ridge < 0.0 || !self.ridge.is_finite() {
            return Err(TrainError::BadConfig("ridge must be non-negative and finite"));
        }
        if !(self.deriv_floor > 0.0) || !self.deriv_floor.is_finite() {
            return Err(TrainError::BadConfig("deriv_floor must be positive and finite"));
        }
        if self.degree == 0 {
            return Err(TrainError::BadConfig(
                "degree must be at least 1 (inner updates need outer derivatives)",
            ));
        }
        Ok(())
    }
}

/// Per-sweep training record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub mse_per_sweep: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Inner updates rejected by the step guard (kept the previous spline).
    pub skipped_inner_updates: usize,
    /// Inner updates accepted only after step halving.
    pub damped_inner_updates: usize,
    /// Sweeps whose MSE rose versus the previous one; possible only through
    /// normalizer refreshes, logged rather than fatal.
    pub normalizer_mse_increases: usize,
    /// Spline fits that fell back to the automatic ridge.
    pub ridge_fallbacks: usize,
}

/// Mean squared training residual of the model on the data.
pub fn training_mse(model: &KanModel, data: &Dataset) -> Result<f64, TrainError> {
    check_compat(model, data)?;
    let mut acc = 0.0;
    for i in 0..data.len() {
        let r = data.ys()[i] - model.forward(data.row(i))?;
        acc += r * r;
    }
    Ok(acc / data.len() as f64)
}

/// R_q = Y - sum of every other node's output.
pub fn partial_residual(model: &KanModel, data: &Dataset, q: usize) -> Result<Vec<f64>, TrainError> {
    check_compat(model, data)?;
    if q >= model.nodes.len() {
        return Err(TrainError::NodeIndex {
            index: q,
            count: model.nodes.len(),
        });
    }
    let mut residual = data.ys().to_vec();
    for (idx, node) in model.nodes.iter().enumerate() {
        if idx == q {
            continue;
        }
        for (i, r) in residual.iter_mut().enumerate() {
            *r -= node.forward(data.row(i))?;
        }
    }
    Ok(residual)
}

fn check_compat(model: &KanModel, data: &Dataset) -> Result<(), TrainError> {
    if model.dimension != data.dimension() {
        return Err(TrainError::DimensionMismatch {
            model: model.dimension,
            data: data.dimension(),
        });
    }
    Ok(())
}

/// Outcome of one linearized inner refit.
#[derive(Debug, Clone)]
pub enum InnerUpdate {
    Candidate(SplineFunction),
    /// Every Gauss-Newton weight vanished; the current spline is kept.
    SkippedAllZeroWeights,
}

fn sign_preserving_floor(t: f64, floor: f64) -> f64 {
    if t >= 0.0 {
        t.max(floor)
    } else {
        t.min(-floor)
    }
}

/// Gauss-Newton coordinate step for inner spline j of a node: weighted
/// univariate least squares of the linearized pseudo-response against x_j.
///
/// With u = T_q(x), v = normalizer(u), s = g'(v)/(hi-lo) and a = dT_q/dpsi_j
/// (1 for additive nodes, the clamped partner product for multiplicative
/// ones), the weights are (s*a)^2 floored at deriv_floor^2 and the
/// pseudo-response is psi_j(x_j) + (R - g(v)) / floor(s*a).
pub fn inner_update(
    node: &KanNode,
    data: &Dataset,
    residual: &[f64],
    j: usize,
    knots: &KnotVector,
    cfg: &TrainConfig,
) -> Result<InnerUpdate, TrainError> {
    let d = node.inner.len();
    if j >= d {
        return Err(TrainError::CoordinateIndex {
            index: j,
            dimension: d,
        });
    }
    let n = data.len();
    debug_assert_eq!(residual.len(), n);
    let outer_deriv = node.outer.derivative()?;
    let width = node.normalizer.width();
    let floor = cfg.deriv_floor;

    let mut xs = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    for i in 0..n {
        let x = data.row(i);
        let u = node.transform(x)?;
        let v = node.normalizer.apply(u);
        let s = outer_deriv.eval(v)? / width;
        let a = match node.kind {
            AggregationKind::Additive => 1.0,
            AggregationKind::Multiplicative => {
                let m = node.output_bound;
                let mut prod = 1.0;
                for (l, f) in node.inner.iter().enumerate() {
                    if l != j {
                        prod *= f.eval(x[l])?.clamp(-m, m);
                    }
                }
                prod
            }
        };
        let raw = s * a;
        let w = (raw * raw).max(floor * floor);
        let z = node.inner[j].eval(x[j])?
            + (residual[i] - node.outer.eval(v)?) / sign_preserving_floor(raw, floor);
        xs.push(x[j]);
        zs.push(z);
        ws.push(w);
    }
    if ws.iter().all(|&w| w == 0.0) {
        return Ok(InnerUpdate::SkippedAllZeroWeights);
    }
    let fit = fit_least_squares(&xs, &zs, Some(&ws), knots, cfg.ridge)?;
    Ok(InnerUpdate::Candidate(fit.spline))
}

fn node_transform_values(node: &KanNode, data: &Dataset) -> Result<Vec<f64>, TrainError> {
    (0..data.len())
        .map(|i| node.transform(data.row(i)).map_err(TrainError::from))
        .collect()
}

/// Mean of (R - node_forward)^2; equals the full-model training MSE when R is
/// the node's partial residual.
fn node_residual_mse(node: &KanNode, data: &Dataset, residual: &[f64]) -> Result<f64, TrainError> {
    let mut acc = 0.0;
    for i in 0..data.len() {
        let r = residual[i] - node.forward(data.row(i))?;
        acc += r * r;
    }
    Ok(acc / data.len() as f64)
}

fn blend(old: &SplineFunction, new: &SplineFunction, step: f64) -> Option<SplineFunction> {
    if old.basis() != new.basis() {
        return None;
    }
    let coeffs = old
        .coefficients()
        .iter()
        .zip(new.coefficients())
        .map(|(o, n)| o + step * (n - o))
        .collect();
    SplineFunction::new(old.basis().clone(), coeffs).ok()
}

/// Backfitting step lengths tried in order; the first non-increasing one wins.
const STEP_SCHEDULE: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

/// Fits the model by cyclic least-squares backfitting.
///
/// Each sweep visits nodes in index order and, per node: computes the partial
/// residual, refreshes the normalizer from the current T_q range (unless
/// frozen), refits the outer spline by exact least squares, then refits each
/// inner spline j = 1..d with the linearized step, accepting a candidate only
/// if the training MSE does not increase (step-halved otherwise, kept as-is
/// when every damped step fails). Stops when the relative training-MSE
/// improvement drops below `tol` or after `max_sweeps` sweeps.
pub fn fit(
    model: &KanModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(KanModel, FitTrace), TrainError> {
    check_compat(model, data)?;
    cfg.validate()?;
    model.validate()?;

    let n = data.len();
    let r = model.smoothness_hint.max(1);
    let inner_knots = KnotVector::clamped_uniform(
        cfg.inner_knot_count.unwrap_or_else(|| knot_count_rule(n, r, 1.0)),
        cfg.degree,
    );
    let outer_knots = KnotVector::clamped_uniform(
        cfg.outer_knot_count.unwrap_or_else(|| knot_count_rule(n, r, 1.0)),
        cfg.degree,
    );

    let mut m = model.clone();
    let mut trace = FitTrace::default();
    let mut prev_mse = training_mse(&m, data)?;

    for sweep in 0..cfg.max_sweeps {
        for q in 0..m.nodes.len() {
            sweep_node(&mut m, data, cfg, q, &inner_knots, &outer_knots, &mut trace).map_err(
                |source| TrainError::Aborted {
                    sweep,
                    node: q,
                    source: Box::new(source),
                },
            )?;
        }
        let mse = training_mse(&m, data)?;
        if !mse.is_finite() {
            return Err(TrainError::NonFiniteMse(sweep));
        }
        if mse > prev_mse * (1.0 + 1e-12) {
            trace.normalizer_mse_increases += 1;
        }
        trace.mse_per_sweep.push(mse);
        let improvement = if prev_mse > 0.0 {
            (prev_mse - mse) / prev_mse
        } else {
            0.0
        };
        prev_mse = mse;
        // A transient MSE increase (normalizer refresh) is not convergence;
        // stop only on a settled plateau.
        if improvement.abs() < cfg.tol {
            trace.converged = true;
            break;
        }
    }
    trace.sweeps = trace.mse_per_sweep.len();
    Ok((m, trace))
}

fn sweep_node(
    m: &mut KanModel,
    data: &Dataset,
    cfg: &TrainConfig,
    q: usize,
    inner_knots: &KnotVector,
    outer_knots: &KnotVector,
    trace: &mut FitTrace,
) -> Result<(), TrainError> {
    let residual = partial_residual(m, data, q)?;

    if !cfg.freeze_normalizers {
        let t_vals = node_transform_values(&m.nodes[q], data)?;
        m.nodes[q].normalizer = Normalizer::from_observed(&t_vals);
    }

    // Outer refit: exact weighted LS of the partial residual on the
    // normalized aggregation values.
    let t_vals = node_transform_values(&m.nodes[q], data)?;
    let v_vals: Vec<f64> = t_vals.iter().map(|&u| m.nodes[q].normalizer.apply(u)).collect();
    let outer_fit = fit_least_squares(&v_vals, &residual, None, outer_knots, cfg.ridge)?;
    if outer_fit.ridge_fallback {
        trace.ridge_fallbacks += 1;
    }
    m.nodes[q].outer = outer_fit.spline;

    let mut node_mse = node_residual_mse(&m.nodes[q], data, &residual)?;
    for j in 0..m.dimension {
        let candidate = match inner_update(&m.nodes[q], data, &residual, j, inner_knots, cfg)? {
            InnerUpdate::Candidate(c) => c,
            InnerUpdate::SkippedAllZeroWeights => {
                trace.skipped_inner_updates += 1;
                continue;
            }
        };
        let old = m.nodes[q].inner[j].clone();
        let mut accepted = false;
        for &step in &STEP_SCHEDULE {
            let trial = if step == 1.0 {
                Some(candidate.clone())
            } else {
                blend(&old, &candidate, step)
            };
            let Some(trial) = trial else { break };
            m.nodes[q].inner[j] = trial;
            let trial_mse = node_residual_mse(&m.nodes[q], data, &residual)?;
            if trial_mse <= node_mse * (1.0 + 1e-12) {
                node_mse = trial_mse;
                accepted = true;
                if step < 1.0 {
                    trace.damped_inner_updates += 1;
                }
                break;
            }
        }
        if !accepted {
            m.nodes[q].inner[j] = old;
            trace.skipped_inner_updates += 1;
        }
    }

    if !cfg.freeze_normalizers {
        let t_vals = node_transform_values(&m.nodes[q], data)?;
        m.nodes[q].normalizer = Normalizer::from_observed(&t_vals);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{hybrid_allocation, init_model, InitOptions};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn uniform_inputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
        (0..n * d).map(|_| rng.gen()).collect()
    }

    fn dataset_from_model(model: &KanModel, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = model.dimension;
        let xs = uniform_inputs(&mut rng, n, d);
        let ys = (0..n)
            .map(|i| model.forward(&xs[i * d..(i + 1) * d]).unwrap())
            .collect();
        Dataset::new(d, xs, ys, None).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(
            Dataset::new(1, vec![], vec![], None),
            Err(TrainError::EmptyData)
        ));
        assert!(matches!(
            Dataset::new(2, vec![0.5; 3], vec![1.0], None),
            Err(TrainError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            Dataset::new(1, vec![1.5], vec![1.0], None),
            Err(TrainError::InputOutOfRange { row: 0, .. })
        ));
        assert!(matches!(
            Dataset::new(1, vec![0.5], vec![f64::NAN], None),
            Err(TrainError::NonFiniteData(0))
        ));
    }

    #[test]
    fn training_mse_examples() {
        let mut opts = InitOptions::new(vec![AggregationKind::Additive]);
        opts.init_noise = 0.0;
        let model = init_model(2, &opts).unwrap();
        let data = dataset_from_model(&model, 50, 1);
        assert!(training_mse(&model, &data).unwrap() < 1e-20);

        // Zero model against Y identically 1 scores exactly 1.
        let mut zero = model.clone();
        for node in &mut zero.nodes {
            zero_out(node);
        }
        let ones = Dataset::new(2, data.row(0).to_vec().repeat(1), vec![1.0], None);
        drop(ones);
        let data1 = Dataset::new(2, vec![0.25, 0.75, 0.5, 0.5], vec![1.0, 1.0], None).unwrap();
        assert_abs_diff_eq!(training_mse(&zero, &data1).unwrap(), 1.0, epsilon = 1e-15);

        // Independent scalar recomputation.
        let model = init_model(
            2,
            &InitOptions {
                seed: 3,
                ..InitOptions::new(hybrid_allocation(2))
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40;
        let xs = uniform_inputs(&mut rng, n, 2);
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = Dataset::new(2, xs, ys, None).unwrap();
        let got = training_mse(&model, &data).unwrap();
        let mut want = 0.0;
        for i in 0..n {
            let diff = data.ys()[i] - model.forward(data.row(i)).unwrap();
            want += diff * diff;
        }
        want /= n as f64;
        assert_abs_diff_eq!(got, want, epsilon = 1e-15);
    }

    fn zero_out(node: &mut KanNode) {
        for f in &mut node.inner {
            *f = SplineFunction::zero(f.basis().clone());
        }
        node.outer = SplineFunction::zero(node.outer.basis().clone());
    }

    #[test]
    fn partial_residual_identities() {
        let opts = InitOptions {
            seed: 5,
            ..InitOptions::new(vec![AggregationKind::Additive])
        };
        let model = init_model(2, &opts).unwrap();
        let data = dataset_from_model(&model, 30, 2);
        // Q = 1: the partial residual is Y itself.
        let r = partial_residual(&model, &data, 0).unwrap();
        for (a, b) in r.iter().zip(data.ys()) {
            assert_eq!(a, b);
        }

        // A second node that outputs zero leaves R_1 = Y.
        let mut two = init_model(
            2,
            &InitOptions {
                seed: 5,
                ..InitOptions::new(vec![AggregationKind::Additive, AggregationKind::Additive])
            },
        )
        .unwrap();
        zero_out(&mut two.nodes[1]);
        let data2 = dataset_from_model(&two, 25, 3);
        let r = partial_residual(&two, &data2, 0).unwrap();
        for (a, b) in r.iter().zip(data2.ys()) {
            assert_eq!(a, b);
        }

        // R_q plus the other nodes' outputs is exactly Y.
        let three = init_model(
            3,
            &InitOptions {
                seed: 6,
                ..InitOptions::new(hybrid_allocation(3))
            },
        )
        .unwrap();
        let data3 = dataset_from_model(&three, 20, 4);
        for q in 0..3 {
            let r = partial_residual(&three, &data3, q).unwrap();
            for i in 0..data3.len() {
                let mut sum = r[i];
                for (idx, node) in three.nodes.iter().enumerate() {
                    if idx != q {
                        sum += node.forward(data3.row(i)).unwrap();
                    }
                }
                assert_abs_diff_eq!(sum, data3.ys()[i], epsilon = 1e-12);
            }
        }

        assert!(matches!(
            partial_residual(&three, &data3, 7),
            Err(TrainError::NodeIndex { index: 7, count: 3 })
        ));
    }

    #[test]
    fn inner_update_reduces_to_plain_least_squares() {
        // Q=1, d=1, additive, identity outer, identity normalizer: the
        // Gauss-Newton step must coincide with a direct univariate LS fit.
        let mut opts = InitOptions::new(vec![AggregationKind::Additive]);
        opts.init_noise = 0.0;
        opts.inner_knots = 4;
        opts.outer_knots = 4;
        let model = init_model(1, &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 300;
        let xs = uniform_inputs(&mut rng, n, 1);
        let ys: Vec<f64> = xs.iter().map(|&x| (2.5 * x).sin() + 0.2).collect();
        let data = Dataset::new(1, xs.clone(), ys.clone(), None).unwrap();
        let cfg = TrainConfig::default();
        let knots = KnotVector::clamped_uniform(4, 3);

        let residual = data.ys().to_vec();
        let update = inner_update(&model.nodes[0], &data, &residual, 0, &knots, &cfg).unwrap();
        let InnerUpdate::Candidate(candidate) = update else {
            panic!("expected a candidate");
        };
        let direct = fit_least_squares(&xs, &ys, None, &knots, cfg.ridge).unwrap();
        for (a, b) in candidate.coefficients().iter().zip(direct.spline.coefficients()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn inner_update_pseudo_response_chain_rule() {
        // Outer g with g' = 2 everywhere (g(v) = 2v - 0.3), identity
        // normalizer: pseudo-responses are psi(x) + (R - g(v)) / 2, which the
        // fitted candidate reproduces through the LS fit of that exact vector.
        let mut opts = InitOptions::new(vec![AggregationKind::Additive]);
        opts.init_noise = 0.0;
        opts.inner_knots = 3;
        opts.outer_knots = 3;
        let mut model = init_model(1, &opts).unwrap();
        let outer_basis = model.nodes[0].outer.basis().clone();
        let coeffs: Vec<f64> = outer_basis.greville().iter().map(|g| 2.0 * g - 0.3).collect();
        model.nodes[0].outer = SplineFunction::new(outer_basis, coeffs).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 200;
        let xs = uniform_inputs(&mut rng, n, 1);
        let ys: Vec<f64> = xs.iter().map(|&x| x * x).collect();
        let data = Dataset::new(1, xs.clone(), ys.clone(), None).unwrap();
        let cfg = TrainConfig::default();
        let knots = KnotVector::clamped_uniform(3, 3);
        let residual = data.ys().to_vec();

        let InnerUpdate::Candidate(candidate) =
            inner_update(&model.nodes[0], &data, &residual, 0, &knots, &cfg).unwrap()
        else {
            panic!("expected candidate");
        };

        let node = &model.nodes[0];
        let zs: Vec<f64> = (0..n)
            .map(|i| {
                let x = xs[i];
                let psi = node.inner[0].eval(x).unwrap();
                let v = node.normalizer.apply(psi);
                psi + (residual[i] - node.outer.eval(v).unwrap()) / 2.0
            })
            .collect();
        let ws = vec![4.0; n];
        let direct = fit_least_squares(&xs, &zs, Some(&ws), &knots, cfg.ridge).unwrap();
        for (a, b) in candidate.coefficients().iter().zip(direct.spline.coefficients()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn degenerate_multiplicative_partner_floors_weights() {
        // psi_2 identically zero makes a_i = 0 for j = 0; the update must
        // still produce a candidate (floored weights) and fitting must leave
        // the training MSE unchanged since T stays zero.
        let mut opts = InitOptions::new(vec![AggregationKind::Multiplicative]);
        opts.init_noise = 0.0;
        let mut model = init_model(2, &opts).unwrap();
        model.nodes[0].inner[1] = SplineFunction::zero(model.nodes[0].inner[1].basis().clone());

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100;
        let xs = uniform_inputs(&mut rng, n, 2);
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = Dataset::new(2, xs, ys, None).unwrap();
        let cfg = TrainConfig::default();
        let knots = KnotVector::clamped_uniform(3, 3);
        let residual = data.ys().to_vec();

        let before = node_residual_mse(&model.nodes[0], &data, &residual).unwrap();
        let update = inner_update(&model.nodes[0], &data, &residual, 0, &knots, &cfg).unwrap();
        let InnerUpdate::Candidate(candidate) = update else {
            panic!("expected candidate despite zero partner");
        };
        let mut altered = model.clone();
        altered.nodes[0].inner[0] = candidate;
        let after = node_residual_mse(&altered.nodes[0], &data, &residual).unwrap();
        assert!(after <= before * (1.0 + 1e-12), "{after} vs {before}");
    }

    #[test]
    fn fit_recovers_noiseless_single_node_model() {
        let truth_opts = InitOptions {
            seed: 42,
            ..InitOptions::new(vec![AggregationKind::Additive])
        };
        let truth = init_model(2, &truth_opts).unwrap();
        let data = dataset_from_model(&truth, 2000, 77);

        let start = init_model(
            2,
            &InitOptions {
                seed: 1,
                inner_knots: 5,
                outer_knots: 5,
                ..InitOptions::new(vec![AggregationKind::Additive])
            },
        )
        .unwrap();
        let cfg = TrainConfig {
            inner_knot_count: Some(5),
            outer_knot_count: Some(5),
            ..TrainConfig::default()
        };
        let (fitted, trace) = fit(&start, &data, &cfg).unwrap();
        let mse = training_mse(&fitted, &data).unwrap();
        assert!(trace.sweeps <= 50);
        assert!(mse < 1e-6, "training mse {mse} after {} sweeps", trace.sweeps);
    }

    #[test]
    fn fit_constant_response() {
        let start = init_model(
            1,
            &InitOptions {
                seed: 2,
                ..InitOptions::new(vec![AggregationKind::Additive])
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 1000;
        let xs = uniform_inputs(&mut rng, n, 1);
        let data = Dataset::new(1, xs, vec![2.75; n], None).unwrap();
        let (fitted, _) = fit(&start, &data, &TrainConfig::default()).unwrap();
        for _ in 0..50 {
            let x = [rng.gen::<f64>()];
            assert_abs_diff_eq!(fitted.forward(&x).unwrap(), 2.75, epsilon = 1e-8);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let start = init_model(
            2,
            &InitOptions {
                seed: 3,
                ..InitOptions::new(hybrid_allocation(2))
            },
        )
        .unwrap();
        let truth = init_model(
            2,
            &InitOptions {
                seed: 99,
                ..InitOptions::new(vec![AggregationKind::Additive])
            },
        )
        .unwrap();
        let data = dataset_from_model(&truth, 300, 15);
        let cfg = TrainConfig {
            max_sweeps: 8,
            ..TrainConfig::default()
        };
        let (m1, t1) = fit(&start, &data, &cfg).unwrap();
        let (m2, t2) = fit(&start, &data, &cfg).unwrap();
        assert_eq!(t1, t2);
        for (a, b) in m1.nodes.iter().zip(&m2.nodes) {
            assert_eq!(a.outer.coefficients(), b.outer.coefficients());
            for (fa, fb) in a.inner.iter().zip(&b.inner) {
                assert_eq!(fa.coefficients(), fb.coefficients());
            }
        }
    }

    #[test]
    fn frozen_normalizer_sweeps_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for trial in 0..20 {
            let d = 1 + (trial % 3);
            let kinds = if trial % 2 == 0 {
                vec![AggregationKind::Additive; 2]
            } else {
                hybrid_allocation(2)
            };
            let start = init_model(
                d,
                &InitOptions {
                    seed: trial as u64,
                    ..InitOptions::new(kinds)
                },
            )
            .unwrap();
            let n = 150;
            let xs = uniform_inputs(&mut rng, n, d);
            let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let data = Dataset::new(d, xs, ys, None).unwrap();
            let cfg = TrainConfig {
                max_sweeps: 6,
                freeze_normalizers: true,
                tol: 1e-14,
                ..TrainConfig::default()
            };
            let (_, trace) = fit(&start, &data, &cfg).unwrap();
            let mut prev = f64::INFINITY;
            for &mse in &trace.mse_per_sweep {
                assert!(
                    mse <= prev + 1e-6 * (1.0 + mse),
                    "trial {trial}: sweep MSE rose from {prev} to {mse}"
                );
                prev = mse;
            }
            assert_eq!(trace.normalizer_mse_increases, 0);
        }
    }

    #[test]
    fn outer_refit_never_increases_training_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..10 {
            let start = init_model(
                2,
                &InitOptions {
                    seed: trial,
                    ..InitOptions::new(vec![AggregationKind::Additive, AggregationKind::Multiplicative])
                },
            )
            .unwrap();
            let n = 120;
            let xs = uniform_inputs(&mut rng, n, 2);
            let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let data = Dataset::new(2, xs, ys, None).unwrap();
            let outer_knots = KnotVector::clamped_uniform(3, 3);

            let mut m = start.clone();
            for q in 0..m.nodes.len() {
                let residual = partial_residual(&m, &data, q).unwrap();
                let before = training_mse(&m, &data).unwrap();
                let t_vals = node_transform_values(&m.nodes[q], &data).unwrap();
                let v_vals: Vec<f64> =
                    t_vals.iter().map(|&u| m.nodes[q].normalizer.apply(u)).collect();
                let refit = fit_least_squares(&v_vals, &residual, None, &outer_knots, 1e-8).unwrap();
                m.nodes[q].outer = refit.spline;
                let after = training_mse(&m, &data).unwrap();
                assert!(after <= before + 1e-9, "node {q}: {before} -> {after}");
            }
        }
    }

    #[test]
    fn univariate_additive_fit_matches_classical_spline_regression() {
        // Q=1, d=1, additive, identity outer held fixed by freezing: the
        // fitted inner spline reproduces classical univariate LS regression.
        let mut opts = InitOptions::new(vec![AggregationKind::Additive]);
        opts.init_noise = 0.0;
        opts.inner_knots = 4;
        opts.outer_knots = 4;
        let start = init_model(1, &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 400;
        let xs = uniform_inputs(&mut rng, n, 1);
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| 0.3 + 0.5 * (6.0 * x).sin() + 0.05 * rng.gen_range(-1.0..1.0))
            .collect();
        let data = Dataset::new(1, xs.clone(), ys.clone(), None).unwrap();
        let knots = KnotVector::clamped_uniform(4, 3);
        let cfg = TrainConfig {
            freeze_normalizers: true,
            inner_knot_count: Some(4),
            outer_knot_count: Some(4),
            ..TrainConfig::default()
        };

        // One manual inner update against the classical fit.
        let residual = data.ys().to_vec();
        let InnerUpdate::Candidate(candidate) =
            inner_update(&start.nodes[0], &data, &residual, 0, &knots, &cfg).unwrap()
        else {
            panic!("expected candidate");
        };
        let classical = fit_least_squares(&xs, &ys, None, &knots, cfg.ridge).unwrap();
        for (a, b) in candidate.coefficients().iter().zip(classical.spline.coefficients()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn fit_rejects_mismatched_dimensions() {
        let model = init_model(2, &InitOptions::new(vec![AggregationKind::Additive])).unwrap();
        let data = Dataset::new(3, vec![0.5; 9], vec![1.0; 3], None).unwrap();
        assert!(matches!(
            fit(&model, &data, &TrainConfig::default()),
            Err(TrainError::DimensionMismatch { model: 2, data: 3 })
        ));
    }

    #[test]
    fn fit_rejects_bad_config() {
        let model = init_model(1, &InitOptions::new(vec![AggregationKind::Additive])).unwrap();
        let data = Dataset::new(1, vec![0.5, 0.6], vec![1.0, 2.0], None).unwrap();
        for cfg in [
            TrainConfig {
                max_sweeps: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                deriv_floor: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                degree: 0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(fit(&model, &data, &cfg), Err(TrainError::BadConfig(_))));
        }
    }

    #[test]
    fn more_data_does_not_hurt_on_smooth_target() {
        // Monotone-in-n sanity oracle on an in-class target.
        let truth = init_model(
            3,
            &InitOptions {
                seed: 50,
                ..InitOptions::new(vec![AggregationKind::Additive])
            },
        )
        .unwrap();
        let mut test_rng = ChaCha8Rng::seed_from_u64(123);
        let test_points: Vec<[f64; 3]> = (0..2000)
            .map(|_| [test_rng.gen(), test_rng.gen(), test_rng.gen()])
            .collect();

        let run = |n: usize| -> f64 {
            let mut rng = ChaCha8Rng::seed_from_u64(321);
            let xs = uniform_inputs(&mut rng, n, 3);
            let ys: Vec<f64> = (0..n)
                .map(|i| {
                    let noise: f64 = rng.gen_range(-1.0..1.0);
                    truth.forward(&xs[i * 3..(i + 1) * 3]).unwrap() + 0.05 * noise
                })
                .collect();
            let data = Dataset::new(3, xs, ys, None).unwrap();
            let start = init_model(
                3,
                &InitOptions {
                    seed: 7,
                    inner_knots: knot_count_rule(n, 2, 1.0),
                    outer_knots: knot_count_rule(n, 2, 1.0),
                    ..InitOptions::new(vec![AggregationKind::Additive])
                },
            )
            .unwrap();
            let cfg = TrainConfig::default();
            let (fitted, _) = fit(&start, &data, &cfg).unwrap();
            let mut mse = 0.0;
            for x in &test_points {
                let e = fitted.forward(x).unwrap() - truth.forward(x).unwrap();
                mse += e * e;
            }
            mse / test_points.len() as f64
        };

        let coarse = run(100);
        let fine = run(1600);
        assert!(fine < coarse, "test MSE did not improve: {coarse} -> {fine}");
    }
}
