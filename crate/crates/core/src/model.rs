//! Single-hidden-layer Kolmogorov-Arnold models: nodes aggregate per-coordinate
//! spline transforms additively or multiplicatively, feed the result through a
//! range normalizer into an outer spline, and the model sums the node outputs.

use crate::spline::{KnotVector, SplineError, SplineFunction};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("input point has dimension {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("input component {0} is outside [0, 1]")]
    OutOfDomain(f64),
    #[error("model must have at least one node")]
    NoNodes,
    #[error("node {node} has {found} inner splines, model dimension is {expected}")]
    InnerCount {
        node: usize,
        expected: usize,
        found: usize,
    },
    #[error("normalizer requires finite hi > lo, got lo={lo} hi={hi}")]
    BadNormalizer { lo: f64, hi: f64 },
    #[error("output bound M must be positive and finite, got {0}")]
    BadOutputBound(f64),
    #[error("model file: {0}")]
    Format(String),
    #[error("unsupported model format_version {0}, expected {MODEL_FORMAT_VERSION}")]
    FormatVersion(u64),
}

/// How a node combines its per-coordinate inner transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationKind {
    Additive,
    Multiplicative,
}

impl AggregationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AggregationKind::Additive => "additive",
            AggregationKind::Multiplicative => "multiplicative",
        }
    }
}

/// Hybrid §-style allocation: floor(Q/2) additive nodes followed by
/// ceil(Q/2) multiplicative ones. Additive first, so backfitting settles the
/// bulk additive signal before the multiplicative refinements.
pub fn hybrid_allocation(q: usize) -> Vec<AggregationKind> {
    let additive = q / 2;
    let mut kinds = vec![AggregationKind::Additive; additive];
    kinds.extend(vec![AggregationKind::Multiplicative; q - additive]);
    kinds
}

/// Affine map u -> (u - lo)/(hi - lo) clamped to [0, 1]; bridges the range of a
/// node's aggregation onto the outer spline's domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    lo: f64,
    hi: f64,
}

impl Normalizer {
    pub fn new(lo: f64, hi: f64) -> Result<Self, ModelError> {
        if !lo.is_finite() || !hi.is_finite() || hi <= lo {
            return Err(ModelError::BadNormalizer { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn identity() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    /// Fits [lo, hi] to the observed range with 5% padding on each side.
    /// A degenerate (constant) range widens to a unit window.
    pub fn from_observed(values: &[f64]) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in values {
            min = min.min(v);
            max = max.max(v);
        }
        let span = max - min;
        if !(span > 0.0) || !span.is_finite() {
            let center = if min.is_finite() { min } else { 0.0 };
            return Self {
                lo: center - 0.5,
                hi: center + 0.5,
            };
        }
        Self {
            lo: min - 0.05 * span,
            hi: max + 0.05 * span,
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn apply(&self, u: f64) -> f64 {
        ((u - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
}

/// One q-indexed unit: d inner splines, an aggregation rule, a range
/// normalizer, and the outer spline g. `output_bound` is the clamp bound M
/// applied to inner evaluations inside multiplicative products.
#[derive(Debug, Clone)]
pub struct KanNode {
    pub kind: AggregationKind,
    pub inner: Vec<SplineFunction>,
    pub normalizer: Normalizer,
    pub outer: SplineFunction,
    pub output_bound: f64,
}

impl KanNode {
    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.inner.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.inner.len(),
                found: x.len(),
            });
        }
        for &xi in x {
            if !(0.0..=1.0).contains(&xi) {
                return Err(ModelError::OutOfDomain(xi));
            }
        }
        Ok(())
    }

    /// T_q(x): the sum of the inner evaluations for an additive node, the
    /// product of the clamped inner evaluations for a multiplicative one.
    pub fn transform(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_input(x)?;
        match self.kind {
            AggregationKind::Additive => {
                let mut acc = 0.0;
                for (f, &xi) in self.inner.iter().zip(x) {
                    acc += f.eval(xi)?;
                }
                Ok(acc)
            }
            AggregationKind::Multiplicative => {
                let m = self.output_bound;
                let mut acc = 1.0;
                for (f, &xi) in self.inner.iter().zip(x) {
                    acc *= f.eval(xi)?.clamp(-m, m);
                }
                Ok(acc)
            }
        }
    }

    /// g_q applied to the normalized aggregation.
    pub fn forward(&self, x: &[f64]) -> Result<f64, ModelError> {
        let t = self.transform(x)?;
        Ok(self.outer.eval(self.normalizer.apply(t))?)
    }
}

/// A KAN: the sum of Q node outputs over inputs in [0, 1]^d.
/// `smoothness_hint` records the Sobolev index r used for knot selection.
#[derive(Debug, Clone)]
pub struct KanModel {
    pub dimension: usize,
    pub nodes: Vec<KanNode>,
    pub smoothness_hint: usize,
}

impl KanModel {
    pub fn new(dimension: usize, nodes: Vec<KanNode>, smoothness_hint: usize) -> Result<Self, ModelError> {
        let model = Self {
            dimension,
            nodes,
            smoothness_hint,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.nodes.is_empty() {
            return Err(ModelError::NoNodes);
        }
        for (q, node) in self.nodes.iter().enumerate() {
            if node.inner.len() != self.dimension {
                return Err(ModelError::InnerCount {
                    node: q,
                    expected: self.dimension,
                    found: node.inner.len(),
                });
            }
            if !node.output_bound.is_finite() || node.output_bound <= 0.0 {
                return Err(ModelError::BadOutputBound(node.output_bound));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.dimension {
            return Err(ModelError::DimensionMismatch {
                expected: self.dimension,
                found: x.len(),
            });
        }
        let mut acc = 0.0;
        for node in &self.nodes {
            acc += node.forward(x)?;
        }
        Ok(acc)
    }
}

/// Default multiplicative clamp bound M.
pub const DEFAULT_OUTPUT_BOUND: f64 = 10.0;
/// Default amplitude of the uniform coefficient noise at initialization.
pub const DEFAULT_INIT_NOISE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct InitOptions {
    pub kinds: Vec<AggregationKind>,
    pub degree: usize,
    pub inner_knots: usize,
    pub outer_knots: usize,
    pub smoothness: usize,
    pub output_bound: f64,
    pub init_noise: f64,
    pub seed: u64,
}

impl InitOptions {
    pub fn new(kinds: Vec<AggregationKind>) -> Self {
        Self {
            kinds,
            degree: 3,
            inner_knots: 5,
            outer_knots: 5,
            smoothness: 2,
            output_bound: DEFAULT_OUTPUT_BOUND,
            init_noise: DEFAULT_INIT_NOISE,
            seed: 0,
        }
    }
}

/// Builds a near-identity model: inner splines are Greville ramps (scaled by
/// 1/d inside additive nodes) plus uniform noise in [-init_noise, init_noise],
/// outer splines are exact identity ramps, normalizers are the identity map.
/// Deterministic for a given seed.
pub fn init_model(dimension: usize, opts: &InitOptions) -> Result<KanModel, ModelError> {
    if opts.kinds.is_empty() {
        return Err(ModelError::NoNodes);
    }
    if dimension == 0 {
        return Err(ModelError::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let inner_basis = KnotVector::clamped_uniform(opts.inner_knots, opts.degree);
    let outer_basis = KnotVector::clamped_uniform(opts.outer_knots, opts.degree);
    let nodes = opts
        .kinds
        .iter()
        .map(|&kind| {
            let scale = match kind {
                AggregationKind::Additive => 1.0 / dimension as f64,
                AggregationKind::Multiplicative => 1.0,
            };
            let inner = (0..dimension)
                .map(|_| {
                    let mut f = SplineFunction::ramp(inner_basis.clone(), scale);
                    if opts.init_noise > 0.0 {
                        for c in f.coefficients_mut() {
                            *c += rng.gen_range(-opts.init_noise..=opts.init_noise);
                        }
                    }
                    f
                })
                .collect();
            KanNode {
                kind,
                inner,
                normalizer: Normalizer::identity(),
                outer: SplineFunction::ramp(outer_basis.clone(), 1.0),
                output_bound: opts.output_bound,
            }
        })
        .collect();
    KanModel::new(dimension, nodes, opts.smoothness)
}

pub const MODEL_FORMAT_VERSION: u64 = 1;

fn write_f64(out: &mut String, v: f64) {
    // 17 significant decimal digits: always round-trips f64 exactly.
    let _ = write!(out, "{v:.16e}");
}

fn write_spline(out: &mut String, f: &SplineFunction, indent: &str) {
    let _ = write!(
        out,
        "{{\"degree\": {}, \"interior_count\": {}, \"coefficients\": [",
        f.basis().degree(),
        f.basis().interior_count()
    );
    for (i, &c) in f.coefficients().iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_f64(out, c);
    }
    let _ = write!(out, "]}}");
    let _ = indent;
}

/// Renders the model as versioned JSON text. Numbers carry 17 significant
/// digits so the file round-trips bit-exactly.
pub fn serialize_model(model: &KanModel) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"format_version\": {MODEL_FORMAT_VERSION},");
    let _ = writeln!(out, "  \"d\": {},", model.dimension);
    let _ = writeln!(out, "  \"r\": {},", model.smoothness_hint);
    let _ = writeln!(out, "  \"Q\": {},", model.nodes.len());
    out.push_str("  \"nodes\": [\n");
    for (q, node) in model.nodes.iter().enumerate() {
        out.push_str("    {\n");
        let _ = writeln!(out, "      \"kind\": \"{}\",", node.kind.as_str());
        out.push_str("      \"M\": ");
        write_f64(&mut out, node.output_bound);
        out.push_str(",\n      \"normalizer\": {\"lo\": ");
        write_f64(&mut out, node.normalizer.lo());
        out.push_str(", \"hi\": ");
        write_f64(&mut out, node.normalizer.hi());
        out.push_str("},\n      \"inner\": [\n");
        for (j, f) in node.inner.iter().enumerate() {
            out.push_str("        ");
            write_spline(&mut out, f, "        ");
            out.push_str(if j + 1 < node.inner.len() { ",\n" } else { "\n" });
        }
        out.push_str("      ],\n      \"outer\": ");
        write_spline(&mut out, &node.outer, "      ");
        out.push('\n');
        out.push_str(if q + 1 < model.nodes.len() { "    },\n" } else { "    }\n" });
    }
    out.push_str("  ]\n}\n");
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u64,
    d: usize,
    r: usize,
    #[serde(rename = "Q")]
    q: usize,
    nodes: Vec<NodeFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    kind: String,
    #[serde(rename = "M")]
    m: f64,
    normalizer: NormalizerFile,
    inner: Vec<SplineFile>,
    outer: SplineFile,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizerFile {
    lo: f64,
    hi: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SplineFile {
    degree: usize,
    interior_count: usize,
    coefficients: Vec<f64>,
}

fn spline_from_file(file: SplineFile) -> Result<SplineFunction, ModelError> {
    let basis = KnotVector::clamped_uniform(file.interior_count, file.degree);
    Ok(SplineFunction::new(basis, file.coefficients)?)
}

/// Parses and validates a model file produced by `serialize_model`.
pub fn deserialize_model(text: &str) -> Result<KanModel, ModelError> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(ModelError::FormatVersion(file.format_version));
    }
    if file.q != file.nodes.len() {
        return Err(ModelError::Format(format!(
            "field `Q` is {} but {} nodes are present",
            file.q,
            file.nodes.len()
        )));
    }
    let nodes = file
        .nodes
        .into_iter()
        .map(|node| {
            let kind = match node.kind.as_str() {
                "additive" => AggregationKind::Additive,
                "multiplicative" => AggregationKind::Multiplicative,
                other => {
                    return Err(ModelError::Format(format!(
                        "field `kind` has unknown value {other:?}"
                    )))
                }
            };
            Ok(KanNode {
                kind,
                inner: node
                    .inner
                    .into_iter()
                    .map(spline_from_file)
                    .collect::<Result<_, _>>()?,
                normalizer: Normalizer::new(node.normalizer.lo, node.normalizer.hi)?,
                outer: spline_from_file(node.outer)?,
                output_bound: node.m,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    KanModel::new(file.d, nodes, file.r)
}
