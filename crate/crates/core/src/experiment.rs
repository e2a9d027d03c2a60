//! Convergence-study harness: runs (architecture, n, seed) cells over a
//! sample-size grid, estimates noiseless test risk by Monte Carlo, fits
//! log-log slopes of median test MSE, and reads/writes report CSVs. Cell
//! seeds derive from a stable hash of the cell identity, so results never
//! depend on which other cells run or on the worker count.

use crate::model::{hybrid_allocation, init_model, AggregationKind, InitOptions, KanModel, ModelError};
use crate::spline::knot_count_rule;
use crate::targets::{generate, GenConfig, TargetError, TargetKind, TargetSpec};
use crate::train::{fit, TrainConfig, TrainError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("experiment must list at least one architecture")]
    NoArchitectures,
    #[error("n_grid must be non-empty and strictly increasing")]
    BadGrid,
    #[error("replications must be at least 1")]
    BadReplications,
    #[error("{0} must be at least 1")]
    BadCount(&'static str),
    #[error("slope fit needs at least 3 points, got {0}")]
    NotEnoughPoints(usize),
    #[error("slope fit requires positive MSE values, got {0}")]
    NonPositiveMse(f64),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}: {message}")]
    ParseReport {
        path: String,
        row: usize,
        message: String,
    },
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

/// Model family trained in a cell: all-additive nodes, or the half/half
/// hybrid allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Architecture {
    Additive,
    Hybrid,
}

impl Architecture {
    pub fn as_str(&self) -> &'static str {
        match self {
            Architecture::Additive => "additive",
            Architecture::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "additive" => Some(Architecture::Additive),
            "hybrid" => Some(Architecture::Hybrid),
            _ => None,
        }
    }

    pub fn kinds(&self, q: usize) -> Vec<AggregationKind> {
        match self {
            Architecture::Additive => vec![AggregationKind::Additive; q],
            Architecture::Hybrid => hybrid_allocation(q),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Default §-style sample-size grid.
pub const DEFAULT_N_GRID: [usize; 8] = [100, 200, 400, 800, 1600, 3200, 6400, 12800];

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    pub sigma: f64,
    pub architectures: Vec<Architecture>,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub base_seed: u64,
    pub test_points: usize,
    pub q: usize,
    pub knot_c: f64,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn new(target: TargetSpec) -> Self {
        Self {
            target,
            sigma: 0.05,
            architectures: vec![Architecture::Additive],
            n_grid: DEFAULT_N_GRID.to_vec(),
            replications: 10,
            base_seed: 0,
            test_points: 20_000,
            q: 4,
            knot_c: 1.0,
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.target.validate()?;
        if self.architectures.is_empty() {
            return Err(ExperimentError::NoArchitectures);
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExperimentError::BadGrid);
        }
        if self.replications == 0 {
            return Err(ExperimentError::BadReplications);
        }
        if self.test_points == 0 {
            return Err(ExperimentError::BadCount("test_points"));
        }
        if self.q == 0 {
            return Err(ExperimentError::BadCount("q"));
        }
        if !(self.knot_c > 0.0) || !self.knot_c.is_finite() {
            return Err(ExperimentError::BadCount("knot_c"));
        }
        Ok(())
    }
}

/// FNV-1a over the cell identity; stable across runs and platforms.
fn cell_seed(base: u64, role: &str, arch: Architecture, n: usize, rep: u64) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in role
        .bytes()
        .chain(arch.as_str().bytes())
        .chain(n.to_le_bytes())
        .chain(rep.to_le_bytes())
    {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    base ^ h
}

/// Monte Carlo risk of `model` against a scalar truth on m fresh uniform
/// points in [0,1]^d; noiseless ground truth.
fn mc_risk<F>(model: &KanModel, truth: F, m: usize, seed: u64) -> Result<f64, ExperimentError>
where
    F: Fn(&[f64]) -> Result<f64, ExperimentError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.dimension;
    let mut point = vec![0.0; d];
    let mut acc = 0.0;
    for _ in 0..m {
        for slot in point.iter_mut() {
            *slot = rng.gen();
        }
        let diff = model.forward(&point).map_err(TrainError::from)? - truth(&point)?;
        acc += diff * diff;
    }
    Ok(acc / m as f64)
}

/// Mean of (model(x) - f_true(x))^2 over m fresh uniform points.
pub fn estimate_test_mse(
    model: &KanModel,
    spec: &TargetSpec,
    m: usize,
    seed: u64,
) -> Result<f64, ExperimentError> {
    if model.dimension != spec.d {
        return Err(ExperimentError::Model(ModelError::DimensionMismatch {
            expected: spec.d,
            found: model.dimension,
        }));
    }
    if m == 0 {
        return Err(ExperimentError::BadCount("test_points"));
    }
    mc_risk(model, |x| Ok(spec.eval(x)?), m, seed)
}

/// One report row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub arch: Architecture,
    pub n: usize,
    pub seed: u64,
    pub train_mse: f64,
    pub test_mse: f64,
    pub sweeps: usize,
    pub wall_ms: u64,
}

/// Per-architecture aggregate: median test MSE per n and the fitted slope.
#[derive(Debug, Clone)]
pub struct ArchSummary {
    pub arch: Architecture,
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub n_points: usize,
    pub medians: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
    pub summaries: Vec<ArchSummary>,
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub arch: Architecture,
    pub n: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ConvergenceReport,
    pub failures: Vec<CellFailure>,
}

/// Runs one (architecture, n, replication) cell: generate data with the
/// cell-derived seed, size knots by the theoretical rule, fit, and score the
/// noiseless test risk. Deterministic per cell.
pub fn run_cell(
    cfg: &ExperimentConfig,
    arch: Architecture,
    n: usize,
    rep: u64,
) -> Result<ReportRow, ExperimentError> {
    let start = Instant::now();
    let r = cfg.target.r;
    let knots = knot_count_rule(n, r, cfg.knot_c);

    let gen_cfg = GenConfig::new(n, cfg.sigma, cell_seed(cfg.base_seed, "data", arch, n, rep))?;
    let data = generate(&cfg.target, &gen_cfg)?;

    let init = InitOptions {
        degree: cfg.train.degree,
        inner_knots: knots,
        outer_knots: knots,
        smoothness: r,
        seed: cell_seed(cfg.base_seed, "init", arch, n, rep),
        ..InitOptions::new(arch.kinds(cfg.q))
    };
    let model = init_model(cfg.target.d, &init)?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.inner_knot_count = Some(knots);
    train_cfg.outer_knot_count = Some(knots);
    let (fitted, trace) = fit(&model, &data, &train_cfg)?;

    let test_mse = estimate_test_mse(
        &fitted,
        &cfg.target,
        cfg.test_points,
        cell_seed(cfg.base_seed, "test", arch, n, rep),
    )?;

    Ok(ReportRow {
        arch,
        n,
        seed: rep,
        train_mse: *trace.mse_per_sweep.last().expect("at least one sweep"),
        test_mse,
        sweeps: trace.sweeps,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Ordinary least squares of ln(mse) on ln(n): (slope, intercept, stderr).
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<(f64, f64, f64), ExperimentError> {
    if points.len() < 3 {
        return Err(ExperimentError::NotEnoughPoints(points.len()));
    }
    for &(n, mse) in points {
        if !(mse > 0.0) || !(n > 0.0) {
            return Err(ExperimentError::NonPositiveMse(mse));
        }
    }
    let m = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let stderr = (ssr / (m - 2.0) / sxx).sqrt();
    Ok((slope, intercept, stderr))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite MSE values"));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Aggregates rows into per-architecture medians and slopes. Slopes are
/// computed only for architectures with at least 3 grid points present.
pub fn summarize(cfg: &ExperimentConfig, rows: &[ReportRow]) -> Vec<ArchSummary> {
    let mut summaries = Vec::new();
    for &arch in &cfg.architectures {
        let mut medians = Vec::new();
        for &n in &cfg.n_grid {
            let mut cell: Vec<f64> = rows
                .iter()
                .filter(|r| r.arch == arch && r.n == n)
                .map(|r| r.test_mse)
                .collect();
            if !cell.is_empty() {
                medians.push((n, median(&mut cell)));
            }
        }
        let points: Vec<(f64, f64)> = medians.iter().map(|&(n, m)| (n as f64, m)).collect();
        let (slope, intercept, stderr) = match fit_loglog_slope(&points) {
            Ok(v) => v,
            Err(_) => (f64::NAN, f64::NAN, f64::NAN),
        };
        summaries.push(ArchSummary {
            arch,
            slope,
            stderr,
            intercept,
            n_points: medians.len(),
            medians,
        });
    }
    summaries
}

/// Runs every cell of the grid. `workers` = 0 uses all available cores;
/// results are identical for any worker count because each cell is seeded
/// from its identity and rows are sorted by (architecture, n, seed).
pub fn run_experiment(
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &arch in &cfg.architectures {
        for &n in &cfg.n_grid {
            for rep in 0..cfg.replications as u64 {
                cells.push((arch, n, rep));
            }
        }
    }

    let run = |&(arch, n, rep): &(Architecture, usize, u64)| match run_cell(cfg, arch, n, rep) {
        Ok(row) => Ok(row),
        Err(e) => Err(CellFailure {
            arch,
            n,
            seed: rep,
            message: e.to_string(),
        }),
    };

    let results: Vec<Result<ReportRow, CellFailure>> = if workers == 1 {
        cells.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))?;
        pool.install(|| cells.par_iter().map(run).collect())
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    rows.sort_by_key(|r| (r.arch, r.n, r.seed));
    let summaries = summarize(cfg, &rows);
    Ok(ExperimentOutcome {
        report: ConvergenceReport { rows, summaries },
        failures,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    std::fs::write(path, contents).map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Writes rows.csv, summary.csv, and plot-ready medians.csv into `out_dir`.
pub fn write_report(report: &ConvergenceReport, out_dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(out_dir).map_err(|e| ExperimentError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;

    let mut rows = String::from("arch,n,seed,train_mse,test_mse,sweeps,wall_ms\n");
    for r in &report.rows {
        rows.push_str(&format!(
            "{},{},{},{:.16e},{:.16e},{},{}\n",
            r.arch, r.n, r.seed, r.train_mse, r.test_mse, r.sweeps, r.wall_ms
        ));
    }
    write_file(&out_dir.join("rows.csv"), &rows)?;

    let mut summary = String::from("arch,slope,stderr,intercept,n_points\n");
    for s in &report.summaries {
        summary.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{}\n",
            s.arch, s.slope, s.stderr, s.intercept, s.n_points
        ));
    }
    write_file(&out_dir.join("summary.csv"), &summary)?;

    let mut medians = String::from("arch,n,median_test_mse,log10_n,log10_median_mse\n");
    for s in &report.summaries {
        for &(n, m) in &s.medians {
            medians.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e}\n",
                s.arch,
                n,
                m,
                (n as f64).log10(),
                m.log10()
            ));
        }
    }
    write_file(&out_dir.join("medians.csv"), &medians)
}

/// Reads rows.csv back; used to verify aggregate round-trips.
pub fn read_rows_csv(path: &Path) -> Result<Vec<ReportRow>, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let path_str = path.display().to_string();
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| ExperimentError::ParseReport {
            path: path_str.clone(),
            row: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(parse_err(format!("expected 7 columns, found {}", fields.len())));
        }
        let arch = Architecture::parse(fields[0])
            .ok_or_else(|| parse_err(format!("unknown architecture {:?}", fields[0])))?;
        rows.push(ReportRow {
            arch,
            n: fields[1].parse().map_err(|_| parse_err("bad n".into()))?,
            seed: fields[2].parse().map_err(|_| parse_err("bad seed".into()))?,
            train_mse: fields[3].parse().map_err(|_| parse_err("bad train_mse".into()))?,
            test_mse: fields[4].parse().map_err(|_| parse_err("bad test_mse".into()))?,
            sweeps: fields[5].parse().map_err(|_| parse_err("bad sweeps".into()))?,
            wall_ms: fields[6].parse().map_err(|_| parse_err("bad wall_ms".into()))?,
        });
    }
    Ok(rows)
}

/// Parses the sectioned key = value experiment config format.
///
/// Sections: [target] (kind, r, d, sigma, fourier_truncation), [train]
/// (TrainConfig fields), [experiment] (architectures, n_grid, replications,
/// base_seed, test_points, q, knot_c). Unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ExperimentError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Section {
        None,
        Target,
        Train,
        Experiment,
    }

    let mut kind: Option<TargetKind> = None;
    let mut r = 2usize;
    let mut d: Option<usize> = None;
    let mut truncation = crate::targets::DEFAULT_FOURIER_TRUNCATION;

    let mut cfg_sigma = 0.05f64;
    let mut train = TrainConfig::default();
    let mut architectures = vec![Architecture::Additive];
    let mut n_grid = DEFAULT_N_GRID.to_vec();
    let mut replications = 10usize;
    let mut base_seed = 0u64;
    let mut test_points = 20_000usize;
    let mut q = 4usize;
    let mut knot_c = 1.0f64;

    let mut section = Section::None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let err = |message: String| ExperimentError::Config {
            line: idx + 1,
            message,
        };
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[target]" => Section::Target,
                "[train]" => Section::Train,
                "[experiment]" => Section::Experiment,
                other => return Err(err(format!("unknown section {other}"))),
            };
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(format!("expected key = value, found {line:?}")));
        };
        let key = key.trim();
        let value = value.trim();
        macro_rules! parse {
            ($ty:ty) => {
                value
                    .parse::<$ty>()
                    .map_err(|_| err(format!("invalid value {value:?} for {key}")))?
            };
        }
        match (section, key) {
            (Section::Target, "kind") => {
                kind = Some(match value {
                    "piecewise-poly" => TargetKind::PiecewisePoly,
                    "fourier" => TargetKind::FourierSeries,
                    other => return Err(err(format!("unknown target kind {other:?}"))),
                });
            }
            (Section::Target, "r") => r = parse!(usize),
            (Section::Target, "d") => d = Some(parse!(usize)),
            (Section::Target, "sigma") => cfg_sigma = parse!(f64),
            (Section::Target, "fourier_truncation") => truncation = parse!(usize),
            (Section::Train, "max_sweeps") => train.max_sweeps = parse!(usize),
            (Section::Train, "tol") => train.tol = parse!(f64),
            (Section::Train, "ridge") => train.ridge = parse!(f64),
            (Section::Train, "deriv_floor") => train.deriv_floor = parse!(f64),
            (Section::Train, "inner_knot_count") => train.inner_knot_count = Some(parse!(usize)),
            (Section::Train, "outer_knot_count") => train.outer_knot_count = Some(parse!(usize)),
            (Section::Train, "degree") => train.degree = parse!(usize),
            (Section::Train, "seed") => train.seed = parse!(u64),
            (Section::Experiment, "architectures") => {
                let mut archs = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    archs.push(
                        Architecture::parse(part)
                            .ok_or_else(|| err(format!("unknown architecture {part:?}")))?,
                    );
                }
                architectures = archs;
            }
            (Section::Experiment, "n_grid") => {
                let mut grid = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    grid.push(part.parse::<usize>().map_err(|_| {
                        err(format!("invalid n_grid entry {part:?}"))
                    })?);
                }
                n_grid = grid;
            }
            (Section::Experiment, "replications") => replications = parse!(usize),
            (Section::Experiment, "base_seed") => base_seed = parse!(u64),
            (Section::Experiment, "test_points") => test_points = parse!(usize),
            (Section::Experiment, "q") => q = parse!(usize),
            (Section::Experiment, "knot_c") => knot_c = parse!(f64),
            (Section::None, _) => {
                return Err(err("key outside of a [section]".into()));
            }
            (_, other) => {
                return Err(err(format!("unknown key {other:?} in this section")));
            }
        }
    }

    let kind = kind.ok_or(ExperimentError::Config {
        line: 0,
        message: "missing required key `kind` in [target]".into(),
    })?;
    let d = d.unwrap_or(match kind {
        TargetKind::PiecewisePoly => 5,
        TargetKind::FourierSeries => 1,
    });
    let target = TargetSpec {
        kind,
        r,
        d,
        fourier_truncation: truncation,
    };
    target.validate()?;

    let cfg = ExperimentConfig {
        target,
        sigma: cfg_sigma,
        architectures,
        n_grid,
        replications,
        base_seed,
        test_points,
        q,
        knot_c,
        train,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_config(&text)
}
