//! Synthetic regression targets with controlled Sobolev smoothness, seeded
//! sampling with Gaussian noise, and dataset CSV round-trips.

use crate::train::{Dataset, TrainError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("evaluation point {0} is outside [0, 1]")]
    OutOfDomain(f64),
    #[error("Fourier coefficient index k must be at least 1, got {0}")]
    BadIndex(usize),
    #[error("smoothness r must be at least 1, got {0}")]
    BadSmoothness(usize),
    #[error("the Fourier target is univariate; requested d = {0}")]
    FourierDimension(usize),
    #[error("dimension must be at least 1")]
    BadDimension,
    #[error("truncation must be at least 1")]
    BadTruncation,
    #[error("noise sigma must be non-negative and finite, got {0}")]
    BadSigma(f64),
    #[error("point has dimension {found}, target expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Data(#[from] TrainError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}: {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },
}

pub const DEFAULT_FOURIER_TRUNCATION: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    PiecewisePoly,
    FourierSeries,
}

/// One of the two synthetic targets: the d-variate piecewise-polynomial
/// composition or the univariate Fourier series, both with smoothness knob r.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub r: usize,
    pub d: usize,
    pub fourier_truncation: usize,
}

impl TargetSpec {
    pub fn piecewise(r: usize, d: usize) -> Result<Self, TargetError> {
        let spec = Self {
            kind: TargetKind::PiecewisePoly,
            r,
            d,
            fourier_truncation: DEFAULT_FOURIER_TRUNCATION,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fourier(r: usize) -> Result<Self, TargetError> {
        let spec = Self {
            kind: TargetKind::FourierSeries,
            r,
            d: 1,
            fourier_truncation: DEFAULT_FOURIER_TRUNCATION,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TargetError> {
        if self.r == 0 {
            return Err(TargetError::BadSmoothness(self.r));
        }
        if self.d == 0 {
            return Err(TargetError::BadDimension);
        }
        if self.kind == TargetKind::FourierSeries && self.d != 1 {
            return Err(TargetError::FourierDimension(self.d));
        }
        if self.fourier_truncation == 0 {
            return Err(TargetError::BadTruncation);
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, TargetError> {
        if x.len() != self.d {
            return Err(TargetError::DimensionMismatch {
                expected: self.d,
                found: x.len(),
            });
        }
        match self.kind {
            TargetKind::PiecewisePoly => eval_target_poly(x, self.r),
            TargetKind::FourierSeries => eval_target_fourier(x[0], self.r, self.fourier_truncation),
        }
    }
}

/// Sampling controls: sample size, noise level, RNG seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl GenConfig {
    pub fn new(n: usize, sigma: f64, seed: u64) -> Result<Self, TargetError> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(TargetError::BadSigma(sigma));
        }
        Ok(Self { n, sigma, seed })
    }
}

/// The symmetric bump psi(t) = t^(r+1) left of 1/2, (1-t)^(r+1) right of it.
pub fn eval_psi_piecewise(t: f64, r: usize) -> Result<f64, TargetError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(TargetError::OutOfDomain(t));
    }
    if r == 0 {
        return Err(TargetError::BadSmoothness(0));
    }
    let p = (r + 1) as i32;
    Ok(if t < 0.5 { t.powi(p) } else { (1.0 - t).powi(p) })
}

/// f(x) = sin(pi * sum_j psi(x_j)).
pub fn eval_target_poly(x: &[f64], r: usize) -> Result<f64, TargetError> {
    let mut sum = 0.0;
    for &xi in x {
        sum += eval_psi_piecewise(xi, r)?;
    }
    Ok((std::f64::consts::PI * sum).sin())
}

/// a_k = 1 / (k^(r + 1/2) * ln(k + 1)).
pub fn fourier_coefficient(k: usize, r: usize) -> Result<f64, TargetError> {
    if k == 0 {
        return Err(TargetError::BadIndex(k));
    }
    if r == 0 {
        return Err(TargetError::BadSmoothness(0));
    }
    let kf = k as f64;
    Ok(1.0 / (kf.powf(r as f64 + 0.5) * ((k + 1) as f64).ln()))
}

/// Partial sum of sum_k a_k sin(2 pi k x) up to `truncation`. Phases are
/// reduced mod 1 before the sine so that x in {0, 1/2, 1} hits exact zeros.
pub fn eval_target_fourier(x: f64, r: usize, truncation: usize) -> Result<f64, TargetError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(TargetError::OutOfDomain(x));
    }
    if truncation == 0 {
        return Err(TargetError::BadTruncation);
    }
    let mut acc = 0.0;
    for k in 1..=truncation {
        let phase = k as f64 * x;
        let reduced = phase - phase.round();
        acc += fourier_coefficient(k, r)? * (std::f64::consts::TAU * reduced).sin();
    }
    Ok(acc)
}

/// Draws n i.i.d. uniform inputs and noisy responses Y = f(X) + sigma * Z
/// from the seeded generator. Bitwise reproducible per (spec, cfg).
pub fn generate(spec: &TargetSpec, cfg: &GenConfig) -> Result<Dataset, TargetError> {
    spec.validate()?;
    if !cfg.sigma.is_finite() || cfg.sigma < 0.0 {
        return Err(TargetError::BadSigma(cfg.sigma));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = spec.d;
    let mut xs = Vec::with_capacity(cfg.n * d);
    let mut ys = Vec::with_capacity(cfg.n);
    let mut point = vec![0.0; d];
    for _ in 0..cfg.n {
        for slot in point.iter_mut() {
            *slot = rng.gen();
        }
        xs.extend_from_slice(&point);
        let noise: f64 = rng.sample(StandardNormal);
        ys.push(spec.eval(&point)? + cfg.sigma * noise);
    }
    Ok(Dataset::new(d, xs, ys, Some(cfg.sigma))?)
}

fn io_err(path: &Path, source: std::io::Error) -> TargetError {
    TargetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the dataset as CSV with header `x1,...,xd,y` and 17-significant-
/// digit decimals, so a read-back is bit-exact.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), TargetError> {
    let mut out = String::new();
    for j in 1..=data.dimension() {
        out.push_str(&format!("x{j},"));
    }
    out.push_str("y\n");
    for i in 0..data.len() {
        for &v in data.row(i) {
            out.push_str(&format!("{v:.16e},"));
        }
        out.push_str(&format!("{:.16e}\n", data.ys()[i]));
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| io_err(path, e))
}

/// Reads a dataset CSV written by `write_dataset`; the dimension is inferred
/// from the header. Parse errors name the offending row.
pub fn read_dataset(path: &Path) -> Result<Dataset, TargetError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| TargetError::Parse {
        path: path_str.clone(),
        row: 0,
        message: "file is empty".into(),
    })?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() < 2 || fields[fields.len() - 1] != "y" {
        return Err(TargetError::Parse {
            path: path_str,
            row: 0,
            message: "header must be x1,...,xd,y".into(),
        });
    }
    let d = fields.len() - 1;
    for (j, field) in fields[..d].iter().enumerate() {
        if *field != format!("x{}", j + 1) {
            return Err(TargetError::Parse {
                path: path_str,
                row: 0,
                message: format!("expected header column x{}, found {field:?}", j + 1),
            });
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row = idx + 1; // 1-based, header is row 1
        let values: Vec<&str> = line.split(',').collect();
        if values.len() != d + 1 {
            return Err(TargetError::Parse {
                path: path_str,
                row,
                message: format!("expected {} columns, found {}", d + 1, values.len()),
            });
        }
        for (col, raw) in values.iter().enumerate() {
            let v: f64 = raw.trim().parse().map_err(|_| TargetError::Parse {
                path: path_str.clone(),
                row,
                message: format!("column {} is not a number: {raw:?}", col + 1),
            })?;
            if col < d {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    Ok(Dataset::new(d, xs, ys, None)?)
}
