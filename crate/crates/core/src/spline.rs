//! Clamped B-spline bases on [0, 1]: knot construction, Cox-de Boor evaluation,
//! derivatives, and penalized least-squares fitting through a banded normal system.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("evaluation point {0} is outside the spline domain [0, 1]")]
    OutOfDomain(f64),
    #[error("derivative is not defined for degree-0 splines")]
    UnsupportedDegree,
    #[error("coefficient length {found} does not match basis dimension {expected}")]
    CoefficientLength { expected: usize, found: usize },
    #[error("data must contain at least one sample")]
    EmptyData,
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("weights must be non-negative and finite")]
    InvalidWeight,
    #[error("ridge penalty must be non-negative and finite, got {0}")]
    InvalidRidge(f64),
    #[error("least-squares system is rank deficient even with ridge {0:e}")]
    RankDeficient(f64),
}

/// Clamped knot sequence on [0, 1] with uniformly spaced interior knots.
///
/// The boundary knots 0 and 1 are each repeated `degree + 1` times, so the
/// basis spans exactly `interior_count + degree + 1` functions.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    interior_count: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    /// Builds the clamped uniform knot vector with `interior_count` interior
    /// knots at i/(K+1) and (degree+1)-fold boundary knots.
    pub fn clamped_uniform(interior_count: usize, degree: usize) -> Self {
        let k = interior_count;
        let p = degree;
        let mut knots = Vec::with_capacity(k + 2 * (p + 1));
        knots.extend(std::iter::repeat(0.0).take(p + 1));
        for i in 1..=k {
            knots.push(i as f64 / (k + 1) as f64);
        }
        knots.extend(std::iter::repeat(1.0).take(p + 1));
        Self {
            degree: p,
            interior_count: k,
            knots,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_count(&self) -> usize {
        self.interior_count
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions: K + p + 1.
    pub fn dimension(&self) -> usize {
        self.interior_count + self.degree + 1
    }

    /// Index mu of the knot span containing x, clamped so that
    /// [t_mu, t_{mu+1}) is never degenerate. x = 1 maps to the last span,
    /// which closes the basis at the right endpoint.
    fn span_of(&self, x: f64) -> usize {
        let hi = self.degree + self.interior_count;
        let idx = self.knots.partition_point(|&t| t <= x);
        idx.saturating_sub(1).clamp(self.degree, hi)
    }

    /// Writes the `degree + 1` basis values that are non-zero at x into
    /// `values` and returns the index of the first one. Triangular Cox-de Boor
    /// scheme over the containing span; all denominators are non-zero there.
    pub fn eval_nonzero(&self, x: f64, values: &mut [f64]) -> Result<usize, SplineError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(SplineError::OutOfDomain(x));
        }
        let p = self.degree;
        debug_assert_eq!(values.len(), p + 1);
        let span = self.span_of(x);
        values[0] = 1.0;
        if p == 0 {
            return Ok(span);
        }
        const STACK: usize = 8;
        if p <= STACK {
            let mut left = [0.0; STACK];
            let mut right = [0.0; STACK];
            self.triangle(x, span, values, &mut left[..p], &mut right[..p]);
        } else {
            let mut left = vec![0.0; p];
            let mut right = vec![0.0; p];
            self.triangle(x, span, values, &mut left, &mut right);
        }
        Ok(span - p)
    }

    fn triangle(&self, x: f64, span: usize, values: &mut [f64], left: &mut [f64], right: &mut [f64]) {
        let t = &self.knots;
        for j in 1..=self.degree {
            left[j - 1] = x - t[span + 1 - j];
            right[j - 1] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r] + left[j - 1 - r]);
                values[r] = saved + right[r] * temp;
                saved = left[j - 1 - r] * temp;
            }
            values[j] = saved;
        }
    }

    /// All basis values at x as a dense vector of length K + p + 1.
    pub fn eval_basis(&self, x: f64) -> Result<Vec<f64>, SplineError> {
        let mut local = vec![0.0; self.degree + 1];
        let first = self.eval_nonzero(x, &mut local)?;
        let mut out = vec![0.0; self.dimension()];
        out[first..first + local.len()].copy_from_slice(&local);
        Ok(out)
    }

    /// Greville abscissae; a spline with these as coefficients is the
    /// identity on [0, 1]. Degree 0 falls back to span midpoints.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        let t = &self.knots;
        (0..self.dimension())
            .map(|i| {
                if p == 0 {
                    0.5 * (t[i] + t[i + 1])
                } else {
                    t[i + 1..=i + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }
}

/// Interior-knot count k = max(1, round(c * n^(1/(2r+1)))) balancing spline
/// bias against estimation variance for smoothness r.
pub fn knot_count_rule(n: usize, r: usize, c: f64) -> usize {
    let exponent = 1.0 / (2 * r + 1) as f64;
    let k = (c * (n as f64).powf(exponent)).round();
    (k as usize).max(1)
}

/// One univariate spline: a basis plus its coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFunction {
    basis: KnotVector,
    coefficients: Vec<f64>,
}

impl SplineFunction {
    pub fn new(basis: KnotVector, coefficients: Vec<f64>) -> Result<Self, SplineError> {
        if coefficients.len() != basis.dimension() {
            return Err(SplineError::CoefficientLength {
                expected: basis.dimension(),
                found: coefficients.len(),
            });
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(SplineError::NonFinite);
        }
        Ok(Self { basis, coefficients })
    }

    /// The identity map x -> x (Greville coefficients), scaled by `scale`.
    pub fn ramp(basis: KnotVector, scale: f64) -> Self {
        let coefficients = basis.greville().iter().map(|g| g * scale).collect();
        Self { basis, coefficients }
    }

    pub fn zero(basis: KnotVector) -> Self {
        let coefficients = vec![0.0; basis.dimension()];
        Self { basis, coefficients }
    }

    pub fn basis(&self) -> &KnotVector {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut Vec<f64> {
        &mut self.coefficients
    }

    pub fn eval(&self, x: f64) -> Result<f64, SplineError> {
        let p = self.basis.degree();
        const STACK: usize = 8;
        let mut stack = [0.0; STACK + 1];
        let mut heap;
        let local: &mut [f64] = if p < STACK + 1 {
            &mut stack[..p + 1]
        } else {
            heap = vec![0.0; p + 1];
            &mut heap
        };
        let first = self.basis.eval_nonzero(x, local)?;
        let mut acc = 0.0;
        for (offset, v) in local.iter().enumerate() {
            acc += v * self.coefficients[first + offset];
        }
        Ok(acc)
    }

    /// The exact derivative as a degree-(p-1) spline via the coefficient
    /// difference identity; evaluation is right-continuous at knots.
    pub fn derivative(&self) -> Result<SplineFunction, SplineError> {
        let p = self.basis.degree();
        if p == 0 {
            return Err(SplineError::UnsupportedDegree);
        }
        let lower = KnotVector::clamped_uniform(self.basis.interior_count(), p - 1);
        let t = self.basis.knots();
        let c = &self.coefficients;
        let coefficients = (0..self.coefficients.len() - 1)
            .map(|i| {
                let denom = t[i + p + 1] - t[i + 1];
                if denom > 0.0 {
                    p as f64 * (c[i + 1] - c[i]) / denom
                } else {
                    0.0
                }
            })
            .collect();
        SplineFunction::new(lower, coefficients)
    }

    pub fn eval_derivative(&self, x: f64) -> Result<f64, SplineError> {
        self.derivative()?.eval(x)
    }
}

/// Row-banded design matrix of basis values at sample sites: each row holds
/// the `degree + 1` values that can be non-zero, plus their first column.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    bandwidth: usize,
    first_col: Vec<usize>,
    values: Vec<f64>,
}

impl DesignMatrix {
    pub fn build(knots: &KnotVector, xs: &[f64]) -> Result<Self, SplineError> {
        let bandwidth = knots.degree() + 1;
        let mut first_col = Vec::with_capacity(xs.len());
        let mut values = vec![0.0; xs.len() * bandwidth];
        for (i, &x) in xs.iter().enumerate() {
            let row = &mut values[i * bandwidth..(i + 1) * bandwidth];
            first_col.push(knots.eval_nonzero(x, row)?);
        }
        Ok(Self {
            rows: xs.len(),
            cols: knots.dimension(),
            bandwidth,
            first_col,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Non-zero block of row i: (first column, values).
    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        (
            self.first_col[i],
            &self.values[i * self.bandwidth..(i + 1) * self.bandwidth],
        )
    }

    /// Accumulates the banded normal system B'WB + ridge*I and rhs B'Wy.
    fn normal_system(&self, ys: &[f64], weights: Option<&[f64]>, ridge: f64) -> (BandedSpd, Vec<f64>) {
        let dim = self.cols;
        let half_band = self.bandwidth - 1;
        let mut normal = BandedSpd::zeros(dim, half_band);
        let mut rhs = vec![0.0; dim];
        for i in 0..self.rows {
            let w = weights.map_or(1.0, |ws| ws[i]);
            if w == 0.0 {
                continue;
            }
            let (first, vals) = self.row(i);
            let wy = w * ys[i];
            for a in 0..vals.len() {
                rhs[first + a] += vals[a] * wy;
                let wa = w * vals[a];
                for b in a..vals.len() {
                    *normal.entry_mut(first + b, first + a) += wa * vals[b];
                }
            }
        }
        if ridge > 0.0 {
            for j in 0..dim {
                *normal.entry_mut(j, j) += ridge;
            }
        }
        (normal, rhs)
    }
}

/// Symmetric positive-definite band matrix stored as the lower band:
/// band[k][j] = A[j+k][j] for offsets k = 0..=half_band.
struct BandedSpd {
    dim: usize,
    half_band: usize,
    band: Vec<f64>,
}

impl BandedSpd {
    fn zeros(dim: usize, half_band: usize) -> Self {
        Self {
            dim,
            half_band,
            band: vec![0.0; dim * (half_band + 1)],
        }
    }

    /// Lower-triangle entry (row, col) with row >= col, row - col <= half_band.
    fn entry_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        debug_assert!(row >= col && row - col <= self.half_band);
        &mut self.band[(row - col) * self.dim + col]
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        self.band[(row - col) * self.dim + col]
    }

    fn set(&mut self, row: usize, col: usize, v: f64) {
        self.band[(row - col) * self.dim + col] = v;
    }

    /// In-place banded Cholesky A = LL'. Fails when a pivot falls below the
    /// rank-deficiency threshold relative to the largest diagonal entry.
    fn cholesky(mut self) -> Result<Self, SplineError> {
        let max_diag = (0..self.dim).map(|j| self.at(j, j)).fold(0.0f64, f64::max);
        let tol = max_diag * 1e-12;
        for j in 0..self.dim {
            let lo = j.saturating_sub(self.half_band);
            let mut s = self.at(j, j);
            for k in lo..j {
                let l = self.at(j, k);
                s -= l * l;
            }
            if !(s > tol) {
                return Err(SplineError::RankDeficient(0.0));
            }
            let ljj = s.sqrt();
            self.set(j, j, ljj);
            let hi = (j + self.half_band).min(self.dim - 1);
            for i in j + 1..=hi {
                let mut v = self.at(i, j);
                for k in i.saturating_sub(self.half_band)..j {
                    v -= self.at(i, k) * self.at(j, k);
                }
                self.set(i, j, v / ljj);
            }
        }
        Ok(self)
    }

    /// Solves LL'x = b given the factored band.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        for i in 0..self.dim {
            let lo = i.saturating_sub(self.half_band);
            let mut v = x[i];
            for k in lo..i {
                v -= self.at(i, k) * x[k];
            }
            x[i] = v / self.at(i, i);
        }
        for i in (0..self.dim).rev() {
            let hi = (i + self.half_band).min(self.dim - 1);
            let mut v = x[i];
            for k in i + 1..=hi {
                v -= self.at(k, i) * x[k];
            }
            x[i] = v / self.at(i, i);
        }
        x
    }
}

/// Result of a least-squares spline fit. `ridge_fallback` is set when a
/// rank-deficient unpenalized system forced the automatic 1e-8 ridge.
#[derive(Debug, Clone)]
pub struct LsFit {
    pub spline: SplineFunction,
    pub ridge_fallback: bool,
}

/// Ridge applied automatically when an unpenalized system is rank deficient,
/// e.g. knot spans left empty by small samples.
pub const FALLBACK_RIDGE: f64 = 1e-8;

/// Fits spline coefficients minimizing
/// sum_i w_i (y_i - f(x_i))^2 + ridge * |c|^2
/// through a banded Cholesky factorization of the normal equations.
pub fn fit_least_squares(
    xs: &[f64],
    ys: &[f64],
    weights: Option<&[f64]>,
    knots: &KnotVector,
    ridge: f64,
) -> Result<LsFit, SplineError> {
    if xs.is_empty() {
        return Err(SplineError::EmptyData);
    }
    if xs.len() != ys.len() {
        return Err(SplineError::LengthMismatch(xs.len(), ys.len()));
    }
    if let Some(ws) = weights {
        if ws.len() != xs.len() {
            return Err(SplineError::LengthMismatch(ws.len(), xs.len()));
        }
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(SplineError::InvalidWeight);
        }
    }
    if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
        return Err(SplineError::NonFinite);
    }
    if !ridge.is_finite() || ridge < 0.0 {
        return Err(SplineError::InvalidRidge(ridge));
    }

    let design = DesignMatrix::build(knots, xs)?;
    let (normal, rhs) = design.normal_system(ys, weights, ridge);
    match normal.cholesky() {
        Ok(factor) => Ok(LsFit {
            spline: SplineFunction::new(knots.clone(), factor.solve(&rhs))?,
            ridge_fallback: false,
        }),
        Err(_) => {
            let retry_ridge = if ridge > 0.0 { ridge } else { FALLBACK_RIDGE };
            let (normal, rhs) = design.normal_system(ys, weights, retry_ridge);
            let factor = normal
                .cholesky()
                .map_err(|_| SplineError::RankDeficient(retry_ridge))?;
            Ok(LsFit {
                spline: SplineFunction::new(knots.clone(), factor.solve(&rhs))?,
                ridge_fallback: true,
            })
        }
    }
}
