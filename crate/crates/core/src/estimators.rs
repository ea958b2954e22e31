//! Rolling-window moment estimates: means, covariance, and the coskewness
//! (N×N²) and cokurtosis (N×N³) matrices.
//!
//! Windows are slices of rows, one row per day and one column per asset.
//! All sums run in ascending time order so results are bitwise
//! reproducible.

use std::fmt;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("window is empty")]
    EmptyWindow,
    #[error("covariance needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("row {row} has {found} columns, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("mean vector has length {found}, expected {expected}")]
    MeanLength { expected: usize, found: usize },
    #[error("geometric mean undefined: return {value} <= -1 for asset {asset}")]
    ReturnBelowMinusOne { asset: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, EstimationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    /// Arithmetic mean.
    Am,
    /// Geometric mean.
    Gm,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Am => "AM",
            EstimatorKind::Gm => "GM",
        })
    }
}

/// Normalization of the sample moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentDenominator {
    /// Covariance over `M - 1`, coskewness and cokurtosis over `M`.
    #[default]
    Sample,
    /// Every moment over `M`.
    Uniform,
}

impl fmt::Display for MomentDenominator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MomentDenominator::Sample => "sample",
            MomentDenominator::Uniform => "uniform",
        })
    }
}

impl std::str::FromStr for MomentDenominator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sample" => Ok(MomentDenominator::Sample),
            "uniform" => Ok(MomentDenominator::Uniform),
            other => Err(format!("expected sample|uniform, got {other:?}")),
        }
    }
}

impl MomentDenominator {
    fn covariance_divisor(self, m: usize) -> f64 {
        match self {
            MomentDenominator::Sample => (m - 1) as f64,
            MomentDenominator::Uniform => m as f64,
        }
    }
}

fn check_window<R: AsRef<[f64]>>(window: &[R]) -> Result<usize> {
    let n = window.first().ok_or(EstimationError::EmptyWindow)?.as_ref().len();
    for (row, r) in window.iter().enumerate() {
        if r.as_ref().len() != n {
            return Err(EstimationError::Ragged {
                row,
                expected: n,
                found: r.as_ref().len(),
            });
        }
    }
    Ok(n)
}

fn check_mean(mu: &DVector<f64>, n: usize) -> Result<()> {
    if mu.len() != n {
        return Err(EstimationError::MeanLength {
            expected: n,
            found: mu.len(),
        });
    }
    Ok(())
}

pub fn arithmetic_mean<R: AsRef<[f64]>>(window: &[R]) -> Result<DVector<f64>> {
    let n = check_window(window)?;
    let mut sum = DVector::zeros(n);
    for r in window {
        for (s, v) in sum.iter_mut().zip(r.as_ref()) {
            *s += v;
        }
    }
    Ok(sum / window.len() as f64)
}

/// `(prod (1 + r))^(1/M) - 1` per asset, computed through logs.
pub fn geometric_mean<R: AsRef<[f64]>>(window: &[R]) -> Result<DVector<f64>> {
    let n = check_window(window)?;
    let mut log_sum = DVector::zeros(n);
    for r in window {
        for (asset, (s, &v)) in log_sum.iter_mut().zip(r.as_ref()).enumerate() {
            if !(v > -1.0) {
                return Err(EstimationError::ReturnBelowMinusOne { asset, value: v });
            }
            *s += v.ln_1p();
        }
    }
    let m = window.len() as f64;
    Ok(log_sum.map(|s: f64| (s / m).exp_m1()))
}

fn centered<R: AsRef<[f64]>>(window: &[R], mu: &DVector<f64>) -> Vec<Vec<f64>> {
    window
        .iter()
        .map(|r| r.as_ref().iter().zip(mu.iter()).map(|(v, m)| v - m).collect())
        .collect()
}

/// Sample covariance around `mu`, divided by `M - 1`.
pub fn covariance<R: AsRef<[f64]>>(window: &[R], mu: &DVector<f64>) -> Result<DMatrix<f64>> {
    covariance_with(window, mu, MomentDenominator::Sample)
}

pub fn covariance_with<R: AsRef<[f64]>>(
    window: &[R],
    mu: &DVector<f64>,
    denominator: MomentDenominator,
) -> Result<DMatrix<f64>> {
    let n = check_window(window)?;
    check_mean(mu, n)?;
    let m = window.len();
    if m < 2 {
        return Err(EstimationError::TooFewRows(m));
    }
    let dev = centered(window, mu);
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for d in &dev {
                s += d[i] * d[j];
            }
            let v = s / denominator.covariance_divisor(m);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// N×N² coskewness matrix; entry `(i, j*N + l)` is `s_ijl`.
pub fn coskewness_matrix<R: AsRef<[f64]>>(window: &[R], mu: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = check_window(window)?;
    check_mean(mu, n)?;
    let dev = centered(window, mu);
    let m = window.len() as f64;
    let mut out = DMatrix::zeros(n, n * n);
    // Fill the sorted-index representatives i <= j <= l, then scatter to
    // every permutation so the symmetry is exact.
    for i in 0..n {
        for j in i..n {
            for l in j..n {
                let mut s = 0.0;
                for d in &dev {
                    s += d[i] * d[j] * d[l];
                }
                let v = s / m;
                for (a, b, c) in permutations3(i, j, l) {
                    out[(a, b * n + c)] = v;
                }
            }
        }
    }
    Ok(out)
}

/// N×N³ cokurtosis matrix; entry `(i, (j*N + l)*N + m)` is `k_ijlm`.
pub fn cokurtosis_matrix<R: AsRef<[f64]>>(window: &[R], mu: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = check_window(window)?;
    check_mean(mu, n)?;
    let dev = centered(window, mu);
    let m = window.len() as f64;
    let mut out = DMatrix::zeros(n, n * n * n);
    for i in 0..n {
        for j in i..n {
            for l in j..n {
                for k in l..n {
                    let mut s = 0.0;
                    for d in &dev {
                        s += d[i] * d[j] * d[l] * d[k];
                    }
                    let v = s / m;
                    for p in permutations4([i, j, l, k]) {
                        out[(p[0], (p[1] * n + p[2]) * n + p[3])] = v;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn permutations3(i: usize, j: usize, l: usize) -> [(usize, usize, usize); 6] {
    [(i, j, l), (i, l, j), (j, i, l), (j, l, i), (l, i, j), (l, j, i)]
}

fn permutations4(idx: [usize; 4]) -> impl Iterator<Item = [usize; 4]> {
    const ORDERS: [[usize; 4]; 24] = [
        [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
        [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
        [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
        [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
    ];
    ORDERS.into_iter().map(move |o| [idx[o[0]], idx[o[1]], idx[o[2]], idx[o[3]]])
}

/// Moment estimates for one estimation window.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub rm3: Option<DMatrix<f64>>,
    pub rm4: Option<DMatrix<f64>>,
    pub window_size: usize,
    pub estimator_kind: EstimatorKind,
    /// First day after the window, when known.
    pub as_of: Option<NaiveDate>,
}

impl MomentEstimates {
    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }

    /// `x' Σ x`.
    pub fn portfolio_variance(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for (i, xi) in x.iter().enumerate() {
            let row: f64 = x.iter().enumerate().map(|(j, xj)| self.sigma[(i, j)] * xj).sum();
            v += xi * row;
        }
        v
    }

    /// `x' RM3 (x ⊗ x)`: the third central moment of the portfolio return.
    pub fn portfolio_third_moment(&self, x: &[f64]) -> Option<f64> {
        self.rm3.as_ref().map(|rm3| third_moment(rm3, x))
    }

    /// `x' RM4 (x ⊗ x ⊗ x)`: the fourth central moment of the portfolio return.
    pub fn portfolio_fourth_moment(&self, x: &[f64]) -> Option<f64> {
        self.rm4.as_ref().map(|rm4| fourth_moment(rm4, x))
    }

    /// Third moment over `(x'Σx)^{3/2}`.
    pub fn portfolio_skewness(&self, x: &[f64]) -> Option<f64> {
        let v = self.portfolio_variance(x);
        self.portfolio_third_moment(x).map(|m3| m3 / v.powf(1.5))
    }

    /// Fourth moment over `(x'Σx)^2`, without subtracting 3.
    pub fn portfolio_raw_kurtosis(&self, x: &[f64]) -> Option<f64> {
        let v = self.portfolio_variance(x);
        self.portfolio_fourth_moment(x).map(|m4| m4 / (v * v))
    }
}

/// `x' RM3 (x ⊗ x)` for an N×N² coskewness matrix.
pub fn third_moment(rm3: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut inner = 0.0;
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..n {
                acc += rm3[(i, j * n + l)] * x[l];
            }
            inner += acc * x[j];
        }
        total += x[i] * inner;
    }
    total
}

/// Gradient of [`third_moment`]: `3 RM3 (x ⊗ x)` by index symmetry.
pub fn third_moment_gradient(rm3: &DMatrix<f64>, x: &[f64], grad: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        let mut inner = 0.0;
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..n {
                acc += rm3[(i, j * n + l)] * x[l];
            }
            inner += acc * x[j];
        }
        grad[i] = 3.0 * inner;
    }
}

/// `x' RM4 (x ⊗ x ⊗ x)` for an N×N³ cokurtosis matrix.
pub fn fourth_moment(rm4: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut g = vec![0.0; n];
    fourth_moment_gradient(rm4, x, &mut g);
    g.iter().zip(x).map(|(gi, xi)| gi * xi).sum::<f64>() / 4.0
}

/// Gradient of [`fourth_moment`]: `4 RM4 (x ⊗ x ⊗ x)`.
pub fn fourth_moment_gradient(rm4: &DMatrix<f64>, x: &[f64], grad: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            let mut sj = 0.0;
            for l in 0..n {
                let base = (j * n + l) * n;
                let mut sl = 0.0;
                for m in 0..n {
                    sl += rm4[(i, base + m)] * x[m];
                }
                sj += sl * x[l];
            }
            s += sj * x[j];
        }
        grad[i] = 4.0 * s;
    }
}

/// Options for [`estimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    pub kind: EstimatorKind,
    pub with_tensors: bool,
    pub denominator: MomentDenominator,
}

impl EstimateOptions {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            kind,
            with_tensors: false,
            denominator: MomentDenominator::Sample,
        }
    }

    pub fn with_tensors(mut self, yes: bool) -> Self {
        self.with_tensors = yes;
        self
    }

    pub fn denominator(mut self, d: MomentDenominator) -> Self {
        self.denominator = d;
        self
    }
}

/// All moments of one window. The covariance and the tensors are centered
/// on the mean of the selected kind.
pub fn estimate<R: AsRef<[f64]>>(window: &[R], opts: EstimateOptions) -> Result<MomentEstimates> {
    check_window(window)?;
    if window.len() < 2 {
        return Err(EstimationError::TooFewRows(window.len()));
    }
    let mu = match opts.kind {
        EstimatorKind::Am => arithmetic_mean(window)?,
        EstimatorKind::Gm => geometric_mean(window)?,
    };
    let sigma = covariance_with(window, &mu, opts.denominator)?;
    let (rm3, rm4) = if opts.with_tensors {
        (Some(coskewness_matrix(window, &mu)?), Some(cokurtosis_matrix(window, &mu)?))
    } else {
        (None, None)
    };
    Ok(MomentEstimates {
        mu,
        sigma,
        rm3,
        rm4,
        window_size: window.len(),
        estimator_kind: opts.kind,
        as_of: None,
    })
}
