//! Constrained solvers for the allocation problems.
//!
//! The feasible set is always the same small polytope: per-asset box
//! bounds, a cap (or, in equality mode, a fixed sum) on the long-only block,
//! and a cap on the sum of all weights. Quadratic programs go through a dual
//! active-set method; smooth nonlinear objectives through a multistart
//! projected quasi-Newton (SQP) iteration whose subproblems and projections
//! reuse the same QP routine.

mod nonlinear;
mod qp;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use nonlinear::{solve_nonlinear, NonlinearOptions, Objective, Sense};
use qp::{QpFailure, Row};

/// Feasibility tolerance every returned weight vector satisfies.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Eigenvalues of Σ below this are raised to it before factorization.
pub const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("return floor {target} is not attainable on the feasible set")]
    InfeasibleReturnFloor { target: f64 },
    #[error("the constraint set is empty")]
    InfeasibleConstraints,
    #[error("covariance has eigenvalue {min_eigenvalue} below -1e-10")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("objective is not finite at a feasible point (start {start})")]
    NonFiniteObjective { start: usize },
    #[error("objective is undefined at every starting point")]
    NoFeasibleStart,
    #[error("expected dimension {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BudgetMode {
    /// Long block sums to at most its cap.
    #[default]
    Inequality,
    /// Long block sums to exactly its cap.
    Equality,
}

impl fmt::Display for BudgetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BudgetMode::Inequality => "inequality",
            BudgetMode::Equality => "equality",
        })
    }
}

impl std::str::FromStr for BudgetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inequality" => Ok(BudgetMode::Inequality),
            "equality" => Ok(BudgetMode::Equality),
            other => Err(format!("expected inequality|equality, got {other:?}")),
        }
    }
}

/// Box bounds plus the two budget rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    n_assets: usize,
    shortable_index: Option<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    long_budget_cap: f64,
    total_cap: f64,
    budget_mode: BudgetMode,
}

impl ConstraintSet {
    /// Long-only weights in `[0, 1]` except the shortable asset in `[-1, 1]`;
    /// long block and total each capped at 1.
    pub fn standard(n_assets: usize, shortable_index: Option<usize>) -> Self {
        let mut lower = vec![0.0; n_assets];
        if let Some(s) = shortable_index {
            assert!(s < n_assets, "shortable index {s} out of range for {n_assets} assets");
            lower[s] = -1.0;
        }
        Self {
            n_assets,
            shortable_index,
            lower,
            upper: vec![1.0; n_assets],
            long_budget_cap: 1.0,
            total_cap: 1.0,
            budget_mode: BudgetMode::Inequality,
        }
    }

    pub fn long_only(n_assets: usize) -> Self {
        Self::standard(n_assets, None)
    }

    /// Custom bounds; `lower <= upper` is required per asset.
    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, SolverError> {
        if lower.len() != self.n_assets || upper.len() != self.n_assets {
            return Err(SolverError::DimensionMismatch {
                expected: self.n_assets,
                found: lower.len().min(upper.len()),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(SolverError::InfeasibleConstraints);
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn with_budget_mode(mut self, mode: BudgetMode) -> Self {
        self.budget_mode = mode;
        self
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn shortable_index(&self) -> Option<usize> {
        self.shortable_index
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn budget_mode(&self) -> BudgetMode {
        self.budget_mode
    }

    pub fn long_budget_cap(&self) -> f64 {
        self.long_budget_cap
    }

    pub fn total_cap(&self) -> f64 {
        self.total_cap
    }

    fn is_long(&self, i: usize) -> bool {
        Some(i) != self.shortable_index
    }

    /// Largest amount by which `x` breaks any constraint (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        if x.len() != self.n_assets {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for ((xi, lo), hi) in x.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(lo - xi).max(xi - hi);
        }
        let long: f64 = (0..self.n_assets).filter(|&i| self.is_long(i)).map(|i| x[i]).sum();
        worst = match self.budget_mode {
            BudgetMode::Inequality => worst.max(long - self.long_budget_cap),
            BudgetMode::Equality => worst.max((long - self.long_budget_cap).abs()),
        };
        let total: f64 = x.iter().sum();
        worst.max(total - self.total_cap)
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    pub fn equal_weight(&self) -> Vec<f64> {
        vec![1.0 / self.n_assets as f64; self.n_assets]
    }

    /// Constraint rows `n'x >= b`, normals scaled to unit length.
    pub(crate) fn rows(&self) -> Vec<Row> {
        let n = self.n_assets;
        let mut rows = Vec::with_capacity(2 * n + 2);
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            rows.push(Row::geq(e.clone(), self.lower[i]));
            rows.push(Row::geq(-e, -self.upper[i]));
        }
        let long: DVector<f64> = DVector::from_fn(n, |i, _| if self.is_long(i) { 1.0 } else { 0.0 });
        let long_norm = long.norm();
        if long_norm > 0.0 {
            let a = long / long_norm;
            let cap = self.long_budget_cap / long_norm;
            rows.push(match self.budget_mode {
                BudgetMode::Inequality => Row::geq(-a, -cap),
                BudgetMode::Equality => Row::eq(a, cap),
            });
        }
        if self.shortable_index.is_some() || long_norm == 0.0 {
            let root = (n as f64).sqrt();
            rows.push(Row::geq(DVector::from_element(n, -1.0 / root), -self.total_cap / root));
        }
        rows
    }

    fn check_dim(&self, found: usize) -> Result<(), SolverError> {
        if found != self.n_assets {
            return Err(SolverError::DimensionMismatch {
                expected: self.n_assets,
                found,
            });
        }
        Ok(())
    }

    /// Range `[lo, hi]` of scalings `c >= 0` keeping `c * x` feasible, for a
    /// feasible `x`.
    pub(crate) fn ray_range(&self, x: &[f64]) -> (f64, f64) {
        let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
        for row in self.rows() {
            let nx: f64 = row.normal.iter().zip(x).map(|(a, b)| a * b).sum();
            if row.equality {
                if nx != 0.0 {
                    lo = lo.max(row.rhs / nx);
                    hi = hi.min(row.rhs / nx);
                }
            } else if nx > 0.0 {
                lo = lo.max(row.rhs / nx);
            } else if nx < 0.0 {
                hi = hi.min(row.rhs / nx);
            }
        }
        (lo, hi)
    }
}

/// Result of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub x_star: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest stationarity or feasibility violation at `x_star`.
    pub kkt_residual: f64,
    /// Σ had eigenvalues raised to [`EIGEN_FLOOR`].
    pub eigen_floored: bool,
}

/// Symmetrizes Σ, clips eigenvalues in `[-1e-10, 0)` to 0 and raises
/// everything below [`EIGEN_FLOOR`] to it. Returns the repaired matrix and
/// whether any eigenvalue was raised.
pub fn floor_covariance(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool), SolverError> {
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min >= -1e-10) {
        return Err(SolverError::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    if min >= EIGEN_FLOOR {
        return Ok((sym, false));
    }
    let lambda = eig.eigenvalues.map(|e| e.max(EIGEN_FLOOR));
    let q = &eig.eigenvectors;
    let mut repaired = q * DMatrix::from_diagonal(&lambda) * q.transpose();
    repaired = (&repaired + repaired.transpose()) * 0.5;
    Ok((repaired, true))
}

/// Optional `μ'x >= target` row for [`solve_qp`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnFloor {
    pub mu: Vec<f64>,
    pub target: f64,
}

/// Minimizes `x'Σx` over the constraint set, optionally with `μ'x >= target`.
pub fn solve_qp(
    sigma: &DMatrix<f64>,
    constraints: &ConstraintSet,
    floor: Option<&ReturnFloor>,
) -> Result<SolverReport, SolverError> {
    let n = constraints.n_assets();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(SolverError::DimensionMismatch {
            expected: n,
            found: sigma.nrows(),
        });
    }
    let (repaired, eigen_floored) = floor_covariance(sigma)?;
    // scale so the objective is O(1); the argmin is unchanged
    let scale = {
        let d = (0..n).map(|i| repaired[(i, i)]).sum::<f64>() / n as f64;
        if d > 0.0 {
            d
        } else {
            1.0
        }
    };
    let g = &repaired * (2.0 / scale);
    let mut rows = constraints.rows();
    let floor_row = match floor {
        Some(f) => {
            constraints.check_dim(f.mu.len())?;
            let mu = DVector::from_row_slice(&f.mu);
            let norm = mu.norm();
            if norm == 0.0 {
                if f.target > 0.0 {
                    return Err(SolverError::InfeasibleReturnFloor { target: f.target });
                }
                None
            } else {
                rows.push(Row::geq(mu / norm, f.target / norm));
                Some(rows.len() - 1)
            }
        }
        None => None,
    };
    let sol = match qp::solve(&g, &DVector::zeros(n), &rows) {
        Ok(s) => s,
        Err(QpFailure::Infeasible(row)) => {
            // distinguish an unreachable floor from an empty base polytope
            return Err(match (floor, floor_row) {
                (Some(f), Some(fr)) if row == fr || qp::solve(&g, &DVector::zeros(n), &constraints.rows()).is_ok() => {
                    SolverError::InfeasibleReturnFloor { target: f.target }
                }
                _ => SolverError::InfeasibleConstraints,
            });
        }
        Err(QpFailure::NotPositiveDefinite) => return Err(SolverError::Numerical("factorization failed".into())),
        Err(QpFailure::IterationLimit) => return Err(SolverError::Numerical("active-set iteration limit".into())),
    };
    let x = polish(sol.x.as_slice(), constraints);
    if let Some(f) = floor {
        let achieved: f64 = f.mu.iter().zip(&x).map(|(m, w)| m * w).sum();
        if achieved < f.target - FEASIBILITY_TOL {
            return Err(SolverError::InfeasibleReturnFloor { target: f.target });
        }
    }
    // stationarity of the scaled problem: G x - Σ u_k n_k
    let xv = DVector::from_row_slice(&x);
    let mut resid = &g * &xv;
    for (k, u) in &sol.active {
        resid -= &rows[*k].normal * *u;
    }
    let sigma_sym = (sigma + sigma.transpose()) * 0.5;
    Ok(SolverReport {
        objective_value: xv.dot(&(&sigma_sym * &xv)),
        iterations: sol.iterations,
        converged: true,
        kkt_residual: resid.amax().max(constraints.max_violation(&x)),
        eigen_floored,
        x_star: x,
    })
}

/// Clips rounding-level excursions outside the box.
fn polish(x: &[f64], c: &ConstraintSet) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, v)| v.clamp(c.lower[i], c.upper[i]))
        .collect()
}

/// Euclidean projection onto the constraint set.
pub fn project_feasible(x: &[f64], constraints: &ConstraintSet) -> Result<Vec<f64>, SolverError> {
    constraints.check_dim(x.len())?;
    if constraints.max_violation(x) == 0.0 {
        return Ok(x.to_vec());
    }
    let n = x.len();
    let g = DMatrix::identity(n, n);
    let c = -DVector::from_row_slice(x);
    match qp::solve(&g, &c, &constraints.rows()) {
        Ok(sol) => Ok(polish(sol.x.as_slice(), constraints)),
        Err(QpFailure::Infeasible(_)) => Err(SolverError::InfeasibleConstraints),
        Err(e) => Err(SolverError::Numerical(format!("{e:?}"))),
    }
}
