//! Multistart projected quasi-Newton ascent.
//!
//! Each iteration solves the quadratic model `max g'd - ½ d'Bd` over the
//! polytope shifted to the current point (a scaled projection step), then
//! backtracks along `d`. `B` is a damped BFGS approximation of the negated
//! Hessian, so it stays positive definite on nonconcave objectives.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::qp::{self, QpFailure, Row};
use super::{project_feasible, BudgetMode, ConstraintSet, SolverError, SolverReport, FEASIBILITY_TOL};

/// A smooth scalar function of the weight vector.
///
/// For maximization a value of `-inf` marks a point outside the objective's
/// domain (for minimization, `+inf`); the solver never steps there. `NaN`
/// or an infinity of the wrong sign is reported as a caller bug.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
}

impl<F, G> Objective for (F, G)
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        (self.1)(x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::Maximize => 1.0,
            Sense::Minimize => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearOptions {
    /// Total number of starting points, deterministic ones first.
    pub starts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Stop when the objective moves less than this (relative to `1 + |f|`).
    pub objective_tol: f64,
    /// Stop when the projected-gradient residual drops below this.
    pub kkt_tol: f64,
}

impl Default for NonlinearOptions {
    fn default() -> Self {
        Self {
            starts: 16,
            seed: 0,
            max_iterations: 10_000,
            objective_tol: 1e-10,
            kkt_tol: 1e-8,
        }
    }
}

impl NonlinearOptions {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_starts(mut self, starts: usize) -> Self {
        self.starts = starts;
        self
    }
}

/// Sign-adjusted view so the core loop always maximizes.
struct Oriented<'a> {
    inner: &'a dyn Objective,
    sign: f64,
}

impl Oriented<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.sign * self.inner.value(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.inner.gradient(x, grad);
        for g in grad.iter_mut() {
            *g *= self.sign;
        }
    }
}

struct Run {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    converged: bool,
    kkt: f64,
}

/// Best local optimum of `objective` over the constraint set across a
/// deterministic set of starts. Among optima whose values tie, the one
/// closest to the equal-weight point wins, then the lowest start index.
pub fn solve_nonlinear(
    objective: &dyn Objective,
    sense: Sense,
    constraints: &ConstraintSet,
    options: &NonlinearOptions,
) -> Result<SolverReport, SolverError> {
    let obj = Oriented {
        inner: objective,
        sign: sense.sign(),
    };
    let equal = constraints.equal_weight();
    let mut best: Option<(Run, f64)> = None;
    let mut total_iterations = 0;

    for (index, start) in starting_points(constraints, options)?.into_iter().enumerate() {
        let f0 = obj.value(&start);
        if f0 == f64::NEG_INFINITY {
            continue;
        }
        if !f0.is_finite() {
            return Err(SolverError::NonFiniteObjective { start: index });
        }
        let run = ascend(&obj, constraints, start, f0, options, index)?;
        total_iterations += run.iterations;
        let dist = distance(&run.x, &equal);
        let better = match &best {
            None => true,
            Some((b, bd)) => {
                let tie = options.objective_tol * (1.0 + b.f.abs());
                run.f > b.f + tie || (run.f >= b.f - tie && dist < *bd)
            }
        };
        if better {
            best = Some((run, dist));
        }
    }
    let (mut run, _) = best.ok_or(SolverError::NoFeasibleStart)?;
    tie_break_along_ray(&obj, constraints, &mut run, options);

    Ok(SolverReport {
        objective_value: run.f * obj.sign,
        iterations: total_iterations,
        converged: run.converged,
        kkt_residual: run.kkt.max(constraints.max_violation(&run.x)),
        eigen_floored: false,
        x_star: run.x,
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

/// Zero, equal weight, one vertex per long asset, then seeded random points,
/// all projected onto the feasible set.
fn starting_points(c: &ConstraintSet, options: &NonlinearOptions) -> Result<Vec<Vec<f64>>, SolverError> {
    let n = c.n_assets();
    let mut raw = vec![vec![0.0; n], c.equal_weight()];
    for i in (0..n).filter(|&i| Some(i) != c.shortable_index()) {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        raw.push(e);
    }
    raw.truncate(options.starts.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    while raw.len() < options.starts {
        raw.push(
            (0..n)
                .map(|i| {
                    let (lo, hi) = (c.lower()[i], c.upper()[i]);
                    if hi > lo {
                        rng.gen_range(lo..=hi)
                    } else {
                        lo
                    }
                })
                .collect(),
        );
    }
    raw.iter().map(|x| project_feasible(x, c)).collect()
}

fn ascend(
    obj: &Oriented<'_>,
    c: &ConstraintSet,
    mut x: Vec<f64>,
    mut f: f64,
    options: &NonlinearOptions,
    start: usize,
) -> Result<Run, SolverError> {
    let n = x.len();
    let rows = c.rows();
    let mut g = vec![0.0; n];
    obj.gradient(&x, &mut g);
    check_gradient(&g, start)?;
    let mut b = initial_metric(&g);
    let mut fresh_metric = true;
    let mut small_changes = 0;
    let mut kkt = projected_gradient_residual(&x, &g, c);
    let mut converged = kkt < options.kkt_tol;
    let mut iterations = 0;

    while !converged && iterations < options.max_iterations {
        iterations += 1;
        let d = match model_step(&b, &g, &x, &rows) {
            Some(d) => d,
            None => break,
        };
        if d.iter().all(|v| v.abs() <= 1e-14) {
            converged = true;
            break;
        }
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let mut alpha = 1.0;
        let mut accepted = None;
        if slope > 0.0 {
            while alpha > 1e-14 {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
                let ft = obj.value(&trial);
                if ft.is_nan() || ft == f64::INFINITY {
                    return Err(SolverError::NonFiniteObjective { start });
                }
                if ft >= f + 1e-4 * alpha * slope {
                    accepted = Some((trial, ft));
                    break;
                }
                alpha *= 0.5;
            }
        }
        let Some((x_new, f_new)) = accepted else {
            if fresh_metric {
                break;
            }
            b = initial_metric(&g);
            fresh_metric = true;
            continue;
        };

        let mut g_new = vec![0.0; n];
        obj.gradient(&x_new, &mut g_new);
        check_gradient(&g_new, start)?;
        let s = DVector::from_iterator(n, x_new.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, g.iter().zip(&g_new).map(|(a, b)| a - b));
        if fresh_metric {
            let sy = s.dot(&y);
            if sy > 0.0 {
                b = DMatrix::identity(n, n) * (y.norm_squared() / sy);
            }
        }
        damped_bfgs(&mut b, &s, &y);
        fresh_metric = false;

        let change = f_new - f;
        x = x_new;
        f = f_new;
        g = g_new;
        kkt = projected_gradient_residual(&x, &g, c);
        if kkt < options.kkt_tol {
            converged = true;
        } else if change.abs() <= options.objective_tol * (1.0 + f.abs()) {
            small_changes += 1;
            if small_changes >= 3 {
                converged = true;
            }
        } else {
            small_changes = 0;
        }
    }

    if c.max_violation(&x) > 0.0 {
        x = project_feasible(&x, c)?;
        f = obj.value(&x);
        if f.is_nan() {
            return Err(SolverError::NonFiniteObjective { start });
        }
    }
    Ok(Run {
        x,
        f,
        iterations,
        converged: converged || kkt < options.kkt_tol.sqrt(),
        kkt,
    })
}

fn check_gradient(g: &[f64], start: usize) -> Result<(), SolverError> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SolverError::NonFiniteObjective { start })
    }
}

fn initial_metric(g: &[f64]) -> DMatrix<f64> {
    let n = g.len();
    let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    DMatrix::identity(n, n) * scale
}

/// Powell-damped BFGS update of the negated-Hessian model, with
/// `y = g_old - g_new`.
fn damped_bfgs(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 0.0) {
        return;
    }
    let sy = s.dot(y);
    let y = if sy < 0.2 * sbs {
        let theta = 0.8 * sbs / (sbs - sy);
        y * theta + &bs * (1.0 - theta)
    } else {
        y.clone()
    };
    let sy = s.dot(&y);
    if !(sy > 0.0) {
        return;
    }
    *b -= &bs * bs.transpose() / sbs;
    *b += &y * y.transpose() / sy;
    let sym = (&*b + b.transpose()) * 0.5;
    *b = sym;
}

/// `argmax g'd - ½ d'Bd` subject to `x + d` feasible.
fn model_step(b: &DMatrix<f64>, g: &[f64], x: &[f64], rows: &[Row]) -> Option<Vec<f64>> {
    let xv = DVector::from_row_slice(x);
    let shifted: Vec<Row> = rows
        .iter()
        .map(|r| Row {
            normal: r.normal.clone(),
            rhs: r.rhs - r.normal.dot(&xv),
            equality: r.equality,
        })
        .collect();
    let c = -DVector::from_row_slice(g);
    match qp::solve(b, &c, &shifted) {
        Ok(sol) => Some(sol.x.iter().copied().collect()),
        Err(QpFailure::NotPositiveDefinite) | Err(QpFailure::Infeasible(_)) | Err(QpFailure::IterationLimit) => None,
    }
}

/// `max |x - P(x + g)|`, zero exactly at first-order stationary points.
fn projected_gradient_residual(x: &[f64], g: &[f64], c: &ConstraintSet) -> f64 {
    let moved: Vec<f64> = x.iter().zip(g).map(|(a, b)| a + b).collect();
    match project_feasible(&moved, c) {
        Ok(p) => p.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    }
}

/// Objectives that are constant along rays from the origin (the Sharpe
/// family with zero risk-free rate) have a continuum of optima; slide the
/// winner along its ray to the point nearest equal weight when that does
/// not lower the objective.
fn tie_break_along_ray(obj: &Oriented<'_>, c: &ConstraintSet, run: &mut Run, options: &NonlinearOptions) {
    if c.budget_mode() == BudgetMode::Equality {
        return;
    }
    let xx: f64 = run.x.iter().map(|v| v * v).sum();
    if xx <= 0.0 {
        return;
    }
    let equal = c.equal_weight();
    let xe: f64 = run.x.iter().zip(&equal).map(|(a, b)| a * b).sum();
    let (lo, hi) = c.ray_range(&run.x);
    if lo > hi {
        return;
    }
    let scale = (xe / xx).clamp(lo, hi);
    if (scale - 1.0).abs() < 1e-12 {
        return;
    }
    let candidate: Vec<f64> = run.x.iter().map(|v| v * scale).collect();
    if c.max_violation(&candidate) > FEASIBILITY_TOL * 1e-2 {
        return;
    }
    let f = obj.value(&candidate);
    if f.is_finite() && f >= run.f - options.objective_tol * (1.0 + run.f.abs()) {
        run.x = candidate;
        run.f = f;
    }
}
