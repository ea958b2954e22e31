//! Dense Goldfarb–Idnani dual active-set method.
//!
//! Solves `min ½ x'Gx + c'x` subject to `n_k'x >= b_k` (or `= b_k`) for a
//! positive definite `G`. The problems here have at most a couple of dozen
//! constraints in ≤ 10 dimensions, so the reduced operators are rebuilt from
//! scratch at every step instead of being updated by Givens rotations.

use nalgebra::{DMatrix, DVector};

/// One linear constraint `normal'x >= rhs`, or `normal'x = rhs` when `equality`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Row {
    pub normal: DVector<f64>,
    pub rhs: f64,
    pub equality: bool,
}

impl Row {
    pub fn geq(normal: DVector<f64>, rhs: f64) -> Self {
        Self {
            normal,
            rhs,
            equality: false,
        }
    }

    pub fn eq(normal: DVector<f64>, rhs: f64) -> Self {
        Self {
            normal,
            rhs,
            equality: true,
        }
    }

    pub fn slack(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) - self.rhs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct QpSolution {
    pub x: DVector<f64>,
    /// `(row index, multiplier)` for the final active set. Equality
    /// multipliers carry the sign of the row as stored.
    pub active: Vec<(usize, f64)>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum QpFailure {
    /// No point satisfies the constraints; carries the offending row.
    Infeasible(usize),
    /// `G` is not positive definite.
    NotPositiveDefinite,
    IterationLimit,
}

const VIOLATION_TOL: f64 = 1e-12;

struct Active {
    row: usize,
    /// +1 or -1; equalities may enter with a flipped normal.
    sign: f64,
    u: f64,
    equality: bool,
}

pub(crate) fn solve(g: &DMatrix<f64>, c: &DVector<f64>, rows: &[Row]) -> Result<QpSolution, QpFailure> {
    let n = c.len();
    let h = g.clone().cholesky().ok_or(QpFailure::NotPositiveDefinite)?.inverse();
    let h_scale = (0..n).map(|i| h[(i, i)]).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    let mut x = -(&h * c);
    let mut active: Vec<Active> = Vec::new();
    let max_iter = 50 * (rows.len() + n + 1);
    let mut iterations = 0;

    let order: Vec<usize> = (0..rows.len())
        .filter(|&k| rows[k].equality)
        .chain((0..rows.len()).filter(|&k| !rows[k].equality))
        .collect();
    let mut eq_pending: Vec<usize> = order.iter().copied().filter(|&k| rows[k].equality).collect();
    eq_pending.reverse();

    loop {
        // pick the next constraint to add
        let (p, sign) = if let Some(p) = eq_pending.pop() {
            let s = rows[p].slack(&x);
            (p, if s > 0.0 { -1.0 } else { 1.0 })
        } else {
            let mut worst: Option<(usize, f64)> = None;
            for (k, row) in rows.iter().enumerate() {
                if row.equality || active.iter().any(|a| a.row == k) {
                    continue;
                }
                let s = row.slack(&x);
                if s < -VIOLATION_TOL && worst.is_none_or(|(_, w)| s < w) {
                    worst = Some((k, s));
                }
            }
            match worst {
                Some((p, _)) => (p, 1.0),
                None => {
                    return Ok(QpSolution {
                        x,
                        active: active.iter().map(|a| (a.row, a.sign * a.u)).collect(),
                        iterations,
                    })
                }
            }
        };
        let n_plus = &rows[p].normal * sign;
        let b_plus = rows[p].rhs * sign;
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpFailure::IterationLimit);
            }
            let (z, r) = directions(&h, rows, &active, &n_plus);
            let s_p = n_plus.dot(&x) - b_plus;

            // partial step: first active inequality whose multiplier hits zero
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, a) in active.iter().enumerate() {
                if !a.equality && r[k] > 0.0 {
                    let t = a.u / r[k];
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(k);
                    }
                }
            }
            let zn = z.dot(&n_plus);
            let t2 = if zn <= 1e-13 * h_scale * n_plus.norm_squared() {
                f64::INFINITY
            } else {
                -s_p / zn
            };
            let t = t1.min(t2);
            if t.is_infinite() {
                if rows[p].equality && s_p.abs() <= VIOLATION_TOL * (1.0 + b_plus.abs()) {
                    // dependent equality already satisfied
                    break;
                }
                return Err(QpFailure::Infeasible(p));
            }
            if t2.is_infinite() {
                for (a, rk) in active.iter_mut().zip(r.iter()) {
                    a.u -= t * rk;
                }
                u_plus += t;
                active.remove(drop_at.expect("finite t1 has an index"));
                continue;
            }
            x += &z * t;
            for (a, rk) in active.iter_mut().zip(r.iter()) {
                a.u -= t * rk;
            }
            u_plus += t;
            if t2 <= t1 {
                active.push(Active {
                    row: p,
                    sign,
                    u: u_plus,
                    equality: rows[p].equality,
                });
                break;
            }
            active.remove(drop_at.expect("finite t1 has an index"));
        }
    }
}

/// Primal direction `z = H_A n⁺` and dual direction `r = N* n⁺` for the
/// current active set.
fn directions(h: &DMatrix<f64>, rows: &[Row], active: &[Active], n_plus: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let q = active.len();
    let hn_plus = h * n_plus;
    if q == 0 {
        return (hn_plus, DVector::zeros(0));
    }
    let n = n_plus.len();
    let mut nmat = DMatrix::zeros(n, q);
    for (k, a) in active.iter().enumerate() {
        nmat.set_column(k, &(&rows[a.row].normal * a.sign));
    }
    let hn = h * &nmat;
    let m = nmat.transpose() * &hn;
    let rhs = hn.transpose() * n_plus;
    let r = match m.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => m.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(q)),
    };
    let z = hn_plus - hn * &r;
    (z, r)
}
