//! Small dense convex quadratic programs via a dual active-set method.
//!
//! Solves `min ½ xᵀG x + aᵀx` subject to `Cᵀx ≥ b` for strictly convex
//! `G`. The dual iteration starts from the unconstrained minimizer and
//! adds violated constraints one at a time, so it needs no feasible
//! starting point and detects inconsistent constraints cleanly — the
//! per-step workhorse behind the cruise controller.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub value: f64,
    /// Indices of constraints active at the solution.
    pub active: Vec<usize>,
    /// Multipliers matching `active`.
    pub dual: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub enum QpOutcome {
    Optimal(QpSolution),
    /// The inequality system admits no point.
    Infeasible,
}

const TOL: f64 = 1e-10;
const MAX_STALL_DROPS: usize = 200;

/// Solve `min ½ xᵀG x + aᵀx  s.t.  Cᵀx ≥ b`. `constraints` holds one
/// column per inequality. Errors on shape mismatch or indefinite `G`.
pub fn solve_qp(
    g: &DMatrix<f64>,
    a: &DVector<f64>,
    constraints: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<QpOutcome> {
    let n = g.nrows();
    let m = constraints.ncols();
    if g.ncols() != n || a.len() != n || constraints.nrows() != n || b.len() != m {
        return Err(Error::InvalidParameter("qp dimension mismatch".into()));
    }
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("qp hessian not positive definite".into()))?;

    // Unconstrained minimizer and the inverse-factor workspace J = L⁻ᵀ.
    let mut x = -chol.solve(a);
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::InvalidParameter("qp factor solve failed".into()))?;
    let mut j = l_inv.transpose();
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();

    let scale = 1.0 + a.amax().max(b.amax());
    let tol = TOL * scale;
    let mut iterations = 0usize;
    let max_iterations = 50 * (n + m).max(10);

    'outer: loop {
        iterations += 1;
        if iterations > max_iterations {
            return Err(Error::InvalidParameter(
                "qp iteration limit exceeded".into(),
            ));
        }

        // Most violated inactive constraint.
        let mut chosen = None;
        let mut worst = -tol;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let s = constraints.column(i).dot(&x) - b[i];
            if s < worst {
                worst = s;
                chosen = Some(i);
            }
        }
        let Some(p) = chosen else {
            let value = 0.5 * (g * &x).dot(&x) + a.dot(&x);
            return Ok(QpOutcome::Optimal(QpSolution {
                x,
                value,
                active,
                dual: u,
                iterations,
            }));
        };
        let np = constraints.column(p).clone_owned();
        let mut u_plus = 0.0f64;
        let mut drops = 0usize;

        loop {
            let q = active.len();
            let d = j.transpose() * &np;
            // Primal step direction from the null-space columns of J.
            let mut z = DVector::<f64>::zeros(n);
            for col in q..n {
                z.axpy(d[col], &j.column(col).clone_owned(), 1.0);
            }
            // Dual step direction r = R⁻¹ d₁.
            let mut rstep = vec![0.0; q];
            for row in (0..q).rev() {
                let mut acc = d[row];
                for col in row + 1..q {
                    acc -= r[(row, col)] * rstep[col];
                }
                rstep[row] = acc / r[(row, row)];
            }

            let mut t1 = f64::INFINITY;
            let mut drop_idx = None;
            for k in 0..q {
                if rstep[k] > tol {
                    let ratio = u[k] / rstep[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_idx = Some(k);
                    }
                }
            }
            let znorm2 = z.dot(&z);
            let s_p = np.dot(&x) - b[p];
            let t2 = if znorm2 > tol * tol {
                -s_p / z.dot(&np)
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);

            if !t.is_finite() {
                return Ok(QpOutcome::Infeasible);
            }

            if t2.is_infinite() {
                // Dual-only step: shed the blocking constraint.
                u_plus += t;
                for k in 0..q {
                    u[k] -= t * rstep[k];
                }
                let k = drop_idx.expect("finite t1 must name a constraint");
                drop_constraint(&mut j, &mut r, &mut active, &mut u, k);
                drops += 1;
                if drops > MAX_STALL_DROPS {
                    return Err(Error::InvalidParameter("qp stalled".into()));
                }
                continue;
            }

            x.axpy(t, &z, 1.0);
            u_plus += t;
            for k in 0..q {
                u[k] -= t * rstep[k];
            }

            if t2 <= t1 {
                // Full step: constraint p becomes active.
                add_constraint(&mut j, &mut r, q, &d);
                active.push(p);
                u.push(u_plus);
                continue 'outer;
            }
            // Partial step: drop the blocking constraint, keep pushing p.
            let k = drop_idx.expect("partial step names a constraint");
            drop_constraint(&mut j, &mut r, &mut active, &mut u, k);
            drops += 1;
            if drops > MAX_STALL_DROPS {
                return Err(Error::InvalidParameter("qp stalled".into()));
            }
        }
    }
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0)
    } else {
        (a / h, b / h)
    }
}

/// Rotate `d` so its tail past slot `q` vanishes, mirroring the rotations
/// into the columns of `j`, then append the new triangular column.
fn add_constraint(j: &mut DMatrix<f64>, r: &mut DMatrix<f64>, q: usize, d: &DVector<f64>) {
    let n = j.nrows();
    let mut d = d.clone_owned();
    for col in (q + 1..n).rev() {
        let (c, s) = givens(d[col - 1], d[col]);
        d[col - 1] = c * d[col - 1] + s * d[col];
        d[col] = 0.0;
        for row in 0..n {
            let a = j[(row, col - 1)];
            let b = j[(row, col)];
            j[(row, col - 1)] = c * a + s * b;
            j[(row, col)] = -s * a + c * b;
        }
    }
    for row in 0..=q {
        r[(row, q)] = d[row];
    }
}

/// Remove active constraint `k` and restore the triangular structure.
fn drop_constraint(
    j: &mut DMatrix<f64>,
    r: &mut DMatrix<f64>,
    active: &mut Vec<usize>,
    u: &mut Vec<f64>,
    k: usize,
) {
    let n = j.nrows();
    let q = active.len();
    active.remove(k);
    u.remove(k);
    // Shift columns of R left over the removed one.
    for col in k..q - 1 {
        for row in 0..n {
            r[(row, col)] = r[(row, col + 1)];
        }
    }
    for row in 0..n {
        r[(row, q - 1)] = 0.0;
    }
    // Re-triangularize: zero the subdiagonal left by the shift.
    for col in k..q - 1 {
        let (c, s) = givens(r[(col, col)], r[(col + 1, col)]);
        for cc in col..q - 1 {
            let a = r[(col, cc)];
            let b = r[(col + 1, cc)];
            r[(col, cc)] = c * a + s * b;
            r[(col + 1, cc)] = -s * a + c * b;
        }
        for row in 0..n {
            let a = j[(row, col)];
            let b = j[(row, col + 1)];
            j[(row, col)] = c * a + s * b;
            j[(row, col + 1)] = -s * a + c * b;
        }
    }
}
