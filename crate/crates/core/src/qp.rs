//! Dense convex QP with two-sided linear inequality constraints:
//!
//! ```text
//! minimize   1/2 x' H x + c' x
//! subject to l <= A x <= u
//! ```
//!
//! Solved with the Goldfarb-Idnani dual active-set method. The method starts
//! from the unconstrained minimizer and adds violated constraints one at a
//! time while keeping dual feasibility, so no feasible starting point is
//! needed and infeasibility shows up as an unbounded dual step.
//!
//! Multipliers follow the convention `H x + c = A' y`, with `y_i >= 0` on an
//! active lower bound and `y_i <= 0` on an active upper bound.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Diagonal floor added to the Hessian before factorization.
pub const HESSIAN_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear_term: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_lower: DVector<f64>,
    pub ineq_upper: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        hessian: DMatrix<f64>,
        linear_term: DVector<f64>,
        ineq_matrix: DMatrix<f64>,
        ineq_lower: DVector<f64>,
        ineq_upper: DVector<f64>,
    ) -> Result<Self> {
        let n = linear_term.len();
        if hessian.nrows() != n || hessian.ncols() != n {
            return Err(Error::Dimension {
                context: "QP hessian",
                expected: n,
                got: hessian.nrows().max(hessian.ncols()),
            });
        }
        let m = ineq_matrix.nrows();
        if m > 0 && ineq_matrix.ncols() != n {
            return Err(Error::Dimension {
                context: "QP constraint matrix columns",
                expected: n,
                got: ineq_matrix.ncols(),
            });
        }
        if ineq_lower.len() != m || ineq_upper.len() != m {
            return Err(Error::Dimension {
                context: "QP constraint bounds",
                expected: m,
                got: ineq_lower.len().min(ineq_upper.len()),
            });
        }
        let finite = hessian.iter().chain(linear_term.iter()).chain(ineq_matrix.iter());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("QP data must be finite".into()));
        }
        if ineq_lower.iter().chain(ineq_upper.iter()).any(|v| v.is_nan())
            || ineq_lower.iter().any(|&v| v == f64::INFINITY)
            || ineq_upper.iter().any(|&v| v == f64::NEG_INFINITY)
        {
            return Err(Error::InvalidArgument(
                "QP bounds must not be NaN or point the wrong way".into(),
            ));
        }
        let scale = hessian.amax().max(1.0);
        if (&hessian - hessian.transpose()).amax() > 1e-10 * scale {
            return Err(Error::InvalidArgument("QP hessian must be symmetric".into()));
        }
        Ok(Self {
            hessian,
            linear_term,
            ineq_matrix: if m == 0 { DMatrix::zeros(0, n) } else { ineq_matrix },
            ineq_lower,
            ineq_upper,
        })
    }

    pub fn unconstrained(hessian: DMatrix<f64>, linear_term: DVector<f64>) -> Result<Self> {
        let n = linear_term.len();
        Self::new(
            hessian,
            linear_term,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DVector::zeros(0),
        )
    }

    pub fn num_vars(&self) -> usize {
        self.linear_term.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.ineq_matrix.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear_term.dot(x)
    }

    /// Largest bound violation of `x`.
    pub fn primal_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.ineq_matrix * x;
        let mut worst = 0.0f64;
        for i in 0..ax.len() {
            worst = worst.max(self.ineq_lower[i] - ax[i]).max(ax[i] - self.ineq_upper[i]);
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

/// Max of the stationarity, primal-feasibility, and complementarity violations.
///
/// Complementarity counts `|y_i| * slack_i` on the side the multiplier's sign
/// selects; a multiplier pushing against an infinite bound counts in full.
pub fn kkt_residual(problem: &QpProblem, x: &DVector<f64>, multipliers: &DVector<f64>) -> f64 {
    let stationarity = &problem.hessian * x + &problem.linear_term - problem.ineq_matrix.tr_mul(multipliers);
    let mut residual = stationarity.amax();
    residual = residual.max(problem.primal_violation(x));
    let ax = &problem.ineq_matrix * x;
    for i in 0..ax.len() {
        let y = multipliers[i];
        let comp = if y > 0.0 {
            let l = problem.ineq_lower[i];
            if l.is_finite() {
                y * (ax[i] - l).abs()
            } else {
                y
            }
        } else if y < 0.0 {
            let u = problem.ineq_upper[i];
            if u.is_finite() {
                -y * (u - ax[i]).abs()
            } else {
                -y
            }
        } else {
            0.0
        };
        residual = residual.max(comp);
    }
    residual
}

#[derive(Clone, Copy, Debug)]
struct OneSided {
    row: usize,
    /// `sign * a_row' x >= rhs`.
    sign: f64,
    rhs: f64,
}

/// Reusable solver. Holds settings and the constraint scratch list; one
/// instance per thread.
#[derive(Clone, Debug)]
pub struct QpSolver {
    pub tolerance: f64,
    pub max_iter: usize,
    sides: Vec<OneSided>,
}

impl Default for QpSolver {
    fn default() -> Self {
        Self::new(1e-8, 200)
    }
}

impl QpSolver {
    pub fn new(tolerance: f64, max_iter: usize) -> Self {
        Self {
            tolerance,
            max_iter,
            sides: Vec::new(),
        }
    }

    pub fn solve(&mut self, problem: &QpProblem) -> Result<QpSolution> {
        let n = problem.num_vars();
        let m = problem.num_constraints();

        if (0..m).any(|i| problem.ineq_lower[i] > problem.ineq_upper[i]) {
            return Ok(self.finish(problem, DVector::zeros(n), DVector::zeros(m), 0, QpStatus::Infeasible));
        }

        let scale = problem.hessian.amax().max(1.0);
        let chol = factor(&problem.hessian, scale)?;

        self.sides.clear();
        for i in 0..m {
            if problem.ineq_lower[i].is_finite() {
                self.sides.push(OneSided {
                    row: i,
                    sign: 1.0,
                    rhs: problem.ineq_lower[i],
                });
            }
            if problem.ineq_upper[i].is_finite() {
                self.sides.push(OneSided {
                    row: i,
                    sign: -1.0,
                    rhs: -problem.ineq_upper[i],
                });
            }
        }
        let normals: Vec<DVector<f64>> = self
            .sides
            .iter()
            .map(|s| problem.ineq_matrix.row(s.row).transpose() * s.sign)
            .collect();
        let norms: Vec<f64> = normals.iter().map(|v| v.norm().max(f64::MIN_POSITIVE)).collect();
        let hinv_normals: Vec<DVector<f64>> = normals.iter().map(|v| chol.solve(v)).collect();

        let mut x = -chol.solve(&problem.linear_term);
        let mut active: Vec<usize> = Vec::new();
        let mut duals: Vec<f64> = Vec::new();
        let mut is_active = vec![false; self.sides.len()];
        let mut iterations = 0;
        let feas_tol = 0.1 * self.tolerance;

        let status = 'outer: loop {
            // Pick the most violated inactive constraint (normalized slack).
            let mut pick = None;
            let mut worst = -feas_tol;
            for (k, side) in self.sides.iter().enumerate() {
                if is_active[k] {
                    continue;
                }
                let s = (normals[k].dot(&x) - side.rhs) / norms[k];
                if s < worst {
                    worst = s;
                    pick = Some(k);
                }
            }
            let Some(p) = pick else {
                break QpStatus::Optimal;
            };
            let mut dual_p = 0.0;

            loop {
                iterations += 1;
                if iterations > self.max_iter {
                    break 'outer QpStatus::MaxIter;
                }
                let np = &normals[p];
                let hnp = &hinv_normals[p];
                let k = active.len();
                let (z, r) = if k == 0 {
                    (hnp.clone(), DVector::zeros(0))
                } else {
                    let nmat = DMatrix::from_fn(n, k, |i, j| normals[active[j]][i]);
                    let hinv_n = DMatrix::from_fn(n, k, |i, j| hinv_normals[active[j]][i]);
                    let w = nmat.tr_mul(&hinv_n);
                    let rhs = nmat.tr_mul(hnp);
                    let r = solve_small(w, &rhs);
                    (hnp - &hinv_n * &r, r)
                };

                let slack = np.dot(&x) - self.sides[p].rhs;
                let zn = z.dot(np);
                let primal_step = if z.amax() > 1e-13 * hnp.amax().max(1e-300) && zn > 0.0 {
                    -slack / zn
                } else {
                    f64::INFINITY
                };
                let mut dual_step = f64::INFINITY;
                let mut drop = None;
                for j in 0..k {
                    if r[j] > 1e-14 {
                        let t = duals[j] / r[j];
                        if t < dual_step {
                            dual_step = t;
                            drop = Some(j);
                        }
                    }
                }

                if primal_step.is_infinite() && dual_step.is_infinite() {
                    break 'outer QpStatus::Infeasible;
                }
                let t = primal_step.min(dual_step);
                if primal_step.is_finite() {
                    x.axpy(t, &z, 1.0);
                }
                for j in 0..k {
                    duals[j] -= t * r[j];
                }
                dual_p += t;

                if primal_step <= dual_step {
                    active.push(p);
                    duals.push(dual_p);
                    is_active[p] = true;
                    break;
                }
                let j = drop.expect("finite dual step has a blocking constraint");
                is_active[active[j]] = false;
                active.remove(j);
                duals.remove(j);
            }
        };

        if status == QpStatus::Optimal {
            refine(problem, &chol, &normals, &self.sides, &active, &mut x, &mut duals);
        }

        let mut y = DVector::zeros(m);
        for (&k, &u) in active.iter().zip(&duals) {
            let side = self.sides[k];
            y[side.row] += side.sign * u.max(0.0);
        }
        Ok(self.finish(problem, x, y, iterations, status))
    }

    fn finish(
        &self,
        problem: &QpProblem,
        x: DVector<f64>,
        multipliers: DVector<f64>,
        iterations: usize,
        status: QpStatus,
    ) -> QpSolution {
        let kkt = kkt_residual(problem, &x, &multipliers);
        let status = match status {
            QpStatus::Optimal if kkt > self.tolerance => QpStatus::MaxIter,
            s => s,
        };
        QpSolution {
            objective: problem.objective(&x),
            kkt_residual: kkt,
            x,
            multipliers,
            iterations,
            status,
        }
    }
}

/// Convenience wrapper around a fresh [`QpSolver`].
pub fn solve(problem: &QpProblem, tolerance: f64, max_iter: usize) -> Result<QpSolution> {
    QpSolver::new(tolerance, max_iter).solve(problem)
}

fn factor(hessian: &DMatrix<f64>, scale: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = hessian.nrows();
    let sym = (hessian + hessian.transpose()) * 0.5;
    let mut reg = HESSIAN_FLOOR;
    while reg <= 1e-6 * scale {
        let h = &sym + DMatrix::identity(n, n) * reg;
        if let Some(c) = Cholesky::new(h) {
            return Ok(c);
        }
        reg *= 10.0;
    }
    Err(Error::InvalidArgument("QP hessian is not positive semidefinite".into()))
}

/// Newton refinement of the final active set against the unregularized
/// Hessian, so the diagonal floor does not bias stationarity.
fn refine(
    problem: &QpProblem,
    chol: &Cholesky<f64, Dyn>,
    normals: &[DVector<f64>],
    sides: &[OneSided],
    active: &[usize],
    x: &mut DVector<f64>,
    duals: &mut [f64],
) {
    let n = x.len();
    let k = active.len();
    if k == 0 {
        for _ in 0..3 {
            let rs = &problem.hessian * &*x + &problem.linear_term;
            let xn = &*x - chol.solve(&rs);
            let rs2 = &problem.hessian * &xn + &problem.linear_term;
            if rs2.amax() >= rs.amax() {
                break;
            }
            *x = xn;
        }
        return;
    }
    let nmat = DMatrix::from_fn(n, k, |i, j| normals[active[j]][i]);
    let rhs_b = DVector::from_iterator(k, active.iter().map(|&a| sides[a].rhs));
    let hinv_n = chol.solve(&nmat);
    let schur = nmat.tr_mul(&hinv_n);
    let residuals = |x: &DVector<f64>, u: &DVector<f64>| {
        let rs = &problem.hessian * x + &problem.linear_term - &nmat * u;
        let rp = nmat.tr_mul(x) - &rhs_b;
        (rs, rp)
    };
    let mut u = DVector::from_column_slice(duals);
    for _ in 0..3 {
        let (rs, rp) = residuals(x, &u);
        let before = rs.amax().max(rp.amax());
        if before < 1e-14 {
            break;
        }
        // H dx - N du = -rs ; N' dx = -rp, eliminated through the Schur complement.
        let hinv_rs = chol.solve(&rs);
        let du = solve_small(schur.clone(), &(nmat.tr_mul(&hinv_rs) - rp));
        let dx = -hinv_rs + &hinv_n * &du;
        let xn = &*x + dx;
        let un = &u + du;
        let (rs2, rp2) = residuals(&xn, &un);
        if rs2.amax().max(rp2.amax()) >= before || un.iter().any(|&v| v < 0.0) {
            break;
        }
        *x = xn;
        u = un;
    }
    duals.copy_from_slice(u.as_slice());
}

fn solve_small(w: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    match Cholesky::new(w.clone()) {
        Some(c) => c.solve(rhs),
        None => w.lu().solve(rhs).unwrap_or_else(|| DVector::zeros(rhs.len())),
    }
}
