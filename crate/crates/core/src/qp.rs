//! Dense strictly convex QP solver.
//!
//! ```text
//! minimize   ½ xᵀ H x + gᵀ x
//! subject to lower   ≤ A x ≤ upper
//!            lower_x ≤   x ≤ upper_x
//! ```
//!
//! Dual active-set method of Goldfarb and Idnani: start from the
//! unconstrained minimizer and add violated constraints one at a time,
//! dropping constraints whose multipliers would turn negative. Rows with
//! `lower == upper` are equalities and are never dropped. A previous active
//! set can be passed as a hint; hinted constraints are then added first.

use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub lower_x: DVector<f64>,
    pub upper_x: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with `n` variables.
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            constraints: DMatrix::zeros(0, n),
            lower: DVector::zeros(0),
            upper: DVector::zeros(0),
            lower_x: DVector::from_element(n, f64::NEG_INFINITY),
            upper_x: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_bounds(mut self, lower_x: DVector<f64>, upper_x: DVector<f64>) -> Self {
        self.lower_x = lower_x;
        self.upper_x = upper_x;
        self
    }

    pub fn with_constraints(mut self, a: DMatrix<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.constraints = a;
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    fn check_dims(&self) -> Result<(), String> {
        let n = self.num_vars();
        let m = self.constraints.nrows();
        if self.hessian.shape() != (n, n) {
            return Err(format!("hessian shape {:?} for {n} variables", self.hessian.shape()));
        }
        if m > 0 && self.constraints.ncols() != n {
            return Err("constraint matrix column count mismatch".into());
        }
        if self.lower.len() != m || self.upper.len() != m {
            return Err("constraint bound length mismatch".into());
        }
        if self.lower_x.len() != n || self.upper_x.len() != n {
            return Err("variable bound length mismatch".into());
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-9 * self.hessian.amax().max(1.0) {
            return Err(format!("hessian not symmetric (asymmetry {asym:e})"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
    /// Dimension mismatch, asymmetric or indefinite Hessian.
    InvalidProblem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintRef {
    /// Row of `A` at its lower (`false`) or upper (`true`) bound.
    Row(usize, bool),
    /// Variable bound, lower (`false`) or upper (`true`).
    Var(usize, bool),
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub active: Vec<ConstraintRef>,
    /// Multipliers (≥ 0 for inequalities) matching `active`.
    pub multipliers: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct QpOptions {
    pub max_iter: Option<usize>,
}

/// Internal inequality `sign · aᵀx ≥ sign · b`.
#[derive(Debug, Clone, Copy)]
struct Ineq {
    id: ConstraintRef,
    equality: bool,
}

struct Workspace<'a> {
    qp: &'a QpProblem,
    hinv: DMatrix<f64>,
}

impl Workspace<'_> {
    fn normal(&self, c: ConstraintRef) -> DVector<f64> {
        let n = self.qp.num_vars();
        match c {
            ConstraintRef::Row(i, upper) => {
                let row = self.qp.constraints.row(i).transpose();
                if upper {
                    -row
                } else {
                    row
                }
            }
            ConstraintRef::Var(i, upper) => {
                let mut e = DVector::zeros(n);
                e[i] = if upper { -1.0 } else { 1.0 };
                e
            }
        }
    }

    fn rhs(&self, c: ConstraintRef) -> f64 {
        match c {
            ConstraintRef::Row(i, false) => self.qp.lower[i],
            ConstraintRef::Row(i, true) => -self.qp.upper[i],
            ConstraintRef::Var(i, false) => self.qp.lower_x[i],
            ConstraintRef::Var(i, true) => -self.qp.upper_x[i],
        }
    }

    /// Signed slack `nᵀx − b` (negative when violated).
    fn slack(&self, c: ConstraintRef, x: &DVector<f64>, ax: &DVector<f64>) -> f64 {
        match c {
            ConstraintRef::Row(i, false) => ax[i] - self.qp.lower[i],
            ConstraintRef::Row(i, true) => self.qp.upper[i] - ax[i],
            ConstraintRef::Var(i, false) => x[i] - self.qp.lower_x[i],
            ConstraintRef::Var(i, true) => self.qp.upper_x[i] - x[i],
        }
    }

    fn tolerance(&self, c: ConstraintRef) -> f64 {
        1e-9 * (1.0 + self.rhs(c).abs())
    }
}

fn enumerate_constraints(qp: &QpProblem) -> Vec<Ineq> {
    let mut out = Vec::new();
    for i in 0..qp.constraints.nrows() {
        let (lo, up) = (qp.lower[i], qp.upper[i]);
        if lo == up {
            out.push(Ineq {
                id: ConstraintRef::Row(i, false),
                equality: true,
            });
            continue;
        }
        if lo.is_finite() {
            out.push(Ineq {
                id: ConstraintRef::Row(i, false),
                equality: false,
            });
        }
        if up.is_finite() {
            out.push(Ineq {
                id: ConstraintRef::Row(i, true),
                equality: false,
            });
        }
    }
    for i in 0..qp.num_vars() {
        if qp.lower_x[i].is_finite() {
            out.push(Ineq {
                id: ConstraintRef::Var(i, false),
                equality: false,
            });
        }
        if qp.upper_x[i].is_finite() {
            out.push(Ineq {
                id: ConstraintRef::Var(i, true),
                equality: false,
            });
        }
    }
    out
}

pub fn solve_qp(qp: &QpProblem) -> QpSolution {
    solve_qp_warm(qp, &[], QpOptions::default())
}

/// Solves `qp`, adding violated constraints from `hint` before any other.
pub fn solve_qp_warm(qp: &QpProblem, hint: &[ConstraintRef], opts: QpOptions) -> QpSolution {
    let n = qp.num_vars();
    let fail = |status| QpSolution {
        x: DVector::zeros(n),
        active: Vec::new(),
        multipliers: Vec::new(),
        status,
        iterations: 0,
        objective: f64::NAN,
    };
    if qp.check_dims().is_err() {
        return fail(QpStatus::InvalidProblem);
    }
    let crossed =
        (0..qp.lower.len()).any(|i| qp.lower[i] > qp.upper[i]) || (0..n).any(|i| qp.lower_x[i] > qp.upper_x[i]);
    if crossed {
        return fail(QpStatus::Infeasible);
    }
    let Some(chol) = Cholesky::new(qp.hessian.clone()) else {
        return fail(QpStatus::InvalidProblem);
    };
    let ws = Workspace {
        qp,
        hinv: chol.inverse(),
    };
    let all = enumerate_constraints(qp);
    let hinted: std::collections::HashSet<ConstraintRef> = hint.iter().copied().collect();
    let max_iter = opts.max_iter.unwrap_or(10 * (n + all.len()) + 50);

    let mut x = -(&ws.hinv * &qp.gradient);
    let mut active: Vec<Ineq> = Vec::new();
    let mut normals: Vec<DVector<f64>> = Vec::new();
    let mut hinv_normals: Vec<DVector<f64>> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;

    // equalities first, then the most violated constraint (hinted ones first)
    let pending_equalities: Vec<Ineq> = all.iter().copied().filter(|c| c.equality).collect();
    let mut eq_cursor = 0;

    loop {
        if iterations >= max_iter {
            return finish(&ws, x, &active, &u, QpStatus::MaxIter, iterations);
        }
        let ax = if qp.constraints.nrows() > 0 {
            &qp.constraints * &x
        } else {
            DVector::zeros(0)
        };

        let chosen: Option<(Ineq, f64)>;
        if eq_cursor < pending_equalities.len() {
            let c = pending_equalities[eq_cursor];
            eq_cursor += 1;
            let s = ws.slack(c.id, &x, &ax);
            // an equality enters the active set regardless of its slack sign
            let eq = Ineq {
                id: if s > 0.0 { flip(c.id) } else { c.id },
                equality: true,
            };
            chosen = Some((eq, -s.abs()));
        } else {
            let mut best_hint: Option<(Ineq, f64)> = None;
            let mut best: Option<(Ineq, f64)> = None;
            for c in all.iter().filter(|c| !c.equality) {
                if active.iter().any(|a| a.id == c.id) {
                    continue;
                }
                let s = ws.slack(c.id, &x, &ax);
                if s >= -ws.tolerance(c.id) {
                    continue;
                }
                if hinted.contains(&c.id) && best_hint.is_none_or(|(_, b)| s < b) {
                    best_hint = Some((*c, s));
                }
                if best.is_none_or(|(_, b)| s < b) {
                    best = Some((*c, s));
                }
            }
            chosen = best_hint.or(best);
        }
        let Some((p, mut slack_p)) = chosen else {
            return finish(&ws, x, &active, &u, QpStatus::Optimal, iterations);
        };
        let np = ws.normal(p.id);
        let hnp = &ws.hinv * &np;
        let mut u_p = 0.0;

        // inner loop: move towards satisfying constraint p
        loop {
            iterations += 1;
            if iterations > max_iter {
                return finish(&ws, x, &active, &u, QpStatus::MaxIter, iterations);
            }
            let q = active.len();
            let (z, r) = if q == 0 {
                (hnp.clone(), DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_columns(&normals);
                let hn = DMatrix::from_columns(&hinv_normals);
                let s = nmat.transpose() * &hn;
                let rhs = nmat.transpose() * &hnp;
                let r = match Cholesky::new(s.clone()) {
                    Some(c) => c.solve(&rhs),
                    None => match s.lu().solve(&rhs) {
                        Some(r) => r,
                        None => return finish(&ws, x, &active, &u, QpStatus::Infeasible, iterations),
                    },
                };
                (&hnp - hn * &r, r)
            };

            // dual step limit
            let mut t1 = f64::INFINITY;
            let mut drop_k = None;
            for j in 0..q {
                if !active[j].equality && r[j] > 1e-12 {
                    let t = u[j] / r[j];
                    if t < t1 {
                        t1 = t;
                        drop_k = Some(j);
                    }
                }
            }
            let zn = z.dot(&np);
            let zero_step = zn <= 1e-14 * np.norm_squared().max(1e-300) * ws.hinv.amax().max(1e-300);
            let t2 = if zero_step { f64::INFINITY } else { -slack_p / zn };

            if t1.is_infinite() && t2.is_infinite() {
                if p.equality {
                    // dependent equality; accept if already satisfied
                    if slack_p.abs() <= ws.tolerance(p.id) {
                        break;
                    }
                }
                return finish(&ws, x, &active, &u, QpStatus::Infeasible, iterations);
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                x += &z * t;
                slack_p += t * zn;
            }
            for j in 0..q {
                u[j] -= t * r[j];
            }
            u_p += t;

            if t2 <= t1 {
                active.push(p);
                normals.push(np.clone());
                hinv_normals.push(hnp.clone());
                u.push(u_p);
                break;
            }
            let k = drop_k.expect("finite dual step has a blocking index");
            active.remove(k);
            normals.remove(k);
            hinv_normals.remove(k);
            u.remove(k);
        }
    }
}

fn flip(c: ConstraintRef) -> ConstraintRef {
    match c {
        ConstraintRef::Row(i, s) => ConstraintRef::Row(i, !s),
        ConstraintRef::Var(i, s) => ConstraintRef::Var(i, !s),
    }
}

/// Re-solves the equality-constrained problem on the final working set for
/// exact stationarity.
fn finish(
    ws: &Workspace<'_>,
    x: DVector<f64>,
    active: &[Ineq],
    u: &[f64],
    status: QpStatus,
    iterations: usize,
) -> QpSolution {
    let qp = ws.qp;
    let mut x = x;
    let mut mult = u.to_vec();
    if status == QpStatus::Optimal && !active.is_empty() {
        let normals: Vec<DVector<f64>> = active.iter().map(|c| ws.normal(c.id)).collect();
        let nmat = DMatrix::from_columns(&normals);
        let hn = &ws.hinv * &nmat;
        let s = nmat.transpose() * &hn;
        let b = DVector::from_iterator(active.len(), active.iter().map(|c| ws.rhs(c.id)));
        let hg = &ws.hinv * &qp.gradient;
        let rhs = b + nmat.transpose() * &hg;
        if let Some(lambda) = Cholesky::new(s).map(|c| c.solve(&rhs)) {
            if lambda.iter().zip(active).all(|(l, c)| c.equality || *l >= -1e-9) {
                x = -hg + hn * &lambda;
                mult = lambda.iter().copied().collect();
            }
        }
    } else if status == QpStatus::Optimal {
        x = -(&ws.hinv * &qp.gradient);
    }
    let objective = qp.objective(&x);
    QpSolution {
        x,
        active: active.iter().map(|c| c.id).collect(),
        multipliers: mult,
        status,
        iterations,
        objective,
    }
}

/// Largest violation of the KKT conditions at `sol` (stationarity, primal
/// and dual feasibility, complementarity).
pub fn kkt_residual(qp: &QpProblem, sol: &QpSolution) -> f64 {
    let n = qp.num_vars();
    let mut grad = &qp.hessian * &sol.x + &qp.gradient;
    let mut worst: f64 = 0.0;
    let ax = if qp.constraints.nrows() > 0 {
        &qp.constraints * &sol.x
    } else {
        DVector::zeros(0)
    };
    for (c, &l) in sol.active.iter().zip(&sol.multipliers) {
        let (normal, slack): (DVector<f64>, f64) = match *c {
            ConstraintRef::Row(i, up) => {
                let row = qp.constraints.row(i).transpose();
                if up {
                    (-row, qp.upper[i] - ax[i])
                } else {
                    (row, ax[i] - qp.lower[i])
                }
            }
            ConstraintRef::Var(i, up) => {
                let mut e = DVector::zeros(n);
                e[i] = if up { -1.0 } else { 1.0 };
                let s = if up {
                    qp.upper_x[i] - sol.x[i]
                } else {
                    sol.x[i] - qp.lower_x[i]
                };
                (e, s)
            }
        };
        let is_eq = match *c {
            ConstraintRef::Row(i, _) => qp.lower[i] == qp.upper[i],
            ConstraintRef::Var(..) => false,
        };
        grad -= normal * l;
        if !is_eq {
            worst = worst.max(-l);
        }
        worst = worst.max((l * slack).abs());
    }
    worst = worst.max(grad.amax());
    for i in 0..qp.constraints.nrows() {
        worst = worst.max(qp.lower[i] - ax[i]).max(ax[i] - qp.upper[i]);
    }
    for i in 0..n {
        worst = worst.max(qp.lower_x[i] - sol.x[i]).max(sol.x[i] - qp.upper_x[i]);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn identity_problem() -> QpProblem {
        QpProblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![-1.0, -1.0]))
    }

    #[test]
    fn unconstrained_minimum() {
        let sol = solve_qp(&identity_problem());
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-12);
        assert!(sol.active.is_empty());
    }

    #[test]
    fn box_projection_matches_grid_search() {
        let qp = identity_problem().with_bounds(
            DVector::from_element(2, f64::NEG_INFINITY),
            DVector::from_element(2, 0.5),
        );
        let sol = solve_qp(&qp);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[1], 0.5, epsilon = 1e-12);
        assert_eq!(sol.active.len(), 2);
        // dense grid oracle over [-1, 0.5]^2
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=300 {
            for j in 0..=300 {
                let x = -1.0 + 1.5 * i as f64 / 300.0;
                let y = -1.0 + 1.5 * j as f64 / 300.0;
                let f = 0.5 * (x * x + y * y) - x - y;
                if f < best.0 {
                    best = (f, x, y);
                }
            }
        }
        assert_abs_diff_eq!(sol.x[0], best.1, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[1], best.2, epsilon = 1e-12);
        assert!(kkt_residual(&qp, &sol) < 1e-8);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let qp = QpProblem::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_bounds(DVector::from_element(1, 1.0), DVector::from_element(1, 0.0));
        assert_eq!(solve_qp(&qp).status, QpStatus::Infeasible);
    }

    #[test]
    fn conflicting_rows_are_infeasible() {
        // x + y >= 3 and x + y <= 1 written as separate rows
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let qp = identity_problem().with_constraints(
            a,
            DVector::from_vec(vec![3.0, f64::NEG_INFINITY]),
            DVector::from_vec(vec![f64::INFINITY, 1.0]),
        );
        assert_eq!(solve_qp(&qp).status, QpStatus::Infeasible);
    }

    #[test]
    fn equality_row() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let qp = identity_problem().with_constraints(a, DVector::from_element(1, 0.5), DVector::from_element(1, 0.5));
        let sol = solve_qp(&qp);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0] - sol.x[1], 0.5, epsilon = 1e-12);
        assert!(kkt_residual(&qp, &sol) < 1e-10);
    }

    #[test]
    fn asymmetric_hessian_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let qp = QpProblem::new(h, DVector::zeros(2));
        assert_eq!(solve_qp(&qp).status, QpStatus::InvalidProblem);
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let g = DVector::from_vec(vec![-8.0, -3.0, 1.0]);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 1.0, -1.0, 0.0]);
        let qp = QpProblem::new(h, g)
            .with_constraints(
                a,
                DVector::from_vec(vec![f64::NEG_INFINITY, -0.5]),
                DVector::from_vec(vec![1.0, 0.5]),
            )
            .with_bounds(DVector::from_element(3, -0.2), DVector::from_element(3, 2.0));
        let cold = solve_qp(&qp);
        let warm = solve_qp_warm(&qp, &cold.active, QpOptions::default());
        assert_eq!(cold.status, QpStatus::Optimal);
        assert_eq!(warm.status, QpStatus::Optimal);
        assert_abs_diff_eq!((cold.x.clone() - warm.x.clone()).amax(), 0.0, epsilon = 1e-10);
        assert!(warm.iterations <= cold.iterations);
        assert!(kkt_residual(&qp, &cold) < 1e-8);
    }
}
