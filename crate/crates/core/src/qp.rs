//! Strongly convex quadratic programs over polyhedra.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    xᵀQx + qᵀx
//!     subject to  x ≥ 0          (optional)
//!                 A x ≤ b
//!                 gᵀx ≥ M        (optional floor)
//! ```
//!
//! with `Q` symmetric positive definite. All constraints are stacked into a
//! single system `G x ≤ h` whose row order is: the `n` sign rows (if
//! `nonneg`), then the rows of `A`, then the floor row. Working sets,
//! certificates and perturbation records index into that order.
//!
//! [`solve_qp`] runs a primal active-set method started from a feasible
//! point. Feasible points come from [`feasible_point_near`], a dual
//! active-set projection onto the polyhedron which either lands on the
//! polyhedron or returns a Farkas certificate of emptiness. [`check_kkt`]
//! is an independent optimality check that refits multipliers from scratch.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{lstsq, nnls};
use crate::Scalar;

/// Lower bound `gᵀx ≥ level` on a linear form.
#[derive(Debug, Clone, Copy)]
pub struct Floor<'a, T: Scalar> {
    pub weights: &'a DVector<T>,
    pub level: T,
}

#[derive(Debug, Clone)]
pub struct QpProblem<'a, T: Scalar> {
    /// `Q` in the objective `xᵀQx + qᵀx`.
    pub quad: &'a DMatrix<T>,
    /// `q` in the objective.
    pub lin: DVector<T>,
    pub a: &'a DMatrix<T>,
    pub b: &'a DVector<T>,
    pub floor: Option<Floor<'a, T>>,
    pub nonneg: bool,
}

impl<T: Scalar> QpProblem<'_, T> {
    pub fn dim(&self) -> usize {
        self.quad.nrows()
    }

    pub fn objective(&self, x: &DVector<T>) -> T {
        x.dot(&(self.quad * x)) + self.lin.dot(x)
    }

    pub fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        (self.quad * x) * T::of(2.0) + &self.lin
    }

    pub fn constraints(&self) -> ConstraintSystem<T> {
        ConstraintSystem::new(self.a, self.b, self.floor, self.nonneg)
    }
}

/// Stacked constraint rows `G x ≤ h`.
#[derive(Debug, Clone)]
pub struct ConstraintSystem<T: Scalar> {
    pub g: DMatrix<T>,
    pub h: DVector<T>,
}

impl<T: Scalar> ConstraintSystem<T> {
    pub fn new(a: &DMatrix<T>, b: &DVector<T>, floor: Option<Floor<'_, T>>, nonneg: bool) -> Self {
        let n = a.ncols();
        let rows = if nonneg { n } else { 0 } + a.nrows() + usize::from(floor.is_some());
        let mut g = DMatrix::zeros(rows, n);
        let mut h = DVector::zeros(rows);
        let mut r = 0;
        if nonneg {
            for j in 0..n {
                g[(r, j)] = -T::one();
                r += 1;
            }
        }
        for i in 0..a.nrows() {
            g.row_mut(r).copy_from(&a.row(i));
            h[r] = b[i];
            r += 1;
        }
        if let Some(f) = floor {
            for j in 0..n {
                g[(r, j)] = -f.weights[j];
            }
            h[r] = -f.level;
        }
        Self { g, h }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// `h_i − g_iᵀx` for row `i`; negative means violated.
    pub fn slack(&self, i: usize, x: &DVector<T>) -> T {
        self.h[i] - self.g.row(i).transpose().dot(x)
    }

    pub fn max_violation(&self, x: &DVector<T>) -> T {
        (0..self.len()).fold(T::zero(), |acc, i| acc.max(-self.slack(i, x)))
    }
}

/// Outcome of a phase-1 / projection solve.
#[derive(Debug, Clone)]
pub enum Feasibility<T: Scalar> {
    /// A point satisfying every row, and the rows active at it.
    Feasible { x: DVector<T>, active: Vec<usize> },
    /// Weights `y ≥ 0` over the stacked rows with `yᵀG = 0` and `yᵀh < 0`.
    Infeasible { certificate: DVector<T> },
    /// The iteration budget ran out.
    IterLimit,
}

impl<T: Scalar> Feasibility<T> {
    pub fn point(&self) -> Option<&DVector<T>> {
        match self {
            Feasibility::Feasible { x, .. } => Some(x),
            _ => None,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Feasibility::Infeasible { .. })
    }
}

/// Finds a point of `{x : x ≥ 0 (if nonneg), A x ≤ b, gᵀx ≥ M (if floor)}`,
/// namely the one of least Euclidean norm.
pub fn feasible_point<T: Scalar>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    floor: Option<Floor<'_, T>>,
    nonneg: bool,
) -> Feasibility<T> {
    let system = ConstraintSystem::new(a, b, floor, nonneg);
    feasible_point_near(&system, &DVector::zeros(a.ncols()))
}

/// Euclidean projection of `center` onto the polyhedron `G x ≤ h`.
///
/// Dual active-set iteration: starting from `center` with no active rows, the
/// most violated row is repeatedly brought into the active set while the
/// primal point moves inside the affine hull of the active rows; rows whose
/// multiplier would turn negative are dropped along the way. When a violated
/// row lies in the span of the active rows with no positive coefficient, the
/// rows involved form a certificate of emptiness.
pub fn feasible_point_near<T: Scalar>(
    system: &ConstraintSystem<T>,
    center: &DVector<T>,
) -> Feasibility<T> {
    let rows = system.len();
    let n = center.len();
    let viol_tol = T::tol_at_least(1e-12, 64.0);
    let dep_tol = T::tol_at_least(1e-10, 1e3);
    let max_iter = 20 * (rows + n) + 50;

    let mut x = center.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<T> = Vec::new();
    let row_norm: Vec<T> = (0..rows)
        .map(|i| system.g.row(i).norm().max(T::machine_eps()))
        .collect();

    let mut budget = max_iter;
    loop {
        // Most violated row, measured in distance units.
        let mut pick: Option<(usize, T)> = None;
        for (i, &norm) in row_norm.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let v = -system.slack(i, &x);
            if v > viol_tol * (T::one() + system.h[i].abs()) {
                let scaled = v / norm;
                if pick.is_none_or(|(_, best)| scaled > best) {
                    pick = Some((i, scaled));
                }
            }
        }
        let Some((p, _)) = pick else {
            return Feasibility::Feasible { x, active };
        };
        let np: DVector<T> = system.g.row(p).transpose();
        let mut mult_p = T::zero();

        loop {
            if budget == 0 {
                return Feasibility::IterLimit;
            }
            budget -= 1;

            let basis = system.g.select_rows(active.iter());
            let r = lstsq(&basis.transpose(), &np);
            let z = &np - basis.tr_mul(&r);

            // Largest dual step that keeps active multipliers nonnegative.
            let mut t_dual: Option<(usize, T)> = None;
            for (pos, &rj) in r.iter().enumerate() {
                if rj > T::zero() {
                    let t = mult[pos] / rj;
                    if t_dual.is_none_or(|(_, best)| t < best) {
                        t_dual = Some((pos, t));
                    }
                }
            }

            if z.norm() <= dep_tol * row_norm[p] {
                let Some((drop, t)) = t_dual else {
                    let mut certificate = DVector::zeros(rows);
                    certificate[p] = T::one();
                    for (pos, &i) in active.iter().enumerate() {
                        certificate[i] = -r[pos];
                    }
                    return Feasibility::Infeasible { certificate };
                };
                for (pos, m) in mult.iter_mut().enumerate() {
                    *m -= t * r[pos];
                }
                mult_p += t;
                active.remove(drop);
                mult.remove(drop);
                continue;
            }

            let violation = -system.slack(p, &x);
            let t_full = (violation / np.dot(&z)).max(T::zero());
            match t_dual {
                Some((drop, t)) if t < t_full => {
                    x -= &z * t;
                    for (pos, m) in mult.iter_mut().enumerate() {
                        *m -= t * r[pos];
                    }
                    mult_p += t;
                    active.remove(drop);
                    mult.remove(drop);
                }
                _ => {
                    x -= &z * t_full;
                    for (pos, m) in mult.iter_mut().enumerate() {
                        *m -= t_full * r[pos];
                    }
                    mult_p += t_full;
                    active.push(p);
                    mult.push(mult_p);
                    break;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    /// Stopped without an optimality or infeasibility certificate.
    IterLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution<T: Scalar> {
    pub x: DVector<T>,
    pub kkt_residual: T,
    pub iterations: usize,
    pub status: QpStatus,
    /// Stacked-row indices held as equalities at termination.
    pub working_set: Vec<usize>,
    /// Rows whose right-hand side was relaxed to break a degenerate start.
    pub perturbed_rows: Vec<usize>,
    /// Farkas weights when `status == Infeasible`.
    pub certificate: Option<DVector<T>>,
}

impl<T: Scalar> QpSolution<T> {
    pub fn warm_start(&self) -> WarmStart<T> {
        WarmStart {
            x: self.x.clone(),
            working_set: self.working_set.clone(),
        }
    }
}

/// Feasible starting point plus a working-set guess, typically from a
/// previous solve with the same constraints.
#[derive(Debug, Clone)]
pub struct WarmStart<T: Scalar> {
    pub x: DVector<T>,
    pub working_set: Vec<usize>,
}

/// Default inner settings: KKT tolerance 1e-9 and `50·(n+m)` iterations.
pub fn default_tol<T: Scalar>() -> T {
    T::tol_at_least(1e-9, 1e3)
}

pub fn default_max_iter(n: usize, m: usize) -> usize {
    50 * (n + m).max(1)
}

pub fn solve_qp<T: Scalar>(problem: &QpProblem<'_, T>, tol: T, max_iter: usize) -> QpSolution<T> {
    solve_qp_warm(problem, tol, max_iter, None)
}

/// Primal active-set method. A warm start is used when it is feasible to
/// within `tol`; otherwise the least-norm feasible point seeds the method.
pub fn solve_qp_warm<T: Scalar>(
    problem: &QpProblem<'_, T>,
    tol: T,
    max_iter: usize,
    warm: Option<&WarmStart<T>>,
) -> QpSolution<T> {
    let n = problem.dim();
    let mut system = problem.constraints();
    let rows = system.len();

    let fail = |x: DVector<T>, status, certificate| QpSolution {
        x,
        kkt_residual: T::max_value().unwrap(),
        iterations: 0,
        status,
        working_set: Vec::new(),
        perturbed_rows: Vec::new(),
        certificate,
    };

    let (mut x, hint) = match warm {
        Some(w) if w.x.len() == n && system.max_violation(&w.x) <= tol => {
            (w.x.clone(), w.working_set.clone())
        }
        _ => match feasible_point_near(&system, &DVector::zeros(n)) {
            Feasibility::Feasible { x, active } => (x, active),
            Feasibility::Infeasible { certificate } => {
                return fail(DVector::zeros(n), QpStatus::Infeasible, Some(certificate))
            }
            Feasibility::IterLimit => return fail(DVector::zeros(n), QpStatus::IterLimit, None),
        },
    };

    // Initial working set: an independent subset of the rows active at x,
    // hinted rows first. Dependent active rows are relaxed slightly so that
    // the ratio test never stalls on them.
    let act_tol = T::tol_at_least(1e-12, 64.0);
    let perturb = T::tol_at_least(1e-12, 64.0);
    let dep_tol = T::tol_at_least(1e-10, 1e3);
    let mut candidates: Vec<usize> = hint.into_iter().filter(|&i| i < rows).collect();
    for i in 0..rows {
        if !candidates.contains(&i) {
            candidates.push(i);
        }
    }
    let mut working: Vec<usize> = Vec::new();
    let mut perturbed_rows = Vec::new();
    for i in candidates {
        if system.slack(i, &x) > act_tol * (T::one() + system.h[i].abs()) {
            continue;
        }
        let row: DVector<T> = system.g.row(i).transpose();
        let basis = system.g.select_rows(working.iter());
        let residual = &row - basis.tr_mul(&lstsq(&basis.transpose(), &row));
        if working.len() < n && residual.norm() > dep_tol * row.norm() {
            working.push(i);
        } else {
            system.h[i] += perturb;
            perturbed_rows.push(i);
        }
    }

    let hess = problem.quad * T::of(2.0);
    let row_norm: Vec<T> = (0..rows)
        .map(|i| system.g.row(i).norm().max(T::machine_eps()))
        .collect();
    let step_tol = T::tol_at_least(1e-13, 64.0);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        let Some((target, mult)) = equality_qp(&hess, &problem.lin, &system, &working) else {
            break;
        };
        let d = &target - &x;
        if d.amax() <= step_tol * (T::one() + x.amax()) {
            x = target;
            let worst = mult
                .iter()
                .enumerate()
                .map(|(pos, &l)| (pos, l * row_norm[working[pos]]))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            match worst {
                Some((pos, scaled)) if scaled < -(tol * T::of(0.1)) => {
                    working.remove(pos);
                }
                _ => {
                    converged = true;
                    break;
                }
            }
            continue;
        }

        let mut step = T::one();
        let mut blocking = None;
        let dn = d.norm();
        for (i, &norm) in row_norm.iter().enumerate() {
            if working.contains(&i) {
                continue;
            }
            let gd = system.g.row(i).transpose().dot(&d);
            if gd > T::machine_eps() * norm * dn {
                let t = system.slack(i, &x).max(T::zero()) / gd;
                if t < step {
                    step = t;
                    blocking = Some(i);
                }
            }
        }
        x += &d * step;
        if let Some(i) = blocking {
            working.push(i);
        }
    }

    let kkt_residual = check_kkt(problem, &x, tol);
    let status = if converged && kkt_residual <= tol {
        QpStatus::Optimal
    } else {
        log::debug!("QP stopped after {iterations} iterations with KKT residual {kkt_residual:e}");
        QpStatus::IterLimit
    };
    QpSolution {
        x,
        kkt_residual,
        iterations,
        status,
        working_set: working,
        perturbed_rows,
        certificate: None,
    }
}

/// Minimizer of `½xᵀHx + qᵀx` with the working rows held as equalities,
/// plus the multipliers of those rows.
fn equality_qp<T: Scalar>(
    hess: &DMatrix<T>,
    lin: &DVector<T>,
    system: &ConstraintSystem<T>,
    working: &[usize],
) -> Option<(DVector<T>, DVector<T>)> {
    let n = hess.nrows();
    let w = working.len();
    let mut kkt = DMatrix::zeros(n + w, n + w);
    let mut rhs = DVector::zeros(n + w);
    kkt.view_mut((0, 0), (n, n)).copy_from(hess);
    for (pos, &i) in working.iter().enumerate() {
        for j in 0..n {
            kkt[(n + pos, j)] = system.g[(i, j)];
            kkt[(j, n + pos)] = system.g[(i, j)];
        }
        rhs[n + pos] = system.h[i];
    }
    for j in 0..n {
        rhs[j] = -lin[j];
    }
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, w).into_owned()))
}

/// Optimality residual of `x`: the largest of primal infeasibility,
/// stationarity error and complementarity gap.
///
/// Multipliers are refit from scratch by nonnegative least squares on the
/// rows whose slack is at most `tol`, so the result does not depend on how
/// `x` was produced. A stationary point with a negative multiplier shows up
/// as a stationarity error.
pub fn check_kkt<T: Scalar>(problem: &QpProblem<'_, T>, x: &DVector<T>, tol: T) -> T {
    let system = problem.constraints();
    let primal = system.max_violation(x);
    let active: Vec<usize> = (0..system.len())
        .filter(|&i| system.slack(i, x) <= tol)
        .collect();
    let grad = problem.gradient(x);
    let normals = system.g.select_rows(active.iter()).transpose();
    let mult = nnls(&normals, &(-&grad));
    let stationarity = (&grad + &normals * &mult).norm();
    let complementarity = active
        .iter()
        .zip(mult.iter())
        .fold(T::zero(), |acc, (&i, &y)| {
            acc.max((y * system.slack(i, x)).abs())
        });
    primal.max(stationarity).max(complementarity)
}
