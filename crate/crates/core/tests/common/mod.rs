#![allow(dead_code)]

use equiprice::model::{AgentCosts, FeasibleSet, ModelInstance, PriceDomain};
use equiprice::qp::{Floor, QpProblem};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Owned data behind a `QpProblem`, so random problems can outlive the
/// borrow.
#[derive(Debug, Clone)]
pub struct OwnedQp {
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub floor: Option<(DVector<f64>, f64)>,
    pub nonneg: bool,
}

impl OwnedQp {
    pub fn problem(&self) -> QpProblem<'_, f64> {
        QpProblem {
            quad: &self.quad,
            lin: self.lin.clone(),
            a: &self.a,
            b: &self.b,
            floor: self.floor.as_ref().map(|(g, level)| Floor {
                weights: g,
                level: *level,
            }),
            nonneg: self.nonneg,
        }
    }

    /// All constraints as rows of `G x ≤ h`, in no particular order.
    pub fn rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.quad.nrows();
        let mut g: Vec<Vec<f64>> = Vec::new();
        let mut h = Vec::new();
        if self.nonneg {
            for j in 0..n {
                let mut row = vec![0.0; n];
                row[j] = -1.0;
                g.push(row);
                h.push(0.0);
            }
        }
        for i in 0..self.a.nrows() {
            g.push(self.a.row(i).iter().copied().collect());
            h.push(self.b[i]);
        }
        if let Some((w, level)) = &self.floor {
            g.push(w.iter().map(|v| -v).collect());
            h.push(-level);
        }
        let rows = g.len();
        (
            DMatrix::from_fn(rows, n, |i, j| g[i][j]),
            DVector::from_vec(h),
        )
    }

    pub fn feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        let (g, h) = self.rows();
        (&g * x - h).iter().all(|&v| v <= tol)
    }
}

/// Brute-force minimizer: tries every set of at most `n` constraints as
/// equalities, keeps the KKT points (feasible, nonnegative multipliers) and
/// returns the one with the smallest objective.
pub fn qp_oracle(qp: &OwnedQp) -> Option<DVector<f64>> {
    let n = qp.quad.nrows();
    let (g, h) = qp.rows();
    let rows = g.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << rows) {
        let set: Vec<usize> = (0..rows).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() > n {
            continue;
        }
        let w = set.len();
        let mut kkt = DMatrix::zeros(n + w, n + w);
        let mut rhs = DVector::zeros(n + w);
        kkt.view_mut((0, 0), (n, n)).copy_from(&(&qp.quad * 2.0));
        for j in 0..n {
            rhs[j] = -qp.lin[j];
        }
        for (pos, &i) in set.iter().enumerate() {
            for j in 0..n {
                kkt[(n + pos, j)] = g[(i, j)];
                kkt[(j, n + pos)] = g[(i, j)];
            }
            rhs[n + pos] = h[i];
        }
        if kkt.clone().svd(false, false).singular_values.min() < 1e-10 {
            continue;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        if !qp.feasible(&x, 1e-9) || sol.rows(n, w).iter().any(|&y| y < -1e-9) {
            continue;
        }
        let value = x.dot(&(&qp.quad * &x)) + qp.lin.dot(&x);
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, x));
        }
    }
    best.map(|(_, x)| x)
}

/// Random strongly convex QP with a nonempty feasible region.
pub fn random_qp<R: Rng>(rng: &mut R, n: usize, m: usize) -> OwnedQp {
    let factor = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0));
    let quad = factor.tr_mul(&factor) + DMatrix::identity(n, n) * 0.1;
    let lin = DVector::from_fn(n, |_, _| rng.gen_range(-10.0..10.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-3.0..5.0));
    let b = DVector::from_fn(m, |_, _| rng.gen_range(0.5..10.0));
    let nonneg = rng.gen_bool(0.7);
    let mut qp = OwnedQp {
        quad,
        lin,
        a,
        b,
        floor: None,
        nonneg,
    };
    if rng.gen_bool(0.5) {
        // Anchor the floor at a feasible point so the region stays nonempty.
        let dir = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
        let mut x = dir.clone();
        while !qp.feasible(&x, 0.0) {
            x *= 0.5;
        }
        let weights = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..3.0));
        let level = weights.dot(&x) - rng.gen_range(0.0..1.0);
        qp.floor = Some((weights, level));
    }
    qp
}

pub fn scalar(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

/// `C = B = [1]`, `l = [1]`, `M = 2`, `A = [1]`, price domain `R₊`.
///
/// With `b = 10` the unique equilibrium price is 4; with `b = 2` every
/// price `p ≥ 4` is an equilibrium.
pub fn line_instance(b: f64, p0: f64) -> ModelInstance<f64> {
    let one = DMatrix::from_element(1, 1, 1.0);
    ModelInstance::new(
        AgentCosts {
            production: one.clone(),
            tax: one.clone(),
            utility: scalar(1.0),
            utility_floor: 2.0,
        },
        FeasibleSet {
            a: one,
            b: scalar(b),
        },
        PriceDomain::NonnegOrthant,
        scalar(p0),
    )
    .unwrap()
}

pub fn combined(p0: f64) -> ModelInstance<f64> {
    line_instance(10.0, p0)
}

pub fn saturated(p0: f64) -> ModelInstance<f64> {
    line_instance(2.0, p0)
}

/// Uniform point in `[lo, hi]^n`.
pub fn uniform_point<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(lo..=hi))
}
