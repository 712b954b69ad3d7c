//! Supply, demand and excess maps, the projection map `T` and the natural
//! residual of the price variational inequality.
//!
//! Supply `S(p)` maximizes `pᵀx − xᵀCx` over `X`; demand `D(p)` minimizes
//! `pᵀx + xᵀBx` over `X ∩ {lᵀx ≥ M}`. Equilibrium prices are the fixed points
//! of `T(p) = P(p − eta (S(p) − D(p)))`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{ModelInstance, PriceDomain, PricePoint};
use crate::qp::{
    default_max_iter, default_tol, solve_qp_warm, Floor, QpProblem, QpSolution, QpStatus, WarmStart,
};
use crate::solver::FixedPointMap;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct MapEvaluation<T: Scalar> {
    pub supply: DVector<T>,
    pub demand: DVector<T>,
    /// `supply − demand`.
    pub excess: DVector<T>,
    pub inner_iterations: usize,
}

pub fn supply_problem<'a, T: Scalar>(
    instance: &'a ModelInstance<T>,
    p: &DVector<T>,
) -> QpProblem<'a, T> {
    QpProblem {
        quad: &instance.costs.production,
        lin: -p,
        a: &instance.feasible.a,
        b: &instance.feasible.b,
        floor: None,
        nonneg: true,
    }
}

pub fn demand_problem<'a, T: Scalar>(
    instance: &'a ModelInstance<T>,
    p: &DVector<T>,
) -> QpProblem<'a, T> {
    QpProblem {
        quad: &instance.costs.tax,
        lin: p.clone(),
        a: &instance.feasible.a,
        b: &instance.feasible.b,
        floor: Some(Floor {
            weights: &instance.costs.utility,
            level: instance.costs.utility_floor,
        }),
        nonneg: true,
    }
}

fn certified<T: Scalar>(
    problem: &QpProblem<'_, T>,
    warm: Option<&WarmStart<T>>,
    map: &'static str,
) -> Result<QpSolution<T>> {
    let n = problem.dim();
    let m = problem.a.nrows();
    let sol = solve_qp_warm(problem, default_tol(), default_max_iter(n, m), warm);
    match sol.status {
        QpStatus::Optimal => Ok(sol),
        status => Err(Error::InnerSolveFailed { map, status }),
    }
}

/// Producer's optimal plan at price `p`.
pub fn supply<T: Scalar>(instance: &ModelInstance<T>, p: &PricePoint<T>) -> Result<DVector<T>> {
    Ok(certified(&supply_problem(instance, p), None, "supply")?.x)
}

/// Consumer's optimal plan at price `p`.
pub fn demand<T: Scalar>(instance: &ModelInstance<T>, p: &PricePoint<T>) -> Result<DVector<T>> {
    Ok(certified(&demand_problem(instance, p), None, "demand")?.x)
}

pub fn excess<T: Scalar>(
    instance: &ModelInstance<T>,
    p: &PricePoint<T>,
) -> Result<MapEvaluation<T>> {
    EquilibriumMap::new(instance).evaluate(p)
}

pub fn project_price<T: Scalar>(domain: &PriceDomain<T>, p: &DVector<T>) -> PricePoint<T> {
    domain.project(p)
}

/// `T(p) = P(p − eta F(p))`.
pub fn nat_map<T: Scalar>(
    instance: &ModelInstance<T>,
    p: &PricePoint<T>,
    eta: T,
) -> Result<PricePoint<T>> {
    EquilibriumMap::with_eta(instance, eta).apply(p)
}

/// `‖p − T(p)‖ / max(‖p‖, 1)`; zero exactly at solutions of the variational
/// inequality.
pub fn vi_residual<T: Scalar>(instance: &ModelInstance<T>, p: &PricePoint<T>, eta: T) -> Result<T> {
    EquilibriumMap::with_eta(instance, eta).residual(p)
}

pub(crate) fn relative_gap<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> T {
    (a - b).norm() / a.norm().max(T::one())
}

/// Evaluation context for the projection map of one instance.
///
/// Keeps the last `(p, F(p))` pair so that a residual check followed by a
/// map application at the same price costs one pair of QP solves, and warm
/// starts each QP from the previous solution (the constraints do not depend
/// on `p`). Owned by a single solve; never shared.
pub struct EquilibriumMap<'a, T: Scalar> {
    instance: &'a ModelInstance<T>,
    eta: T,
    last: Option<(DVector<T>, MapEvaluation<T>)>,
    supply_warm: Option<WarmStart<T>>,
    demand_warm: Option<WarmStart<T>>,
    qp_solves: usize,
}

impl<'a, T: Scalar> EquilibriumMap<'a, T> {
    /// Uses the instance's configured `eta`.
    pub fn new(instance: &'a ModelInstance<T>) -> Self {
        Self::with_eta(instance, instance.constants.eta)
    }

    pub fn with_eta(instance: &'a ModelInstance<T>, eta: T) -> Self {
        if !instance.constants.eta_in_range(eta) {
            log::warn!(
                "eta = {eta:e} is outside (0, {:e}]; T may fail to be nonexpansive",
                instance.constants.eta_max()
            );
        }
        Self {
            instance,
            eta,
            last: None,
            supply_warm: None,
            demand_warm: None,
            qp_solves: 0,
        }
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    /// Number of QP solves performed so far.
    pub fn qp_solves(&self) -> usize {
        self.qp_solves
    }

    pub fn evaluate(&mut self, p: &PricePoint<T>) -> Result<MapEvaluation<T>> {
        if let Some((key, eval)) = &self.last {
            if key == p {
                return Ok(eval.clone());
            }
        }
        let s = certified(
            &supply_problem(self.instance, p),
            self.supply_warm.as_ref(),
            "supply",
        )?;
        let d = certified(
            &demand_problem(self.instance, p),
            self.demand_warm.as_ref(),
            "demand",
        )?;
        self.qp_solves += 2;
        let eval = MapEvaluation {
            excess: &s.x - &d.x,
            inner_iterations: s.iterations + d.iterations,
            supply: s.x.clone(),
            demand: d.x.clone(),
        };
        self.supply_warm = Some(s.warm_start());
        self.demand_warm = Some(d.warm_start());
        self.last = Some((p.clone(), eval.clone()));
        Ok(eval)
    }

    pub fn residual(&mut self, p: &PricePoint<T>) -> Result<T> {
        let tp = self.apply(p)?;
        Ok(relative_gap(p, &tp))
    }
}

impl<T: Scalar> FixedPointMap<T> for EquilibriumMap<'_, T> {
    fn apply(&mut self, p: &DVector<T>) -> Result<DVector<T>> {
        let eval = self.evaluate(p)?;
        Ok(self.instance.domain.project(&(p - eval.excess * self.eta)))
    }
}
