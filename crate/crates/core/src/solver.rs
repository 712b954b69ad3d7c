//! Minimizing a strongly convex regularizer over the fixed-point set of a
//! nonexpansive map.
//!
//! Each iteration takes a projected gradient step on the regularizer and
//! averages it with one application of the map:
//!
//! ```text
//!     q_k     = P(p_k − α_k ∇f(p_k))
//!     p_{k+1} = λ_k q_k + (1 − λ_k) T(p_k)
//! ```
//!
//! With `λ_k, α_k → 0`, `Σ λ_k α_k = ∞` and summable successive differences,
//! the iterates converge to the fixed point of `T` nearest (in `f`) to the
//! anchor. A plain Krasnoselskii–Mann iteration is provided as a baseline; it
//! reaches *some* fixed point, depending on where it starts.

use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::maps::relative_gap;
use crate::model::PriceDomain;
use crate::Scalar;

/// A map `p ↦ T(p)` on the price domain.
pub trait FixedPointMap<T: Scalar> {
    fn apply(&mut self, p: &DVector<T>) -> Result<DVector<T>>;
}

impl<T: Scalar, F> FixedPointMap<T> for F
where
    F: FnMut(&DVector<T>) -> Result<DVector<T>>,
{
    fn apply(&mut self, p: &DVector<T>) -> Result<DVector<T>> {
        self(p)
    }
}

/// Strongly convex, smooth upper-level objective.
pub trait Objective<T: Scalar> {
    fn value(&self, p: &DVector<T>) -> T;
    fn gradient(&self, p: &DVector<T>) -> DVector<T>;
    /// Strong-convexity modulus `β`.
    fn modulus(&self) -> T;
    /// Lipschitz constant `L` of the gradient.
    fn lipschitz(&self) -> T;
}

/// `f(p) = ‖p − p0‖²`, with `β = L = 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredDistance<T: Scalar> {
    pub anchor: DVector<T>,
}

impl<T: Scalar> SquaredDistance<T> {
    pub fn new(anchor: DVector<T>) -> Self {
        Self { anchor }
    }
}

impl<T: Scalar> Objective<T> for SquaredDistance<T> {
    fn value(&self, p: &DVector<T>) -> T {
        (p - &self.anchor).norm_squared()
    }

    fn gradient(&self, p: &DVector<T>) -> DVector<T> {
        (p - &self.anchor) * T::of(2.0)
    }

    fn modulus(&self) -> T {
        T::of(2.0)
    }

    fn lipschitz(&self) -> T {
        T::of(2.0)
    }
}

/// Sequences `λ_k` (averaging weight) and `α_k` (gradient step), `k ≥ 1`.
#[derive(Debug, Clone, Copy)]
pub struct StepSchedule {
    name: &'static str,
    lambda_of: fn(usize) -> f64,
    alpha_of: fn(usize) -> f64,
}

fn inverse_sqrt(k: usize) -> f64 {
    1.0 / ((k + 1) as f64).sqrt()
}

impl StepSchedule {
    pub fn new(
        name: &'static str,
        lambda_of: fn(usize) -> f64,
        alpha_of: fn(usize) -> f64,
    ) -> Self {
        Self {
            name,
            lambda_of,
            alpha_of,
        }
    }

    /// `λ_k = α_k = 1/√(k+1)`. Both decrease to zero, `Σ λ_k α_k = Σ 1/(k+1)`
    /// diverges, and the differences telescope to a finite sum.
    pub fn inverse_sqrt() -> Self {
        Self::new("sqrt", inverse_sqrt, inverse_sqrt)
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sqrt" => Some(Self::inverse_sqrt()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn lambda<T: Scalar>(&self, k: usize) -> T {
        T::of((self.lambda_of)(k))
    }

    pub fn alpha<T: Scalar>(&self, k: usize) -> T {
        T::of((self.alpha_of)(k))
    }
}

pub fn schedule_default() -> StepSchedule {
    StepSchedule::inverse_sqrt()
}

/// `γ = 1 − √(1 − 2βα + L²α²)`, the contraction gained by one gradient step
/// of length `α` on a `β`-strongly convex function with `L`-Lipschitz
/// gradient.
///
/// The radicand is evaluated as `(Lα − β/L)² + 1 − β²/L²`, which is
/// nonnegative whenever `β ≤ L`.
pub fn gamma_k<T: Scalar>(beta: T, lipschitz: T, alpha: T) -> T {
    T::one() - gamma_radicand(beta, lipschitz, alpha).sqrt()
}

pub fn gamma_radicand<T: Scalar>(beta: T, lipschitz: T, alpha: T) -> T {
    let shifted = lipschitz * alpha - beta / lipschitz;
    let ratio = beta / lipschitz;
    (shifted * shifted + T::one() - ratio * ratio).max(T::zero())
}

/// `P(p − α ∇f(p))`.
pub fn gradient_step<T: Scalar, O: Objective<T>>(
    objective: &O,
    p: &DVector<T>,
    alpha: T,
    domain: &PriceDomain<T>,
) -> DVector<T> {
    domain.project(&(p - objective.gradient(p) * alpha))
}

#[derive(Debug, Clone)]
pub struct SolveOptions<T: Scalar> {
    /// Stop once `‖p_{k+1} − p_k‖ / max(‖p_{k+1}‖, 1) < eps`.
    pub eps: T,
    pub max_iter: usize,
    /// The map residual is recorded every `trace_every` iterations and at the
    /// last one.
    pub trace_every: usize,
    /// First iterate; defaults to the projection of the objective's anchor
    /// for [`SquaredDistance`] callers, or must be given explicitly.
    pub start: Option<DVector<T>>,
    /// Keep every iterate `p_1, …, p_{K+1}` in the report.
    pub record_iterates: bool,
}

impl<T: Scalar> Default for SolveOptions<T> {
    fn default() -> Self {
        Self {
            eps: T::of(1e-4),
            max_iter: 10_000,
            trace_every: 10,
            start: None,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    Converged,
    ExactFixedPoint,
    IterLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow<T: Scalar> {
    pub k: usize,
    pub step_residual: T,
    /// `‖p − T(p)‖ / max(‖p‖, 1)` at `p_{k+1}`, when sampled.
    pub vi_residual: Option<T>,
    /// `f(p_{k+1})`.
    pub f_value: T,
}

#[derive(Debug, Clone)]
pub struct SolveReport<T: Scalar> {
    pub solution: DVector<T>,
    pub iterations: usize,
    pub wall_time: f64,
    pub trace: Vec<TraceRow<T>>,
    pub termination: Termination,
    pub iterates: Option<Vec<DVector<T>>>,
}

impl<T: Scalar> SolveReport<T> {
    pub fn final_step_residual(&self) -> Option<T> {
        self.trace.last().map(|r| r.step_residual)
    }

    pub fn final_vi_residual(&self) -> Option<T> {
        self.trace.last().and_then(|r| r.vi_residual)
    }
}

fn nearly_equal<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> bool {
    (a - b).norm() <= T::of(1e-14) * a.norm().max(T::one())
}

/// Runs the hybrid gradient / averaged fixed-point iteration.
///
/// Reaching `max_iter` is not an error: the report comes back with
/// `Termination::IterLimit` and the full trace. Errors only come from the map.
pub fn bilevel_solve<T, M, O>(
    map: &mut M,
    objective: &O,
    domain: &PriceDomain<T>,
    schedule: &StepSchedule,
    opts: &SolveOptions<T>,
) -> Result<SolveReport<T>>
where
    T: Scalar,
    M: FixedPointMap<T> + ?Sized,
    O: Objective<T>,
{
    if !opts.eps.is_finite() || opts.eps <= T::zero() {
        return Err(Error::InvalidParameter("eps must be positive".into()));
    }
    if opts.max_iter == 0 || opts.trace_every == 0 {
        return Err(Error::InvalidParameter(
            "max_iter and trace_every must be positive".into(),
        ));
    }
    let start = opts
        .start
        .clone()
        .ok_or_else(|| Error::InvalidParameter("a start point is required".into()))?;

    let clock = Instant::now();
    let mut p = domain.project(&start);
    let mut trace = Vec::new();
    let mut iterates = opts.record_iterates.then(|| vec![p.clone()]);
    let mut termination = Termination::IterLimit;

    for k in 1..=opts.max_iter {
        let lambda: T = schedule.lambda(k);
        let alpha: T = schedule.alpha(k);
        let q = gradient_step(objective, &p, alpha, domain);
        let tp = map.apply(&p)?;
        let next = &q * lambda + tp * (T::one() - lambda);

        let step_residual = relative_gap(&next, &p);
        let exact = nearly_equal(&p, &q) && nearly_equal(&p, &next);
        let done = exact || step_residual < opts.eps;
        let vi_residual = if done || k % opts.trace_every == 0 || k == opts.max_iter {
            Some(relative_gap(&next, &map.apply(&next)?))
        } else {
            None
        };
        trace.push(TraceRow {
            k,
            step_residual,
            vi_residual,
            f_value: objective.value(&next),
        });
        if let Some(it) = iterates.as_mut() {
            it.push(next.clone());
        }
        p = next;
        if exact {
            termination = Termination::ExactFixedPoint;
            break;
        }
        if done {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(SolveReport {
        solution: p,
        iterations: trace.len(),
        wall_time: clock.elapsed().as_secs_f64(),
        trace,
        termination,
        iterates,
    })
}

/// Convenience wrapper for `f(p) = ‖p − p0‖²` starting at the projection of
/// `p0`.
pub fn solve_nearest<T, M>(
    map: &mut M,
    p0: &DVector<T>,
    domain: &PriceDomain<T>,
    schedule: &StepSchedule,
    opts: &SolveOptions<T>,
) -> Result<SolveReport<T>>
where
    T: Scalar,
    M: FixedPointMap<T> + ?Sized,
{
    let objective = SquaredDistance::new(p0.clone());
    let mut opts = opts.clone();
    if opts.start.is_none() {
        opts.start = Some(domain.project(p0));
    }
    bilevel_solve(map, &objective, domain, schedule, &opts)
}

#[derive(Debug, Clone)]
pub struct KmOutcome<T: Scalar> {
    pub point: DVector<T>,
    pub iterations: usize,
}

/// Krasnoselskii–Mann iteration `p ← (1 − θ) p + θ T(p)`.
pub fn km_fixed_point<T, M>(
    map: &mut M,
    domain: &PriceDomain<T>,
    start: &DVector<T>,
    theta: T,
    eps: T,
    max_iter: usize,
) -> Result<KmOutcome<T>>
where
    T: Scalar,
    M: FixedPointMap<T> + ?Sized,
{
    if !(theta > T::zero() && theta < T::one()) {
        return Err(Error::InvalidParameter(format!(
            "theta must lie in (0, 1), got {theta:e}"
        )));
    }
    let mut p = domain.project(start);
    for k in 1..=max_iter {
        let next = &p * (T::one() - theta) + map.apply(&p)? * theta;
        let step = relative_gap(&next, &p);
        p = next;
        if step < eps {
            return Ok(KmOutcome {
                point: p,
                iterations: k,
            });
        }
    }
    Err(Error::IterLimit {
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    #[test]
    fn default_schedule_values() {
        let s = schedule_default();
        assert_abs_diff_eq!(
            s.lambda::<f64>(1),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            s.alpha::<f64>(1),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(s.lambda::<f64>(3), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.alpha::<f64>(99), 0.1, epsilon = 1e-15);
        assert!(StepSchedule::from_name("linear").is_none());
    }

    #[test]
    fn gamma_examples() {
        assert_abs_diff_eq!(gamma_k(2.0, 2.0, 0.25), 0.5, epsilon = 1e-15);
        let g = gamma_k(2.0, 2.0, 0.01);
        assert_abs_diff_eq!(g, 0.02, epsilon = 1e-14);
        assert_abs_diff_eq!(0.01 / g, 0.5, epsilon = 1e-12);
        assert!(gamma_k(2.0, 2.0, 1e-12) < 1e-10);
    }

    #[test]
    fn gradient_step_examples() {
        let f = SquaredDistance::new(v(&[0.0, 0.0]));
        let q = gradient_step(&f, &v(&[2.0, 2.0]), 0.5, &PriceDomain::NonnegOrthant);
        assert_abs_diff_eq!(q, v(&[0.0, 0.0]), epsilon = 1e-15);

        let f = SquaredDistance::new(v(&[3.0, 1.0]));
        assert_eq!(
            gradient_step(&f, &v(&[3.0, 1.0]), 0.7, &PriceDomain::NonnegOrthant),
            v(&[3.0, 1.0])
        );

        let f = SquaredDistance::new(v(&[5.0]));
        let q = gradient_step(&f, &v(&[1.0]), 0.25, &PriceDomain::unit_box(1, 0.0, 3.0));
        assert_abs_diff_eq!(q[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn identity_map_returns_projection_of_anchor() {
        let domain = PriceDomain::unit_box(2, 0.0, 10.0);
        let mut id = |p: &DVector<f64>| Ok(p.clone());
        let opts = SolveOptions {
            eps: 1e-6,
            start: Some(v(&[0.0, 0.0])),
            ..Default::default()
        };
        let f = SquaredDistance::new(v(&[12.0, 5.0]));
        let r = bilevel_solve(&mut id, &f, &domain, &schedule_default(), &opts).unwrap();
        assert_abs_diff_eq!(r.solution, v(&[10.0, 5.0]), epsilon = 1e-3);
        assert_eq!(r.trace.len(), r.iterations);
    }

    #[test]
    fn exact_fixed_point_when_anchor_is_fixed() {
        let domain = PriceDomain::unit_box(2, 0.0, 10.0);
        let mut id = |p: &DVector<f64>| Ok(p.clone());
        let r = solve_nearest(
            &mut id,
            &v(&[12.0, 5.0]),
            &domain,
            &schedule_default(),
            &SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(r.termination, Termination::ExactFixedPoint);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.solution, v(&[10.0, 5.0]));
    }

    #[test]
    fn iteration_limit_keeps_trace() {
        let domain = PriceDomain::NonnegOrthant;
        let mut shift = |p: &DVector<f64>| Ok(p.map(|x| 0.5 * x + 2.0));
        let opts = SolveOptions {
            eps: 1e-12,
            max_iter: 10,
            ..Default::default()
        };
        let r = solve_nearest(&mut shift, &v(&[0.0]), &domain, &schedule_default(), &opts).unwrap();
        assert_eq!(r.termination, Termination::IterLimit);
        assert_eq!(r.trace.len(), 10);
        assert!(r.trace.last().unwrap().vi_residual.is_some());
    }

    #[test]
    fn km_examples() {
        let domain = PriceDomain::NonnegOrthant;
        let mut t = |p: &DVector<f64>| Ok(p.map(|x| if x < 4.0 { 0.5 * x + 2.0 } else { x }));
        let out = km_fixed_point(&mut t, &domain, &v(&[1.0]), 0.5, 1e-10, 10_000).unwrap();
        assert_abs_diff_eq!(out.point[0], 4.0, epsilon = 1e-8);
        let out = km_fixed_point(&mut t, &domain, &v(&[10.0]), 0.5, 1e-10, 10_000).unwrap();
        assert_eq!(out.point[0], 10.0);
        assert_eq!(out.iterations, 1);
        let mut id = |p: &DVector<f64>| Ok(p.clone());
        assert_eq!(
            km_fixed_point(&mut id, &domain, &v(&[3.0, 7.0]), 0.5, 1e-10, 5)
                .unwrap()
                .point,
            v(&[3.0, 7.0])
        );
    }

    #[test]
    fn km_rejects_bad_theta() {
        let mut id = |p: &DVector<f64>| Ok(p.clone());
        assert!(km_fixed_point(
            &mut id,
            &PriceDomain::NonnegOrthant,
            &v(&[1.0]),
            1.0,
            1e-6,
            5
        )
        .is_err());
    }
}
