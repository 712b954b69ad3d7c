//! Seeded random instances.
//!
//! All draws come from `Xoshiro256PlusPlus` seeded with `seed_from_u64(seed)`.
//! Each data block uses its own stream, obtained by applying `jump()` to the
//! base generator `stream` times: 0 → C₁, 1 → B₁, 2 → A, 3 → b, 4 → l, 5 → p0.
//! Adding a block therefore never perturbs the others.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lambda_min;
use crate::model::{validate_instance, DomainKind, DomainSpec, InstanceFile, ModelInstance};
use crate::qp::{solve_qp, QpProblem, QpStatus};
use crate::Scalar;

pub const GENERATOR_NAME: &str = "xoshiro256++/rand_xoshiro-0.6/jump-streams";
pub const LAMBDA_MIN_THRESHOLD: f64 = 1e-8;
pub const FLOOR_FRACTION: f64 = 0.5;
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n: usize,
    pub m: usize,
    pub domain: DomainKind,
    pub seed: u64,
    /// Entries of the cost and tax factors `C₁`, `B₁`.
    pub factor_range: Interval,
    /// Entries of `A` and `b`, drawn from the open interval.
    pub ab_range: Interval,
    /// Entries of the anchor `p0`; also the box bounds.
    pub p0_range: Interval,
    /// Utility weights `l`, drawn from `(lo, hi]`.
    pub utility_range: Interval,
}

impl GenConfig {
    pub fn new(n: usize, m: usize, domain: DomainKind, seed: u64) -> Self {
        Self {
            n,
            m,
            domain,
            seed,
            factor_range: Interval::new(-10.0, 10.0),
            ab_range: Interval::new(0.0, 20.0),
            p0_range: Interval::new(0.0, 100.0),
            utility_range: Interval::new(0.0, 10.0),
        }
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidParameter("n and m must be at least 1".into()));
        }
        for (name, r) in [
            ("factor range", self.factor_range),
            ("A/b range", self.ab_range),
            ("p0 range", self.p0_range),
            ("utility range", self.utility_range),
        ] {
            if r.lo.is_nan() || r.hi.is_nan() || r.lo >= r.hi {
                return Err(Error::InvalidParameter(format!(
                    "{name}: lower bound must be below upper"
                )));
            }
        }
        if self.ab_range.lo < 0.0 {
            return Err(Error::InvalidParameter(
                "A/b range must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Provenance block written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenMetadata {
    pub seed: u64,
    pub generator: String,
    pub factor_range: Interval,
    pub ab_range: Interval,
    pub p0_range: Interval,
    pub utility_range: Interval,
    /// `M = floor_fraction · max { lᵀx : x ∈ X }`.
    pub floor_fraction: f64,
    pub lambda_min_threshold: f64,
    /// Factor re-draws caused by near-singular `FᵀF` (C then B).
    pub redraws: [usize; 2],
    pub note: String,
}

fn stream(seed: u64, index: usize) -> Xoshiro256PlusPlus {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..index {
        rng.jump();
    }
    rng
}

/// Uniform draw from the open interval `(lo, hi)`.
fn open_uniform<R: Rng>(rng: &mut R, range: Interval) -> f64 {
    let dist = Uniform::new(range.lo, range.hi);
    loop {
        let v = dist.sample(rng);
        if v > range.lo {
            return v;
        }
    }
}

/// `FᵀF`.
pub fn factor_product(factor: &DMatrix<f64>) -> DMatrix<f64> {
    factor.tr_mul(factor)
}

/// Draws `F` with i.i.d. uniform entries and returns `FᵀF`, re-drawing while
/// its smallest eigenvalue is below [`LAMBDA_MIN_THRESHOLD`]. The second
/// value is the number of re-draws.
pub fn pd_from_factor<R: Rng>(
    n: usize,
    range: Interval,
    rng: &mut R,
) -> Result<(DMatrix<f64>, usize)> {
    let dist = Uniform::new_inclusive(range.lo, range.hi);
    for redraws in 0..MAX_ATTEMPTS {
        let factor = DMatrix::from_fn(n, n, |_, _| dist.sample(rng));
        let pd = factor_product(&factor);
        if lambda_min(&pd) >= LAMBDA_MIN_THRESHOLD {
            return Ok((pd, redraws));
        }
    }
    Err(Error::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: "factor products stayed near-singular".into(),
    })
}

/// `max { lᵀx : x ≥ 0, Ax ≤ b }`, via the QP with objective `1e-10‖x‖² − lᵀx`.
fn max_utility(a: &DMatrix<f64>, b: &DVector<f64>, l: &DVector<f64>) -> Option<f64> {
    let q = DMatrix::identity(l.len(), l.len()) * 1e-10;
    let problem = QpProblem {
        quad: &q,
        lin: -l,
        a,
        b,
        floor: None,
        nonneg: true,
    };
    let sol = solve_qp(&problem, 1e-9, 200 * (l.len() + a.nrows()));
    (sol.status == QpStatus::Optimal).then(|| l.dot(&sol.x))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Builds the instance data for `config`, including the provenance block.
pub fn random_instance_file(config: &GenConfig) -> Result<InstanceFile> {
    config.check()?;
    let (n, m) = (config.n, config.m);

    let (c, redraw_c) = pd_from_factor(n, config.factor_range, &mut stream(config.seed, 0))?;
    let (b_tax, redraw_b) = pd_from_factor(n, config.factor_range, &mut stream(config.seed, 1))?;

    let mut rng_a = stream(config.seed, 2);
    let mut rng_b = stream(config.seed, 3);
    let mut rng_l = stream(config.seed, 4);
    let mut rng_p = stream(config.seed, 5);

    let l_dist = Uniform::new(config.utility_range.lo, config.utility_range.hi);
    let p_dist = Uniform::new_inclusive(config.p0_range.lo, config.p0_range.hi);

    for _ in 0..MAX_ATTEMPTS {
        let a = DMatrix::from_fn(m, n, |_, _| open_uniform(&mut rng_a, config.ab_range));
        let b = DVector::from_fn(m, |_, _| open_uniform(&mut rng_b, config.ab_range));
        // (lo, hi] by reflecting a draw from [lo, hi).
        let l = DVector::from_fn(n, |_, _| {
            config.utility_range.lo + config.utility_range.hi - l_dist.sample(&mut rng_l)
        });
        let Some(best) = max_utility(&a, &b, &l) else {
            continue;
        };
        if best.is_nan() || best <= 0.0 {
            continue;
        }
        let p0: Vec<f64> = (0..n).map(|_| p_dist.sample(&mut rng_p)).collect();
        let domain = match config.domain {
            DomainKind::Orthant => DomainSpec::Orthant,
            DomainKind::Box => DomainSpec::Box {
                lower: vec![config.p0_range.lo; n],
                upper: vec![config.p0_range.hi; n],
            },
        };
        let file = InstanceFile {
            n,
            m,
            c: rows(&c),
            b_tax: rows(&b_tax),
            l: l.iter().copied().collect(),
            floor: FLOOR_FRACTION * best,
            a: rows(&a),
            b: b.iter().copied().collect(),
            domain,
            p0,
            gen: Some(GenMetadata {
                seed: config.seed,
                generator: GENERATOR_NAME.into(),
                factor_range: config.factor_range,
                ab_range: config.ab_range,
                p0_range: config.p0_range,
                utility_range: config.utility_range,
                floor_fraction: FLOOR_FRACTION,
                lambda_min_threshold: LAMBDA_MIN_THRESHOLD,
                redraws: [redraw_c, redraw_b],
                note: "l, M, box bounds and eta are filled in by this generator; \
                       results are not an exact reproduction of any published table"
                    .into(),
            }),
        };
        let instance = ModelInstance::<f64>::from_file(&file)?;
        if validate_instance(&instance).is_valid() {
            return Ok(file);
        }
    }
    Err(Error::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: "no valid feasible set / utility combination".into(),
    })
}

pub fn random_instance<T: Scalar>(config: &GenConfig) -> Result<ModelInstance<T>> {
    ModelInstance::from_file(&random_instance_file(config)?)
}
