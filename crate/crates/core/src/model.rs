//! Problem data for the two-agent price model, derived constants, JSON
//! schema and validation.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gen::GenMetadata;
use crate::linalg::{lambda_min, max_asymmetry};
use crate::qp::{feasible_point, Feasibility, Floor};
use crate::Scalar;

/// A price vector, one entry per commodity.
pub type PricePoint<T> = DVector<T>;

/// The admissible price set `P`.
#[derive(Debug, Clone, PartialEq)]
pub enum PriceDomain<T: Scalar> {
    NonnegOrthant,
    Box {
        lower: DVector<T>,
        upper: DVector<T>,
    },
}

impl<T: Scalar> PriceDomain<T> {
    pub fn unit_box(n: usize, lower: T, upper: T) -> Self {
        PriceDomain::Box {
            lower: DVector::from_element(n, lower),
            upper: DVector::from_element(n, upper),
        }
    }

    /// Componentwise metric projection: `max(p_j, 0)` on the orthant,
    /// `clamp(p_j, a_j, b_j)` on a box.
    pub fn project(&self, p: &DVector<T>) -> DVector<T> {
        match self {
            PriceDomain::NonnegOrthant => p.map(|v| v.max(T::zero())),
            PriceDomain::Box { lower, upper } => {
                DVector::from_fn(p.len(), |j, _| p[j].max(lower[j]).min(upper[j]))
            }
        }
    }

    pub fn contains(&self, p: &DVector<T>) -> bool {
        match self {
            PriceDomain::NonnegOrthant => p.iter().all(|&v| v >= T::zero()),
            PriceDomain::Box { lower, upper } => {
                (0..p.len()).all(|j| p[j] >= lower[j] && p[j] <= upper[j])
            }
        }
    }

    pub fn kind(&self) -> DomainKind {
        match self {
            PriceDomain::NonnegOrthant => DomainKind::Orthant,
            PriceDomain::Box { .. } => DomainKind::Box,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Orthant,
    Box,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainKind::Orthant => "orthant",
            DomainKind::Box => "box",
        })
    }
}

/// `X = { x ≥ 0 : A x ≤ b }`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSet<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
}

/// Producer cost `xᵀCx`, consumer tax `xᵀBx` and utility `lᵀx ≥ M`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentCosts<T: Scalar> {
    pub production: DMatrix<T>,
    pub tax: DMatrix<T>,
    pub utility: DVector<T>,
    pub utility_floor: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConstants<T: Scalar> {
    /// Strong-convexity modulus of the cost, `2 λ_min(C)`.
    pub mu_c: T,
    /// Strong-convexity modulus of the tax, `2 λ_min(B)`.
    pub mu_t: T,
    /// `½ min(mu_c, mu_t)`.
    pub mu_f: T,
    /// Lipschitz constant of the supply map, `1 / mu_c`.
    pub lip_c: T,
    /// Lipschitz constant of the demand map, `1 / mu_t`.
    pub lip_t: T,
    /// Step of the projection map `T(p) = P(p − eta F(p))`.
    pub eta: T,
}

impl<T: Scalar> ModelConstants<T> {
    /// Largest step for which the projection map is guaranteed nonexpansive.
    pub fn eta_max(&self) -> T {
        self.mu_f * T::of(2.0)
    }

    pub fn eta_in_range(&self, eta: T) -> bool {
        eta > T::zero() && eta <= self.eta_max() * (T::one() + T::machine_eps() * T::of(4.0))
    }
}

const SYMMETRY_TOL: f64 = 1e-10;
const PD_THRESHOLD: f64 = 1e-12;

fn check_spd<T: Scalar>(m: &DMatrix<T>, name: &'static str) -> Result<T> {
    let asym = max_asymmetry(m);
    if asym > T::tol_at_least(SYMMETRY_TOL, 16.0) * m.amax().max(T::one()) {
        return Err(Error::NotSymmetric {
            matrix: name,
            asymmetry: asym.as_f64(),
        });
    }
    let lmin = lambda_min(m);
    if lmin <= T::of(PD_THRESHOLD) {
        return Err(Error::NotPositiveDefinite {
            matrix: name,
            lambda_min: lmin.as_f64(),
        });
    }
    Ok(lmin)
}

/// Monotonicity and Lipschitz constants of the supply and demand maps.
/// `eta` defaults to `mu_F`.
pub fn compute_constants<T: Scalar>(costs: &AgentCosts<T>) -> Result<ModelConstants<T>> {
    let two = T::of(2.0);
    let mu_c = two * check_spd(&costs.production, "C")?;
    let mu_t = two * check_spd(&costs.tax, "B")?;
    let mu_f = mu_c.min(mu_t) / two;
    Ok(ModelConstants {
        mu_c,
        mu_t,
        mu_f,
        lip_c: T::one() / mu_c,
        lip_t: T::one() / mu_t,
        eta: mu_f,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelInstance<T: Scalar> {
    pub costs: AgentCosts<T>,
    pub feasible: FeasibleSet<T>,
    pub domain: PriceDomain<T>,
    /// Anchor price of the regularizer, always inside `domain`.
    pub p0: PricePoint<T>,
    pub constants: ModelConstants<T>,
    /// Set when the supplied anchor lay outside the domain and was projected.
    pub p0_projected: bool,
}

impl<T: Scalar> ModelInstance<T> {
    /// Checks dimensions and finiteness, computes the constants and projects
    /// `p0` into the domain.
    pub fn new(
        costs: AgentCosts<T>,
        feasible: FeasibleSet<T>,
        domain: PriceDomain<T>,
        p0: PricePoint<T>,
    ) -> Result<Self> {
        let n = p0.len();
        if n == 0 {
            return Err(Error::InvalidParameter(
                "dimension n must be positive".into(),
            ));
        }
        let square = |m: &DMatrix<T>, field| -> Result<()> {
            if m.nrows() != n {
                return Err(Error::DimensionMismatch {
                    field,
                    expected: n,
                    found: m.nrows(),
                });
            }
            if m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    field,
                    expected: n,
                    found: m.ncols(),
                });
            }
            Ok(())
        };
        square(&costs.production, "C")?;
        square(&costs.tax, "B")?;
        let len = |found: usize, expected: usize, field| {
            if found == expected {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    field,
                    expected,
                    found,
                })
            }
        };
        len(costs.utility.len(), n, "l")?;
        len(feasible.a.ncols(), n, "A (columns)")?;
        len(feasible.b.len(), feasible.a.nrows(), "b")?;
        if let PriceDomain::Box { lower, upper } = &domain {
            len(lower.len(), n, "domain.lower")?;
            len(upper.len(), n, "domain.upper")?;
        }

        let finite_m = |m: &DMatrix<T>, name| {
            if m.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(Error::NonFinite(name))
            }
        };
        let finite_v = |v: &DVector<T>, name| {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(Error::NonFinite(name))
            }
        };
        finite_m(&costs.production, "C")?;
        finite_m(&costs.tax, "B")?;
        finite_v(&costs.utility, "l")?;
        finite_m(&feasible.a, "A")?;
        finite_v(&feasible.b, "b")?;
        finite_v(&p0, "p0")?;
        if !costs.utility_floor.is_finite() {
            return Err(Error::NonFinite("M"));
        }
        if let PriceDomain::Box { lower, upper } = &domain {
            finite_v(lower, "domain.lower")?;
            finite_v(upper, "domain.upper")?;
        }

        let constants = compute_constants(&costs)?;
        let projected = domain.project(&p0);
        let p0_projected = projected != p0;
        if p0_projected {
            log::warn!("p0 lies outside the price domain; using its projection");
        }
        Ok(Self {
            costs,
            feasible,
            domain,
            p0: projected,
            constants,
            p0_projected,
        })
    }

    /// Overrides the projection-map step. Steps above `2 mu_F` are accepted
    /// with a warning; nonpositive or non-finite steps are rejected.
    pub fn with_eta(mut self, eta: T) -> Result<Self> {
        if !(eta.is_finite() && eta > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "eta must be positive, got {eta:e}"
            )));
        }
        if !self.constants.eta_in_range(eta) {
            log::warn!(
                "eta = {eta:e} exceeds 2·mu_F = {:e}; the projection map may not be nonexpansive",
                self.constants.eta_max()
            );
        }
        self.constants.eta = eta;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.p0.len()
    }

    pub fn m(&self) -> usize {
        self.feasible.a.nrows()
    }

    pub fn from_file(file: &InstanceFile) -> Result<Self> {
        let n = file.n;
        let matrix = |rows: &[Vec<f64>], r: usize, c: usize, field| -> Result<DMatrix<T>> {
            if rows.len() != r {
                return Err(Error::DimensionMismatch {
                    field,
                    expected: r,
                    found: rows.len(),
                });
            }
            for row in rows {
                if row.len() != c {
                    return Err(Error::DimensionMismatch {
                        field,
                        expected: c,
                        found: row.len(),
                    });
                }
            }
            Ok(DMatrix::from_fn(r, c, |i, j| T::of(rows[i][j])))
        };
        let vector = |v: &[f64], len: usize, field| -> Result<DVector<T>> {
            if v.len() != len {
                return Err(Error::DimensionMismatch {
                    field,
                    expected: len,
                    found: v.len(),
                });
            }
            Ok(DVector::from_iterator(len, v.iter().map(|&x| T::of(x))))
        };
        let costs = AgentCosts {
            production: matrix(&file.c, n, n, "C")?,
            tax: matrix(&file.b_tax, n, n, "B")?,
            utility: vector(&file.l, n, "l")?,
            utility_floor: T::of(file.floor),
        };
        let feasible = FeasibleSet {
            a: matrix(&file.a, file.m, n, "A")?,
            b: vector(&file.b, file.m, "b")?,
        };
        let domain = match &file.domain {
            DomainSpec::Orthant => PriceDomain::NonnegOrthant,
            DomainSpec::Box { lower, upper } => PriceDomain::Box {
                lower: vector(lower, n, "domain.lower")?,
                upper: vector(upper, n, "domain.upper")?,
            },
        };
        Self::new(costs, feasible, domain, vector(&file.p0, n, "p0")?)
    }

    pub fn to_file(&self) -> InstanceFile {
        let rows = |m: &DMatrix<T>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)].as_f64()).collect())
                .collect()
        };
        let vec = |v: &DVector<T>| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        InstanceFile {
            n: self.n(),
            m: self.m(),
            c: rows(&self.costs.production),
            b_tax: rows(&self.costs.tax),
            l: vec(&self.costs.utility),
            floor: self.costs.utility_floor.as_f64(),
            a: rows(&self.feasible.a),
            b: vec(&self.feasible.b),
            domain: match &self.domain {
                PriceDomain::NonnegOrthant => DomainSpec::Orthant,
                PriceDomain::Box { lower, upper } => DomainSpec::Box {
                    lower: vec(lower),
                    upper: vec(upper),
                },
            },
            p0: vec(&self.p0),
            gen: None,
        }
    }
}

/// On-disk instance layout. Matrices are row-major arrays of arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b_tax: Vec<Vec<f64>>,
    pub l: Vec<f64>,
    #[serde(rename = "M")]
    pub floor: f64,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub domain: DomainSpec,
    pub p0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen: Option<GenMetadata>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DomainSpec {
    Orthant,
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    NotSymmetric { matrix: &'static str },
    NotPositiveDefinite { matrix: &'static str },
    NonPositiveUtilityFloor,
    InvalidBox { index: usize },
    EmptyFeasibleSet,
    DemandInfeasible,
    P0OutsideDomain,
    NonPositiveEta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Warning {
    P0Projected,
    EtaAboveBound,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotSymmetric { matrix } => {
                write!(f, "NotSymmetric: {matrix} is not symmetric")
            }
            Violation::NotPositiveDefinite { matrix } => {
                write!(f, "NotPositiveDefinite: {matrix} is not positive definite")
            }
            Violation::NonPositiveUtilityFloor => {
                f.write_str("NonPositiveUtilityFloor: M must be > 0")
            }
            Violation::InvalidBox { index } => {
                write!(f, "InvalidBox: lower[{index}] > upper[{index}]")
            }
            Violation::EmptyFeasibleSet => {
                f.write_str("EmptyFeasibleSet: {x ≥ 0 : Ax ≤ b} is empty")
            }
            Violation::DemandInfeasible => f.write_str("DemandInfeasible: no x in X with lᵀx ≥ M"),
            Violation::P0OutsideDomain => {
                f.write_str("P0OutsideDomain: p0 is not in the price domain")
            }
            Violation::NonPositiveEta => f.write_str("NonPositiveEta: eta must be > 0"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-checks every instance invariant, including nonemptiness of the
/// demand constraint set. Violations are collected, never raised.
pub fn validate_instance<T: Scalar>(instance: &ModelInstance<T>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let costs = &instance.costs;
    for (m, name) in [(&costs.production, "C"), (&costs.tax, "B")] {
        match check_spd(m, name) {
            Err(Error::NotSymmetric { .. }) => report
                .violations
                .push(Violation::NotSymmetric { matrix: name }),
            Err(_) => report
                .violations
                .push(Violation::NotPositiveDefinite { matrix: name }),
            Ok(_) => {}
        }
    }
    if costs.utility_floor <= T::zero() {
        report.violations.push(Violation::NonPositiveUtilityFloor);
    }
    if let PriceDomain::Box { lower, upper } = &instance.domain {
        for j in 0..lower.len() {
            if lower[j] > upper[j] {
                report.violations.push(Violation::InvalidBox { index: j });
            }
        }
    }
    if !instance.domain.contains(&instance.p0) {
        report.violations.push(Violation::P0OutsideDomain);
    }
    if instance.constants.eta <= T::zero() {
        report.violations.push(Violation::NonPositiveEta);
    } else if !instance.constants.eta_in_range(instance.constants.eta) {
        report.warnings.push(Warning::EtaAboveBound);
    }
    if instance.p0_projected {
        report.warnings.push(Warning::P0Projected);
    }

    let fs = &instance.feasible;
    match feasible_point(&fs.a, &fs.b, None, true) {
        Feasibility::Feasible { .. } => {
            let floor = Floor {
                weights: &costs.utility,
                level: costs.utility_floor,
            };
            if !matches!(
                feasible_point(&fs.a, &fs.b, Some(floor), true),
                Feasibility::Feasible { .. }
            ) {
                report.violations.push(Violation::DemandInfeasible);
            }
        }
        _ => report.violations.push(Violation::EmptyFeasibleSet),
    }
    report
}
