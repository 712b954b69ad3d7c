//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::LowerExp;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the solvers are generic over (`f32` or `f64`).
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + LowerExp + Send + Sync + 'static
{
    /// Converts an `f64` literal or parameter into this scalar type.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to every supported scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("supported scalars convert to f64")
    }

    /// Machine epsilon of the type.
    fn machine_eps() -> Self {
        Self::default_epsilon()
    }

    /// Returns `base` unless the type is too coarse for it, in which case a
    /// multiple of machine epsilon is used instead.
    fn tol_at_least(base: f64, eps_multiple: f64) -> Self {
        let floor = Self::machine_eps() * Self::of(eps_multiple);
        Self::of(base).max(floor)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_floor_depends_on_precision() {
        assert_eq!(f64::tol_at_least(1e-9, 1e3), 1e-9);
        assert!(f32::tol_at_least(1e-9, 1e3) > 1e-5);
    }
}
