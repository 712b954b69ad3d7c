//! Small dense helpers layered on nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::Scalar;

pub fn max_asymmetry<T: Scalar>(m: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetric part of a square matrix.
pub fn lambda_min<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    let sym = (m + m.transpose()) * T::of(0.5);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), |acc, v| acc.min(v))
}

/// Minimum-norm least-squares solution of `m y ≈ v`.
///
/// Works from the eigendecomposition of the Gram matrix `mᵀm` followed by two
/// refinement steps; nalgebra's SVD loses accuracy on some tall, moderately
/// conditioned matrices. Directions with squared singular value below a
/// relative cutoff of about `1e3·ε` are treated as null.
pub fn lstsq<T: Scalar>(m: &DMatrix<T>, v: &DVector<T>) -> DVector<T> {
    if m.ncols() == 0 {
        return DVector::zeros(0);
    }
    if m.nrows() == 0 {
        return DVector::zeros(m.ncols());
    }
    let eig = SymmetricEigen::new(m.tr_mul(m));
    let top = eig.eigenvalues.amax();
    let cutoff = T::machine_eps() * T::of(1e3) * T::of(m.ncols() as f64) * top;
    let inv = eig
        .eigenvalues
        .map(|l| if l > cutoff { T::one() / l } else { T::zero() });
    let pinv_normal = |rhs: &DVector<T>| {
        let w = eig.eigenvectors.tr_mul(rhs).component_mul(&inv);
        &eig.eigenvectors * w
    };
    let mut y = pinv_normal(&m.tr_mul(v));
    for _ in 0..2 {
        let r = v - m * &y;
        y += pinv_normal(&m.tr_mul(&r));
    }
    y
}

/// Nonnegative least squares, `min ‖m y − v‖` subject to `y ≥ 0` (Lawson–Hanson).
pub fn nnls<T: Scalar>(m: &DMatrix<T>, v: &DVector<T>) -> DVector<T> {
    let cols = m.ncols();
    let mut y = DVector::<T>::zeros(cols);
    if cols == 0 {
        return y;
    }
    let mut passive = vec![false; cols];
    let scale = m.amax().max(T::one()) * v.amax().max(T::one());
    let w_tol = T::machine_eps() * T::of(1e3) * scale * T::of(cols as f64);

    for _ in 0..(3 * cols + 3) {
        let w = m.tr_mul(&(v - m * &y));
        let entering = (0..cols)
            .filter(|&j| !passive[j] && w[j] > w_tol)
            .max_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap());
        let Some(j) = entering else { break };
        passive[j] = true;

        for _ in 0..(3 * cols + 3) {
            let idx: Vec<usize> = (0..cols).filter(|&k| passive[k]).collect();
            let sub = m.select_columns(idx.iter());
            let s_sub = lstsq(&sub, v);
            if s_sub.iter().all(|&s| s > T::zero()) {
                y.fill(T::zero());
                for (pos, &k) in idx.iter().enumerate() {
                    y[k] = s_sub[pos];
                }
                break;
            }
            let mut alpha = T::one();
            for (pos, &k) in idx.iter().enumerate() {
                if s_sub[pos] <= T::zero() {
                    let denom = y[k] - s_sub[pos];
                    if denom > T::zero() {
                        alpha = alpha.min(y[k] / denom);
                    } else {
                        alpha = T::zero();
                    }
                }
            }
            for (pos, &k) in idx.iter().enumerate() {
                let yk = y[k];
                y[k] = yk + alpha * (s_sub[pos] - yk);
                if y[k] <= T::machine_eps() * scale {
                    y[k] = T::zero();
                    passive[k] = false;
                }
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lambda_min_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        assert_abs_diff_eq!(lambda_min(&m), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn nnls_clamps_negative_direction() {
        // min |−y − 4| with y ≥ 0 → y = 0
        let m = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let v = DVector::from_vec(vec![4.0]);
        assert_eq!(nnls(&m, &v)[0], 0.0);
        let v = DVector::from_vec(vec![-4.0]);
        assert_abs_diff_eq!(nnls(&m, &v)[0], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn nnls_matches_unconstrained_when_interior() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let truth = DVector::from_vec(vec![0.7, 2.5]);
        let v = &m * &truth;
        let y = nnls(&m, &v);
        assert_abs_diff_eq!(y, truth, epsilon = 1e-10);
    }

    #[test]
    fn lstsq_handles_rank_deficiency() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let v = DVector::from_vec(vec![2.0, 2.0]);
        let y = lstsq(&m, &v);
        assert_abs_diff_eq!(y, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-10);
    }

    #[test]
    fn lstsq_tall_system_satisfies_normal_equations() {
        let m = DMatrix::from_fn(40, 30, |i, j| {
            ((i * 31 + j * 17) % 23) as f64 - 11.0 + if i == j { 5.0 } else { 0.0 }
        });
        let v = DVector::from_fn(40, |i, _| (i as f64).sin());
        let y = lstsq(&m, &v);
        assert!(m.tr_mul(&(&m * &y - &v)).amax() <= 1e-9);
    }
}
