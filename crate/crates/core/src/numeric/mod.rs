//! Owned numeric kernel: seeded RNG, dense f64 matrices, Householder QR,
//! one-sided Jacobi SVD, Hungarian assignment, and order-fixed summation.
//! Everything is f64 and single-threaded; given the same inputs the same
//! bytes come out on every run.

pub mod hungarian;
pub mod matrix;
pub mod qr;
pub mod rng;
pub mod sum;
pub mod svd;

pub use hungarian::{hungarian_assign, Assignment};
pub use matrix::Matrix;
pub use qr::{householder_qr, QrResult};
pub use rng::Rng;
pub use sum::{ordered_mean, ordered_sum};
pub use svd::{jacobi_svd, SvdResult};

/// L2 norm of a slice.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dot product with fixed left-to-right accumulation order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Scale `v` to unit L2 norm. Errors on (numerically) zero input.
pub fn normalize(v: &[f64]) -> crate::Result<Vec<f64>> {
    let n = norm(v);
    if !(n > 1e-30) || !n.is_finite() {
        return Err(crate::Error::NormalizationUndefined);
    }
    Ok(v.iter().map(|x| x / n).collect())
}
