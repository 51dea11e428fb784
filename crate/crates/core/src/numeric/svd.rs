//! Thin SVD by one-sided Jacobi rotations: orthogonalize the columns of the
//! input against each other, read singular values off as column norms. Slow
//! and simple, accurate for the small matrices this crate works with.

use super::Matrix;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 60;
/// Sweep until every off-diagonal Gram entry is below this times ||a||_F.
const CONVERGE_RTOL: f64 = 1e-12;
/// Residual above this times ||a||_F after the sweep cap is an error.
const FAIL_RTOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// m x k, orthonormal columns (k = min(m, n)).
    pub u: Matrix,
    /// Descending, nonnegative; length k.
    pub singular_values: Vec<f64>,
    /// k x n, orthonormal rows.
    pub vt: Matrix,
}

pub fn jacobi_svd(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = (a.rows(), a.cols());
    if m == 0 || n == 0 {
        return Err(Error::EmptyMatrix);
    }
    if m < n {
        // A = (U' S V'^T)^T of the transpose: swap the factors back.
        let t = jacobi_svd(&a.transpose())?;
        return Ok(SvdResult {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
        });
    }

    let k = n;
    let fro = a.frobenius_norm();
    if fro == 0.0 {
        let mut u = Matrix::zeros(m, k);
        for j in 0..k {
            u[(j, j)] = 1.0;
        }
        return Ok(SvdResult { u, singular_values: vec![0.0; k], vt: Matrix::identity(n) });
    }
    let threshold = CONVERGE_RTOL * fro;

    // rows of `w` are the columns of `a`; rotations act on row pairs
    let mut w = a.transpose();
    let mut vt = Matrix::identity(n);
    let mut converged = false;
    let mut last_off = f64::INFINITY;

    for _sweep in 0..MAX_SWEEPS {
        let mut max_off = 0.0f64;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let gamma = super::dot(w.row(p), w.row(q));
                max_off = max_off.max(gamma.abs());
                if gamma.abs() <= threshold {
                    continue;
                }
                let alpha = super::dot(w.row(p), w.row(p));
                let beta = super::dot(w.row(q), w.row(q));
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for j in 0..m {
                    let wp = w[(p, j)];
                    let wq = w[(q, j)];
                    w[(p, j)] = c * wp - s * wq;
                    w[(q, j)] = s * wp + c * wq;
                }
                for j in 0..n {
                    let vp = vt[(p, j)];
                    let vq = vt[(q, j)];
                    vt[(p, j)] = c * vp - s * vq;
                    vt[(q, j)] = s * vp + c * vq;
                }
            }
        }
        last_off = max_off;
        if max_off <= threshold {
            converged = true;
            break;
        }
    }
    if !converged && last_off > FAIL_RTOL * fro {
        return Err(Error::NoConvergence { residual: last_off, sweeps: MAX_SWEEPS });
    }

    // singular values = row norms; sort descending, stable in index
    let mut sigma: Vec<f64> = (0..n).map(|i| super::norm(w.row(i))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap().then(i.cmp(&j)));
    let wp = permute_rows(&w, &order);
    let vtp = permute_rows(&vt, &order);
    sigma = order.iter().map(|&i| sigma[i]).collect();
    let (w, mut vt) = (wp, vtp);

    // u columns: normalized rows of w; zero rows get a deterministic
    // orthonormal completion so u always has orthonormal columns
    let mut u = Matrix::zeros(m, k);
    for i in 0..k {
        if sigma[i] > 0.0 {
            for j in 0..m {
                u[(j, i)] = w[(i, j)] / sigma[i];
            }
        } else {
            let mut done = false;
            for basis in 0..m {
                let mut cand = vec![0.0; m];
                cand[basis] = 1.0;
                for prev in 0..i {
                    let proj: f64 = (0..m).map(|j| u[(j, prev)] * cand[j]).sum();
                    for j in 0..m {
                        cand[j] -= proj * u[(j, prev)];
                    }
                }
                let nrm = super::norm(&cand);
                if nrm > 0.5 {
                    for j in 0..m {
                        u[(j, i)] = cand[j] / nrm;
                    }
                    done = true;
                    break;
                }
            }
            debug_assert!(done);
        }
    }

    // sign convention: largest-magnitude entry of each u column positive
    for i in 0..k {
        let mut arg = 0;
        let mut best = -1.0f64;
        for j in 0..m {
            let v = u[(j, i)].abs();
            if v > best {
                best = v;
                arg = j;
            }
        }
        if u[(arg, i)] < 0.0 {
            for j in 0..m {
                u[(j, i)] = -u[(j, i)];
            }
            for j in 0..n {
                vt[(i, j)] = -vt[(i, j)];
            }
        }
    }

    Ok(SvdResult { u, singular_values: sigma, vt })
}

fn permute_rows(a: &Matrix, order: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), a.cols());
    for (dst, &src) in order.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(a.row(src));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    // Independent oracle: two-sided Jacobi eigenvalue iteration on the Gram
    // matrix a^T a. Different algorithm, different input object.
    fn gram_eigenvalues(a: &Matrix) -> Vec<f64> {
        let n = a.cols();
        let mut g = a.transpose().matmul(a).unwrap();
        for _ in 0..200 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off = off.max(g[(p, q)].abs());
                }
            }
            if off < 1e-14 * (1.0 + g.max_abs()) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if g[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * ((2.0 * g[(p, q)]).atan2(g[(q, q)] - g[(p, p)]));
                    let (c, s) = (theta.cos(), theta.sin());
                    for j in 0..n {
                        let gp = g[(p, j)];
                        let gq = g[(q, j)];
                        g[(p, j)] = c * gp - s * gq;
                        g[(q, j)] = s * gp + c * gq;
                    }
                    for j in 0..n {
                        let gp = g[(j, p)];
                        let gq = g[(j, q)];
                        g[(j, p)] = c * gp - s * gq;
                        g[(j, q)] = s * gp + c * gq;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| g[(i, i)].max(0.0)).collect();
        eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
        eig
    }

    fn check_factorization(a: &Matrix, out: &SvdResult, tag: &str) {
        let k = a.rows().min(a.cols());
        assert_eq!((out.u.rows(), out.u.cols()), (a.rows(), k));
        assert_eq!((out.vt.rows(), out.vt.cols()), (k, a.cols()));
        for i in 0..k {
            assert!(out.singular_values[i] >= 0.0);
            if i + 1 < k {
                assert!(out.singular_values[i] >= out.singular_values[i + 1], "{tag}: order");
            }
        }
        let utu = out.u.transpose().matmul(&out.u).unwrap();
        let vvt = out.vt.matmul(&out.vt.transpose()).unwrap();
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((utu[(i, j)] - want).abs() < 1e-9, "{tag}: u^T u");
                assert!((vvt[(i, j)] - want).abs() < 1e-9, "{tag}: v^T v");
            }
        }
        let mut us = out.u.clone();
        for i in 0..us.rows() {
            for j in 0..k {
                us[(i, j)] *= out.singular_values[j];
            }
        }
        let recon = us.matmul(&out.vt).unwrap();
        let scale = a.frobenius_norm().max(1.0);
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                assert!(
                    (recon[(i, j)] - a[(i, j)]).abs() < 1e-8 * scale,
                    "{tag}: reconstruction at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn diagonal_matrix_reads_off_directly() {
        let a = Matrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let out = jacobi_svd(&a).unwrap();
        assert!((out.singular_values[0] - 3.0).abs() < 1e-12);
        assert!((out.singular_values[1] - 1.0).abs() < 1e-12);
        check_factorization(&a, &out, "diag");
    }

    #[test]
    fn antidiagonal_swaps_into_sorted_values() {
        // gram matrix diag(1, 4) -> singular values {2, 1}
        let a = Matrix::from_vec(2, 2, vec![0.0, 2.0, 1.0, 0.0]).unwrap();
        let out = jacobi_svd(&a).unwrap();
        assert!((out.singular_values[0] - 2.0).abs() < 1e-12);
        assert!((out.singular_values[1] - 1.0).abs() < 1e-12);
        check_factorization(&a, &out, "antidiag");
    }

    #[test]
    fn rank_one_outer_product_has_one_nonzero_value() {
        let u = [1.0, -2.0, 0.5];
        let v = [0.3, 0.4, -1.2];
        let mut a = Matrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                a[(i, j)] = u[i] * v[j];
            }
        }
        let out = jacobi_svd(&a).unwrap();
        assert!(out.singular_values[1] < 1e-10);
        assert!(out.singular_values[2] < 1e-10);
        check_factorization(&a, &out, "rank1");
    }

    #[test]
    fn zero_matrix_is_fine() {
        let a = Matrix::zeros(4, 2);
        let out = jacobi_svd(&a).unwrap();
        assert_eq!(out.singular_values, vec![0.0, 0.0]);
        check_factorization(&a, &out, "zero");
    }

    #[test]
    fn random_matrices_factor_and_match_gram_eigenvalues() {
        let mut rng = Rng::new(404);
        for trial in 0..60 {
            let m = 2 + rng.next_below(47);
            let n = 1 + rng.next_below(16.min(m));
            let a = Matrix::from_vec(m, n, rng.fill_gaussian(m * n)).unwrap();
            let out = jacobi_svd(&a).unwrap();
            check_factorization(&a, &out, &format!("random {trial}"));
            let eig = gram_eigenvalues(&a);
            for i in 0..n {
                let want = eig[i].sqrt();
                assert!(
                    (out.singular_values[i] - want).abs() < 1e-8 * (1.0 + want),
                    "trial {trial}: sigma[{i}] = {} vs oracle {want}",
                    out.singular_values[i]
                );
            }
        }
    }

    #[test]
    fn wide_input_goes_through_transpose() {
        let mut rng = Rng::new(11);
        let a = Matrix::from_vec(3, 9, rng.fill_gaussian(27)).unwrap();
        let out = jacobi_svd(&a).unwrap();
        check_factorization(&a, &out, "wide");
    }
}
