//! Thin QR by Householder reflections, with a nonnegative-diagonal sign
//! convention and a relative-tolerance numerical rank.

use super::Matrix;
use crate::{Error, Result};

/// Relative diagonal tolerance used for the rank decision.
const RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct QrResult {
    /// m x rank, orthonormal columns.
    pub q: Matrix,
    /// rank x n, upper triangular with nonnegative diagonal.
    pub r: Matrix,
    pub rank: usize,
}

/// Factor `a` (m x n) as `q * r`. Reflectors run over min(m, n) columns, so
/// tall, square, and wide inputs all work; columns of `q` (and rows of `r`)
/// past the numerical rank are dropped.
pub fn householder_qr(a: &Matrix) -> Result<QrResult> {
    let (m, n) = (a.rows(), a.cols());
    if m == 0 || n == 0 {
        return Err(Error::EmptyMatrix);
    }
    let kmax = m.min(n);
    let mut work = a.clone();
    // unit reflector vectors, each padded to length m; empty = identity step
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(kmax);

    for k in 0..kmax {
        let mut x: Vec<f64> = (k..m).map(|i| work[(i, k)]).collect();
        let xnorm = super::norm(&x);
        if xnorm == 0.0 {
            vs.push(Vec::new());
            continue;
        }
        let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
        x[0] -= alpha;
        let vnorm = super::norm(&x);
        if vnorm == 0.0 {
            vs.push(Vec::new());
            continue;
        }
        for e in x.iter_mut() {
            *e /= vnorm;
        }
        // apply I - 2vv^T to the trailing block
        for j in k..n {
            let mut w = 0.0;
            for i in k..m {
                w += x[i - k] * work[(i, j)];
            }
            w *= 2.0;
            for i in k..m {
                work[(i, j)] -= w * x[i - k];
            }
        }
        vs.push(x);
    }

    // R = leading kmax rows of the reduced matrix, zeroed below the diagonal
    let mut r = Matrix::zeros(kmax, n);
    for i in 0..kmax {
        for j in i..n {
            r[(i, j)] = work[(i, j)];
        }
    }

    // accumulate thin Q by applying reflectors to the identity block, last first
    let mut q = Matrix::zeros(m, kmax);
    for j in 0..kmax {
        q[(j, j)] = 1.0;
    }
    for k in (0..kmax).rev() {
        let v = &vs[k];
        if v.is_empty() {
            continue;
        }
        for j in 0..kmax {
            let mut w = 0.0;
            for i in k..m {
                w += v[i - k] * q[(i, j)];
            }
            w *= 2.0;
            for i in k..m {
                q[(i, j)] -= w * v[i - k];
            }
        }
    }

    // sign convention: nonnegative diagonal of R
    for i in 0..kmax {
        if r[(i, i)] < 0.0 {
            for j in 0..n {
                r[(i, j)] = -r[(i, j)];
            }
            for row in 0..m {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }

    let max_diag = (0..kmax).fold(0.0f64, |acc, i| acc.max(r[(i, i)].abs()));
    let rank = if max_diag == 0.0 {
        0
    } else {
        (0..kmax).filter(|&i| r[(i, i)].abs() > RANK_RTOL * max_diag).count()
    };

    // drop columns of q and rows of r beyond the rank
    let mut q_trim = Matrix::zeros(m, rank);
    for i in 0..m {
        for j in 0..rank {
            q_trim[(i, j)] = q[(i, j)];
        }
    }
    let mut r_trim = Matrix::zeros(rank, n);
    for i in 0..rank {
        for j in 0..n {
            r_trim[(i, j)] = r[(i, j)];
        }
    }

    Ok(QrResult { q: q_trim, r: r_trim, rank })
}
