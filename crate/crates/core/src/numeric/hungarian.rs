//! Minimum-cost square assignment: shortest-augmenting-path solver with dual
//! potentials, plus a refinement pass that pins the lexicographically
//! smallest row-to-column map among cost ties.

use super::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column assigned to row i; a permutation.
    pub row_to_col: Vec<usize>,
    pub total_cost: f64,
}

pub fn hungarian_assign(cost: &Matrix) -> Result<Assignment> {
    let n = cost.rows();
    if n == 0 || cost.cols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    if cost.cols() != n {
        return Err(Error::NonSquare { rows: n, cols: cost.cols() });
    }
    if !cost.all_finite() {
        return Err(Error::Other("assignment cost matrix has non-finite entries".into()));
    }

    let base = solve(&|i, j| cost[(i, j)], n);
    let c_star = assignment_cost(cost, &base);
    let tol = 1e-9 * (1.0 + c_star.abs());

    // Fix rows one at a time to the smallest column that still completes to
    // an optimal assignment. Float costs almost never tie, so the inner loop
    // usually accepts the column the base solution already chose.
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut free_cols: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let mut prefix = 0.0;
        for (r, &c) in fixed.iter().enumerate() {
            prefix += cost[(r, c)];
        }
        let mut chosen = None;
        for (slot, &c) in free_cols.iter().enumerate() {
            let rows_left: Vec<usize> = ((i + 1)..n).collect();
            let cols_left: Vec<usize> =
                free_cols.iter().copied().filter(|&x| x != c).collect();
            let sub_cost = if rows_left.is_empty() {
                0.0
            } else {
                let sub = solve(&|r, s| cost[(rows_left[r], cols_left[s])], rows_left.len());
                let mut acc = 0.0;
                for (r, &s) in sub.iter().enumerate() {
                    acc += cost[(rows_left[r], cols_left[s])];
                }
                acc
            };
            if prefix + cost[(i, c)] + sub_cost <= c_star + tol {
                chosen = Some(slot);
                break;
            }
        }
        // Guaranteed reachable: the base optimum restricted to the remaining
        // rows always completes within tolerance.
        let slot = chosen.expect("an optimal completion must exist");
        fixed.push(free_cols.remove(slot));
    }

    let total = assignment_cost(cost, &fixed);
    Ok(Assignment { row_to_col: fixed, total_cost: total })
}

fn assignment_cost(cost: &Matrix, row_to_col: &[usize]) -> f64 {
    let mut acc = 0.0;
    for (i, &j) in row_to_col.iter().enumerate() {
        acc += cost[(i, j)];
    }
    acc
}

/// Dual-potential shortest augmenting path; returns row -> col.
fn solve(cost: &dyn Fn(usize, usize) -> f64, n: usize) -> Vec<usize> {
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0f64; n];
    // col potentials plus a virtual column n
    let mut v = vec![0.0f64; n + 1];
    // p[j] = row matched to column j (NONE if free); p[n] is scratch
    let mut p = vec![NONE; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 0..n {
        p[n] = i;
        let mut j0 = n;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = n;
            for j in 0..n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    if p[j] != NONE {
                        u[p[j]] += delta;
                    }
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == NONE {
                break;
            }
        }
        while j0 != n {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 0..n {
        if p[j] != NONE {
            row_to_col[p[j]] = j;
        }
    }
    row_to_col
}
