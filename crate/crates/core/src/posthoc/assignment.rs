//! Square assignment (Hungarian algorithm with potentials, O(k^3)).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Find the permutation minimising sum_i cost[i, perm[i]].
///
/// Returns `perm` with `perm[row] = column`. Costs may be negative; they must
/// be finite and the matrix square.
pub fn solve_assignment(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    if !cost.is_square() {
        return Err(Error::Shape(format!(
            "assignment cost must be square, got {}x{}",
            cost.nrows(),
            cost.ncols()
        )));
    }
    let n = cost.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::Param("assignment cost entries must be finite".into()));
    }

    // Potentials u, v and matching p over 1-based columns; p[j] is the row
    // matched to column j, with column 0 as the virtual root.
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    Ok(perm)
}
