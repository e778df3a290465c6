//! Dynamic time warping with Euclidean local cost.

use super::{dist, Point, Trajectory};
use crate::error::{CalmError, Result};

/// Monotone alignment between two sequences as `(i, j)` index pairs, from
/// `(0, 0)` to `(n - 1, m - 1)`.
pub type WarpingPath = Vec<(usize, usize)>;

fn check_dims(a: &[Point], b: &[Point]) -> Result<()> {
    let (da, db) = (a[0].len(), b[0].len());
    if da != db {
        return Err(CalmError::DimensionMismatch {
            field: "trajectory",
            expected: da,
            got: db,
        });
    }
    Ok(())
}

fn cost_table(a: &[Point], b: &[Point]) -> Vec<f64> {
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = dist(&a[i], &b[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 {
                    acc[(i - 1) * m + j - 1]
                } else {
                    f64::INFINITY
                };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = c + best;
        }
    }
    acc
}

/// Accumulated DTW cost between two state sequences (not length-normalised).
pub fn dtw_states(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(CalmError::invalid("trajectory", "empty sequence"));
    }
    check_dims(a, b)?;
    // Two-row version of `cost_table`.
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for (i, ai) in a.iter().enumerate() {
        for j in 0..m {
            let c = dist(ai, &b[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { f64::INFINITY };
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            cur[j] = c + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// DTW distance between two trajectories: boundary-matched, steps
/// `{(1,0), (0,1), (1,1)}` with unit weights, summed Euclidean cost.
pub fn dtwd(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    dtw_states(a.states(), b.states())
}

/// Optimal warping path and its cost. Ties prefer the diagonal step.
pub fn dtw_path(a: &[Point], b: &[Point]) -> Result<(WarpingPath, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(CalmError::invalid("trajectory", "empty sequence"));
    }
    check_dims(a, b)?;
    let (n, m) = (a.len(), b.len());
    let acc = cost_table(a, b);
    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    path.push((i, j));
    while i > 0 || j > 0 {
        if i == 0 {
            j -= 1;
        } else if j == 0 {
            i -= 1;
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                i -= 1;
                j -= 1;
            } else if up <= left {
                i -= 1;
            } else {
                j -= 1;
            }
        }
        path.push((i, j));
    }
    path.reverse();
    Ok((path, acc[n * m - 1]))
}
