//! Optimal assignment on small score matrices (potential-based Hungarian
//! method, O(n^3)).

/// Maximum-total assignment of rows to columns of a row-major `rows x cols`
/// score matrix. Returns `out[row] = Some(col)`; rows beyond the column
/// count stay unassigned. All finite scores are allowed.
pub fn max_assignment(score: &[f64], rows: usize, cols: usize) -> Vec<Option<usize>> {
    debug_assert_eq!(score.len(), rows * cols);
    let n = rows.max(cols);
    // Pad to square and negate: the solver minimizes.
    let mut cost = vec![0.0; n * n];
    for r in 0..rows {
        for c in 0..cols {
            cost[r * n + c] = -score[r * cols + c];
        }
    }
    let assignment = min_cost_square(&cost, n);
    (0..rows)
        .map(|r| assignment[r].filter(|&c| c < cols))
        .collect()
}

/// Best achievable total of [`max_assignment`].
pub fn max_assignment_total(score: &[f64], rows: usize, cols: usize) -> f64 {
    max_assignment(score, rows, cols)
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| score[r * cols + c]))
        .sum()
}

/// Minimum-cost perfect assignment on a square matrix via shortest
/// augmenting paths with dual potentials.
fn min_cost_square(cost: &[f64], n: usize) -> Vec<Option<usize>> {
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; p[j] is the row matched to column j (0 = none).
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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

    let mut result = vec![None; n];
    for j in 1..=n {
        if p[j] != 0 {
            result[p[j] - 1] = Some(j - 1);
        }
    }
    result
}
