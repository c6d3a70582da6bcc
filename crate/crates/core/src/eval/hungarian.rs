//! Minimum-cost assignment on rectangular cost matrices.

/// Optimal assignment for `cost` (rows x cols). Returns `result[row] =
/// Some(col)`; when there are more rows than columns some rows stay `None`.
/// Among optimal assignments the lexicographically smallest column sequence
/// (by row order) is returned.
pub fn hungarian_assign(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");
    assert!(
        cost.iter().flatten().all(|c| c.is_finite()),
        "cost matrix must be finite"
    );
    if m == 0 {
        return vec![None; n];
    }
    if n > m {
        // assign columns to rows, then invert
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let cols = lexicographic(&t);
        let mut out = vec![None; n];
        for (j, i) in cols.into_iter().enumerate() {
            out[i.expect("every column assigned")] = Some(j);
        }
        return out;
    }
    lexicographic(cost).into_iter().collect()
}

/// Total cost of an assignment.
pub fn assignment_cost(cost: &[Vec<f64>], assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|j| cost[i][j]))
        .sum()
}

/// Rows <= cols. Fixes rows in order to the smallest column that keeps the
/// optimum.
fn lexicographic(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    let m = cost[0].len();
    let (best, first) = solve(cost);
    let scale = cost.iter().flatten().fold(1.0f64, |a, &c| a.max(c.abs()));
    let tol = 1e-9 * scale * n as f64;
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    for row in 0..n {
        let mut chosen = None;
        for col in 0..m {
            if fixed.contains(&col) {
                continue;
            }
            if col == first[row] && fixed.iter().enumerate().all(|(r, &c)| first[r] == c) {
                chosen = Some(col);
                break;
            }
            // optimum of the remaining rows with this prefix
            let rows: Vec<usize> = (row + 1..n).collect();
            let cols: Vec<usize> = (0..m).filter(|c| *c != col && !fixed.contains(c)).collect();
            let prefix: f64 = fixed.iter().enumerate().map(|(r, &c)| cost[r][c]).sum::<f64>()
                + cost[row][col];
            let rest = if rows.is_empty() {
                0.0
            } else {
                let sub: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|&r| cols.iter().map(|&c| cost[r][c]).collect())
                    .collect();
                solve(&sub).0
            };
            if prefix + rest <= best + tol {
                chosen = Some(col);
                break;
            }
        }
        fixed.push(chosen.expect("an optimal column exists"));
    }
    fixed.into_iter().map(Some).collect()
}

/// Shortest augmenting path with potentials; rows <= cols.
fn solve(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = cost.len();
    let m = cost[0].len();
    let inf = f64::INFINITY;
    // 1-based arrays, column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
            for j in 0..=m {
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
    let mut row_to_col = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    let total = row_to_col.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    (total, row_to_col)
}
