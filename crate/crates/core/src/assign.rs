//! Minimum-cost assignment (Kuhn–Munkres with potentials).

/// Assigns every row of an `n × m` cost matrix (`n ≤ m`) to a distinct column,
/// minimizing the total cost. Returns the column chosen for each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows ≤ columns ({n} > {m})");
    assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
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
    let mut out = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Maximum-weight partial matching over pairs marked valid.
///
/// Maximizes the number of matched pairs first, then the total weight.
/// Returns `(row, col)` pairs sorted by row.
pub fn max_weight_matching(weights: &[Vec<Option<f64>>]) -> Vec<(usize, usize)> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let m = weights[0].len();
    if m == 0 {
        return Vec::new();
    }
    let wmax = weights
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    // Any valid pair is cheaper than any invalid one, whatever the weights.
    let big = (wmax + 1.0) * (n + m) as f64 * 4.0;
    let transpose = n > m;
    let (r, c) = if transpose { (m, n) } else { (n, m) };
    let cost: Vec<Vec<f64>> = (0..r)
        .map(|i| {
            (0..c)
                .map(|j| {
                    let w = if transpose {
                        weights[j][i]
                    } else {
                        weights[i][j]
                    };
                    match w {
                        Some(w) => wmax - w,
                        None => big,
                    }
                })
                .collect()
        })
        .collect();
    let a = hungarian(&cost);
    let mut out: Vec<(usize, usize)> = a
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| {
            let (row, col) = if transpose { (j, i) } else { (i, j) };
            weights[row][col].map(|_| (row, col))
        })
        .collect();
    out.sort_unstable();
    out
}
