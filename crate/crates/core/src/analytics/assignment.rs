//! Rectangular linear assignment (Hungarian method with potentials).

/// Minimum-cost assignment of every row of an `rows x cols` cost matrix
/// (`rows <= cols`) to a distinct column. Returns the column of each row and
/// the total cost.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let rows = cost.len();
    if rows == 0 {
        return (Vec::new(), 0.0);
    }
    let cols = cost[0].len();
    assert!(rows <= cols, "assignment needs rows <= cols");
    // 1-based arrays as in the classic O(n^2 m) formulation.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
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
            if j1 == 0 {
                // Remaining costs are infinite or NaN; pick any free column.
                j1 = (1..=cols).find(|&j| !used[j]).expect("a free column exists");
                delta = 0.0;
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    (assignment, total)
}

/// Maximum-weight perfect matching on a square weight matrix.
pub fn max_weight_assignment(weight: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let cost: Vec<Vec<f64>> = weight.iter().map(|row| row.iter().map(|w| -w).collect()).collect();
    let (assignment, total) = min_cost_assignment(&cost);
    (assignment, -total)
}
