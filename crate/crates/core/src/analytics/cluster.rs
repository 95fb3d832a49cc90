//! k-medoids clustering of components with cannot-link constraints: no two
//! components of the same run may share a cluster.
//!
//! Initial medoids come from a greedy BUILD followed by FastPAM1 swaps
//! (unconstrained). The constrained phase then alternates a constrained
//! assignment with the Park-Jun medoid update until the assignment is stable.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::assignment::min_cost_assignment;
use super::ComponentRef;
use crate::par;

pub const MAX_ITERATIONS: usize = 100;

/// Largest component count for which the constrained swap polish runs.
pub const POLISH_LIMIT: usize = 160;

/// Up to this many components the polish is also restarted from a BUILD
/// seeded at every component.
pub const MULTISTART_LIMIT: usize = 40;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("k = {k} is infeasible: runs have up to {p} components, so k must be in [{p}, {m}]")]
    Infeasible { k: usize, p: usize, m: usize },
    #[error("clustering needs components from at least two runs")]
    TooFewRuns,
    #[error("dissimilarity matrix is {rows}x{cols} but {refs} components were given")]
    Shape { rows: usize, cols: usize, refs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub refs: Vec<ComponentRef>,
    /// Index into `refs` of each cluster's medoid.
    pub medoids: Vec<usize>,
    /// Cluster of each entry of `refs`.
    pub assignment: Vec<usize>,
    /// Mean silhouette width in `[-1, 1]`.
    pub quality: f64,
    /// Sum of dissimilarities to the assigned medoid.
    pub cost: f64,
    pub iterations: usize,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.refs.len()).filter(|&i| self.assignment[i] == cluster).collect()
    }

    pub fn medoid_ref(&self, cluster: usize) -> &ComponentRef {
        &self.refs[self.medoids[cluster]]
    }

    /// Number of same-run pairs sharing a cluster (always 0 for results of
    /// [`cluster_components`]).
    pub fn violations(&self) -> usize {
        count_violations(&self.refs, &self.assignment)
    }
}

pub fn count_violations(refs: &[ComponentRef], assignment: &[usize]) -> usize {
    let mut seen: HashMap<(&str, usize), usize> = HashMap::new();
    for (r, &c) in refs.iter().zip(assignment) {
        *seen.entry((r.run_id.0.as_str(), c)).or_default() += 1;
    }
    seen.values().map(|&v| v * (v - 1) / 2).sum()
}

/// Group index of every component (components of one run share a group).
fn run_groups(refs: &[ComponentRef]) -> (Vec<usize>, usize, usize) {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut sizes: Vec<usize> = Vec::new();
    let groups = refs
        .iter()
        .map(|r| {
            let next = ids.len();
            let g = *ids.entry(r.run_id.0.as_str()).or_insert(next);
            if g == sizes.len() {
                sizes.push(0);
            }
            sizes[g] += 1;
            g
        })
        .collect();
    let max_size = sizes.iter().copied().max().unwrap_or(0);
    (groups, sizes.len(), max_size)
}

fn check(refs: &[ComponentRef], d: &DMatrix<f64>, k: usize) -> Result<Vec<usize>, ClusterError> {
    let m = refs.len();
    if d.nrows() != m || d.ncols() != m {
        return Err(ClusterError::Shape { rows: d.nrows(), cols: d.ncols(), refs: m });
    }
    let (groups, runs, max_size) = run_groups(refs);
    if runs < 2 {
        return Err(ClusterError::TooFewRuns);
    }
    if k < max_size.max(2) || k > m {
        return Err(ClusterError::Infeasible { k, p: max_size, m });
    }
    Ok(groups)
}

/// Greedy PAM BUILD.
fn build(d: &DMatrix<f64>, k: usize) -> Vec<usize> {
    let first = (0..d.nrows())
        .map(|i| (i, d.row(i).sum()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(0, |(i, _)| i);
    build_from(d, k, first)
}

/// Greedy BUILD continued from a fixed first medoid.
fn build_from(d: &DMatrix<f64>, k: usize, first: usize) -> Vec<usize> {
    let m = d.nrows();
    let mut medoids = vec![first];
    let mut nearest: Vec<f64> = (0..m).map(|j| d[(j, first)]).collect();
    while medoids.len() < k {
        let gains = par::map_indexed(m, |c| {
            if medoids.contains(&c) {
                return f64::NEG_INFINITY;
            }
            (0..m).map(|j| (nearest[j] - d[(j, c)]).max(0.0)).sum::<f64>()
        });
        let best = (0..m).fold(None::<usize>, |best, c| match best {
            Some(b) if gains[b] >= gains[c] => Some(b),
            _ if gains[c] == f64::NEG_INFINITY => best,
            _ => Some(c),
        });
        let c = best.expect("k <= m leaves a candidate");
        medoids.push(c);
        for (j, nj) in nearest.iter_mut().enumerate() {
            *nj = nj.min(d[(j, c)]);
        }
    }
    medoids
}

struct NearestCache {
    slot: Vec<usize>,
    near: Vec<f64>,
    second: Vec<f64>,
}

fn nearest_cache(d: &DMatrix<f64>, medoids: &[usize]) -> NearestCache {
    let m = d.nrows();
    let mut slot = vec![0; m];
    let mut near = vec![f64::INFINITY; m];
    let mut second = vec![f64::INFINITY; m];
    for j in 0..m {
        for (s, &med) in medoids.iter().enumerate() {
            let v = d[(j, med)];
            if v < near[j] {
                second[j] = near[j];
                near[j] = v;
                slot[j] = s;
            } else if v < second[j] {
                second[j] = v;
            }
        }
    }
    NearestCache { slot, near, second }
}

/// FastPAM1 swap phase: per iteration, evaluate all (medoid, candidate) swaps
/// in O(m^2) using nearest / second-nearest caches and apply the best one.
fn fastpam_swap(d: &DMatrix<f64>, medoids: &mut [usize]) {
    let m = d.nrows();
    let k = medoids.len();
    for _ in 0..MAX_ITERATIONS {
        let cache = nearest_cache(d, medoids);
        let mut removal = vec![0.0; k];
        for j in 0..m {
            removal[cache.slot[j]] += cache.second[j] - cache.near[j];
        }
        let candidates = par::map_indexed(m, |x| {
            if medoids.contains(&x) {
                return (f64::INFINITY, 0);
            }
            let mut delta = removal.clone();
            let mut shared = 0.0;
            for j in 0..m {
                let djx = d[(j, x)];
                if djx < cache.near[j] {
                    shared += djx - cache.near[j];
                    delta[cache.slot[j]] += cache.near[j] - cache.second[j];
                } else if djx < cache.second[j] {
                    delta[cache.slot[j]] += djx - cache.second[j];
                }
            }
            let (slot, best) = delta
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (s, &v)| if v < acc.1 { (s, v) } else { acc });
            (best + shared, slot)
        });
        let (x, &(delta, slot)) = candidates
            .iter()
            .enumerate()
            .fold((0, &(f64::INFINITY, 0)), |acc, (x, c)| if c.0 < acc.1 .0 { (x, c) } else { acc });
        if !(delta < -1e-12) {
            break;
        }
        medoids[slot] = x;
    }
}

/// Constrained assignment: medoids claim their own clusters, then components
/// are processed in ascending distance to their best medoid and take the
/// nearest cluster that holds no component of the same run yet.
fn assign_constrained(d: &DMatrix<f64>, groups: &[usize], medoids: &[usize]) -> (Vec<usize>, f64) {
    let m = d.nrows();
    let k = medoids.len();
    let mut assignment = vec![usize::MAX; m];
    let mut taken: std::collections::HashSet<(usize, usize)> = std::collections::HashSet::new();
    for (c, &med) in medoids.iter().enumerate() {
        assignment[med] = c;
        taken.insert((groups[med], c));
    }
    let mut order: Vec<(usize, f64)> = (0..m)
        .filter(|&i| assignment[i] == usize::MAX)
        .map(|i| (i, medoids.iter().map(|&med| d[(i, med)]).fold(f64::INFINITY, f64::min)))
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    for (i, _) in order {
        let mut options: Vec<usize> = (0..k).collect();
        options.sort_by(|&a, &b| d[(i, medoids[a])].total_cmp(&d[(i, medoids[b])]).then(a.cmp(&b)));
        let c = options
            .into_iter()
            .find(|&c| !taken.contains(&(groups[i], c)))
            .expect("k >= largest run size leaves a free cluster");
        assignment[i] = c;
        taken.insert((groups[i], c));
    }
    let cost = (0..m).map(|i| d[(i, medoids[assignment[i]])]).sum();
    (assignment, cost)
}

/// Park-Jun update: the member with the smallest summed in-cluster
/// dissimilarity becomes the medoid (the current medoid wins ties).
fn update_medoids(d: &DMatrix<f64>, assignment: &[usize], medoids: &mut [usize]) {
    for (c, medoid) in medoids.iter_mut().enumerate() {
        let members: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] == c).collect();
        let total = |i: usize| members.iter().map(|&j| d[(i, j)]).sum::<f64>();
        let mut best = *medoid;
        let mut best_total = total(best);
        for &i in &members {
            let t = total(i);
            if t < best_total - 1e-12 {
                best = i;
                best_total = t;
            }
        }
        *medoid = best;
    }
}

/// Optimal constrained assignment for fixed medoids. Runs do not interact,
/// so each run is an independent assignment of its non-medoid members to the
/// clusters its medoids (if any) leave free.
fn assign_exact(d: &DMatrix<f64>, by_run: &[Vec<usize>], medoids: &[usize]) -> (Vec<usize>, f64) {
    let k = medoids.len();
    let mut assignment = vec![usize::MAX; d.nrows()];
    for (c, &med) in medoids.iter().enumerate() {
        assignment[med] = c;
    }
    let mut cost = 0.0;
    for members in by_run {
        let rows: Vec<usize> = members.iter().copied().filter(|&i| assignment[i] == usize::MAX).collect();
        if rows.is_empty() {
            continue;
        }
        let cols: Vec<usize> = (0..k).filter(|&c| !members.contains(&medoids[c])).collect();
        let table: Vec<Vec<f64>> = rows.iter().map(|&i| cols.iter().map(|&c| d[(i, medoids[c])]).collect()).collect();
        let (picked, total) = min_cost_assignment(&table);
        for (r, &col) in picked.iter().enumerate() {
            assignment[rows[r]] = cols[col];
        }
        cost += total;
    }
    (assignment, cost)
}

/// Best-improvement medoid swaps scored by the exact constrained assignment.
fn polish(d: &DMatrix<f64>, groups: &[usize], medoids: &mut [usize]) -> (Vec<usize>, f64, usize) {
    let m = d.nrows();
    let runs = groups.iter().copied().max().map_or(0, |g| g + 1);
    let mut by_run = vec![Vec::new(); runs];
    for (i, &g) in groups.iter().enumerate() {
        by_run[g].push(i);
    }
    let (mut assignment, mut cost) = assign_exact(d, &by_run, medoids);
    let mut rounds = 0;
    while rounds < MAX_ITERATIONS {
        rounds += 1;
        let current: &[usize] = medoids;
        let trials = par::map_indexed(m, |x| {
            if current.contains(&x) {
                return (f64::INFINITY, 0);
            }
            let mut trial = current.to_vec();
            (0..trial.len())
                .map(|s| {
                    trial.copy_from_slice(current);
                    trial[s] = x;
                    (assign_exact(d, &by_run, &trial).1, s)
                })
                .fold((f64::INFINITY, 0), |acc, t| if t.0 < acc.0 { t } else { acc })
        });
        let (x, &(best, slot)) = trials
            .iter()
            .enumerate()
            .fold((0, &(f64::INFINITY, 0)), |acc, (x, t)| if t.0 < acc.1 .0 { (x, t) } else { acc });
        if !(best < cost - 1e-12) {
            break;
        }
        medoids[slot] = x;
        let (next, next_cost) = assign_exact(d, &by_run, medoids);
        assignment = next;
        cost = next_cost;
    }
    (assignment, cost, rounds)
}

/// Clusters components into `k` groups with the cannot-link constraint.
///
/// For up to [`POLISH_LIMIT`] components the alternating result is refined by
/// medoid swaps under the exact constrained assignment (restarted from several
/// BUILD seeds on small inputs); the cheapest result is returned.
pub fn cluster_components(refs: &[ComponentRef], d: &DMatrix<f64>, k: usize) -> Result<Clustering, ClusterError> {
    let groups = check(refs, d, k)?;
    let mut medoids = build(d, k);
    fastpam_swap(d, &mut medoids);
    let (mut assignment, mut cost) = assign_constrained(d, &groups, &medoids);
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        update_medoids(d, &assignment, &mut medoids);
        let (next, next_cost) = assign_constrained(d, &groups, &medoids);
        let stable = next == assignment;
        assignment = next;
        cost = next_cost;
        if stable {
            break;
        }
    }
    let m = refs.len();
    if m <= POLISH_LIMIT {
        let mut starts = vec![medoids.clone()];
        if m <= MULTISTART_LIMIT {
            starts.extend((0..m).map(|first| build_from(d, k, first)));
        }
        for start in starts {
            let mut polished = start;
            let (next, next_cost, rounds) = polish(d, &groups, &mut polished);
            if next_cost < cost - 1e-12 {
                medoids = polished;
                assignment = next;
                cost = next_cost;
                iterations += rounds;
            }
        }
    }
    let quality = silhouette(d, &assignment, k);
    Ok(Clustering { k, refs: refs.to_vec(), medoids, assignment, quality, cost, iterations })
}

/// Mean silhouette width. Singleton members score 0, so a clustering of all
/// singletons has quality 0.
pub fn silhouette(d: &DMatrix<f64>, assignment: &[usize], k: usize) -> f64 {
    let m = assignment.len();
    if m == 0 {
        return 0.0;
    }
    let mut sizes = vec![0usize; k];
    for &c in assignment {
        sizes[c] += 1;
    }
    let widths = par::map_indexed(m, |i| {
        let own = assignment[i];
        if sizes[own] <= 1 {
            return 0.0;
        }
        let mut sums = vec![0.0; k];
        for j in 0..m {
            if j != i {
                sums[assignment[j]] += d[(i, j)];
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            return 0.0;
        }
        let denom = a.max(b);
        if denom > 0.0 {
            (b - a) / denom
        } else {
            0.0
        }
    });
    widths.iter().sum::<f64>() / m as f64
}

/// Clustering quality for each k in `ks`, evaluated in parallel.
pub fn quality_curve(refs: &[ComponentRef], d: &DMatrix<f64>, ks: &[usize]) -> Result<Vec<(usize, f64)>, ClusterError> {
    par::map_slice(ks, |&k| cluster_components(refs, d, k).map(|c| (k, c.quality))).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn refs(runs: usize, p: usize) -> Vec<ComponentRef> {
        (0..runs).flat_map(|r| (0..p).map(move |i| ComponentRef::new(format!("run{r}"), i))).collect()
    }

    fn random_planar(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let pts: Vec<(f64, f64)> = (0..m).map(|_| (rng.random(), rng.random())).collect();
        DMatrix::from_fn(m, m, |i, j| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt())
    }

    #[test]
    fn duplicated_ensembles_pair_up() {
        // Run 0 and run 1 hold perturbed copies of the same three components.
        let base = [0.0, 10.0, 20.0];
        let pos: Vec<f64> = base.iter().copied().chain(base.iter().map(|v| v + 0.1)).collect();
        let d = DMatrix::from_fn(6, 6, |i, j| (pos[i] - pos[j]).abs());
        let r = refs(2, 3);
        let c = cluster_components(&r, &d, 3).unwrap();
        for i in 0..3 {
            assert_eq!(c.assignment[i], c.assignment[i + 3]);
        }
        assert_eq!(c.violations(), 0);
        assert!(c.quality > 0.9);
    }

    #[test]
    fn constraint_holds_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..30 {
            let p = 2 + trial % 3;
            let runs = 2 + trial % 4;
            let r = refs(runs, p);
            let d = random_planar(r.len(), &mut rng);
            for k in p..=(2 * p).min(r.len()) {
                let c = cluster_components(&r, &d, k).unwrap();
                assert_eq!(c.violations(), 0);
                for (cl, &med) in c.medoids.iter().enumerate() {
                    assert_eq!(c.assignment[med], cl);
                }
                assert_eq!(c.assignment.len(), r.len());
            }
        }
    }

    #[test]
    fn singleton_clusters_have_zero_quality() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = refs(2, 2);
        let d = random_planar(4, &mut rng);
        let c = cluster_components(&r, &d, 4).unwrap();
        assert_eq!(c.quality, 0.0);
        assert_eq!(c.cost, 0.0);
    }

    #[test]
    fn errors() {
        let r = refs(2, 3);
        let d = DMatrix::zeros(6, 6);
        assert!(matches!(cluster_components(&r, &d, 2), Err(ClusterError::Infeasible { .. })));
        assert!(matches!(cluster_components(&r, &d, 7), Err(ClusterError::Infeasible { .. })));
        assert_eq!(cluster_components(&refs(1, 3), &DMatrix::zeros(3, 3), 3), Err(ClusterError::TooFewRuns));
        assert!(matches!(cluster_components(&r, &DMatrix::zeros(5, 5), 3), Err(ClusterError::Shape { .. })));
    }

    #[test]
    fn quality_curve_peaks_at_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let centers = [0.0, 50.0, 100.0];
        let pos: Vec<f64> = (0..4).flat_map(|_| centers.iter().map(|c| c + rng.random_range(-1.0..1.0)).collect::<Vec<_>>()).collect();
        let d = DMatrix::from_fn(12, 12, |i, j| (pos[i] - pos[j]).abs());
        let r = refs(4, 3);
        let curve = quality_curve(&r, &d, &[3, 4, 5, 6, 7]).unwrap();
        assert_eq!(curve.len(), 5);
        let best = curve.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(best.0, 3);
        assert!(curve.iter().all(|&(_, q)| (-1.0..=1.0).contains(&q)));
    }
}
