//! Component ranking, slope-graph links, superimposition distances and
//! per-cluster rank distributions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cluster::Clustering;
use super::dissim::{abs_correlations, DissimError};
use super::doi::{doi, DoiKind};
use super::ComponentRef;
use crate::solver::RunResult;

/// Default minimum |correlation| for a slope-graph link.
pub const DEFAULT_LINK_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompareError {
    #[error("run {0} did not converge")]
    RunFailed(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("no cluster {0}")]
    NoSuchCluster(usize),
    #[error(transparent)]
    Dissim(#[from] DissimError),
}

/// Components of a converged run ordered by descending DOI; ties keep the
/// original component order.
pub fn rank_ensemble(run: &RunResult, kind: DoiKind) -> Result<Vec<ComponentRef>, CompareError> {
    let c = run.components.as_ref().ok_or_else(|| CompareError::RunFailed(run.id.to_string()))?;
    let scores: Vec<f64> = c.column_iter().map(|col| doi(col.as_slice(), kind)).collect();
    Ok(rank_by_scores(&scores).into_iter().map(|i| ComponentRef::new(run.id.clone(), i)).collect())
}

/// Indices sorted by descending score (stable).
pub fn rank_by_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Rank (0 = most interesting) of each component of a run.
pub fn rank_positions(run: &RunResult, kind: DoiKind) -> Result<Vec<usize>, CompareError> {
    let ranked = rank_ensemble(run, kind)?;
    let mut pos = vec![0; ranked.len()];
    for (rank, r) in ranked.iter().enumerate() {
        pos[r.index] = rank;
    }
    Ok(pos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeLink {
    pub left: usize,
    pub right: usize,
    /// Absolute correlation, used as line thickness.
    pub weight: f64,
}

/// All component pairs between two ensembles with |cor| >= `threshold`.
pub fn slope_links(left: &[Vec<f64>], right: &[Vec<f64>], threshold: f64) -> Result<Vec<SlopeLink>, CompareError> {
    let cors = abs_correlations(left, right)?;
    let mut links = Vec::new();
    for (i, row) in cors.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if w >= threshold {
                links.push(SlopeLink { left: i, right: j, weight: w });
            }
        }
    }
    Ok(links)
}

/// Sum over unordered pairs of the Euclidean distance between the
/// sign-adjusted components.
pub fn superimpose_distance(components: &[Vec<f64>], signs: &[f64]) -> Result<f64, CompareError> {
    if components.len() != signs.len() {
        return Err(CompareError::LengthMismatch(format!("{} components, {} signs", components.len(), signs.len())));
    }
    if let Some(first) = components.first() {
        if components.iter().any(|c| c.len() != first.len()) {
            return Err(CompareError::LengthMismatch("components differ in length".into()));
        }
    }
    let mut total = 0.0;
    for a in 0..components.len() {
        for b in (a + 1)..components.len() {
            let (sa, sb) = (signs[a].signum(), signs[b].signum());
            let sq: f64 = components[a].iter().zip(&components[b]).map(|(x, y)| (sa * x - sb * y).powi(2)).sum();
            total += sq.sqrt();
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDistribution {
    /// `histogram[r]` counts members that rank r-th in their ensemble.
    pub histogram: Vec<usize>,
    /// `1 - dist_cor(member, medoid)` per member.
    pub opacity: Vec<(ComponentRef, f64)>,
}

/// Rank histogram and medoid similarity of one cluster. `ranks[i]` is the DOI
/// rank of `clustering.refs[i]` within its ensemble; `d` is the dist_cor
/// matrix the clustering was computed on.
pub fn rank_distribution(
    clustering: &Clustering,
    cluster: usize,
    ranks: &[usize],
    d: &DMatrix<f64>,
) -> Result<RankDistribution, CompareError> {
    if cluster >= clustering.k {
        return Err(CompareError::NoSuchCluster(cluster));
    }
    if ranks.len() != clustering.refs.len() {
        return Err(CompareError::LengthMismatch(format!("{} ranks for {} components", ranks.len(), clustering.refs.len())));
    }
    let members = clustering.members(cluster);
    let medoid = clustering.medoids[cluster];
    let bins = ranks.iter().copied().max().map_or(0, |r| r + 1);
    let mut histogram = vec![0; bins];
    for &i in &members {
        histogram[ranks[i]] += 1;
    }
    let opacity = members
        .iter()
        .map(|&i| (clustering.refs[i].clone(), (1.0 - d[(i, medoid)]).clamp(0.0, 1.0)))
        .collect();
    Ok(RankDistribution { histogram, opacity })
}
