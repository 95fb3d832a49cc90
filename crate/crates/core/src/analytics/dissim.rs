//! Dissimilarities between components, ensembles and lag sets.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::assignment::min_cost_assignment;
use super::doi::{doi, DoiKind};
use crate::par;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DissimError {
    #[error("series {0} is constant, correlation undefined")]
    ConstantSeries(usize),
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Which dissimilarity backs a component projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dissimilarity {
    /// `1 - |cor|` per component pair.
    #[default]
    Correlation,
    /// Mean of assignment-matched `1 - |cor|` per ensemble pair.
    Ensemble,
    /// `|DOI(a) - DOI(b)|` per component pair.
    Doi,
}

impl Dissimilarity {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "correlation" => Some(Dissimilarity::Correlation),
            "ensemble" => Some(Dissimilarity::Ensemble),
            "doi" => Some(Dissimilarity::Doi),
            _ => None,
        }
    }
}

/// Standardized copy (zero mean, unit norm) used to turn correlations into
/// dot products.
fn standardize(c: &[f64]) -> Option<Vec<f64>> {
    let n = c.len() as f64;
    let mean = c.iter().sum::<f64>() / n;
    let centered: Vec<f64> = c.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        Some(centered.into_iter().map(|v| v / norm).collect())
    } else {
        None
    }
}

/// `1 - |Pearson correlation|`.
pub fn dist_cor(a: &[f64], b: &[f64]) -> Result<f64, DissimError> {
    if a.len() != b.len() {
        return Err(DissimError::LengthMismatch(a.len(), b.len()));
    }
    let sa = standardize(a).ok_or(DissimError::ConstantSeries(0))?;
    let sb = standardize(b).ok_or(DissimError::ConstantSeries(1))?;
    Ok(1.0 - corr_of_standardized(&sa, &sb).abs())
}

fn corr_of_standardized(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

/// Absolute correlation matrix between the columns of two component sets.
pub fn abs_correlations(left: &[Vec<f64>], right: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DissimError> {
    let ls = standardize_all(left)?;
    let rs = standardize_all(right)?;
    Ok(par::map_slice(&ls, |a| rs.iter().map(|b| corr_of_standardized(a, b).abs()).collect()))
}

fn standardize_all(series: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DissimError> {
    if let Some(first) = series.first() {
        if let Some(bad) = series.iter().find(|s| s.len() != first.len()) {
            return Err(DissimError::LengthMismatch(first.len(), bad.len()));
        }
    }
    series
        .iter()
        .enumerate()
        .map(|(i, s)| standardize(s).ok_or(DissimError::ConstantSeries(i)))
        .collect()
}

/// Pairwise `dist_cor` matrix; rows are computed in parallel.
pub fn dist_cor_matrix(components: &[Vec<f64>]) -> Result<DMatrix<f64>, DissimError> {
    let std = standardize_all(components)?;
    let m = std.len();
    let rows = par::map_indexed(m, |i| {
        (0..m).map(|j| if i == j { 0.0 } else { 1.0 - corr_of_standardized(&std[i], &std[j]).abs() }).collect::<Vec<_>>()
    });
    let mut d = DMatrix::from_fn(m, m, |i, j| rows[i][j]);
    // Enforce exact symmetry despite different summation orders.
    for i in 0..m {
        for j in (i + 1)..m {
            d[(j, i)] = d[(i, j)];
        }
    }
    Ok(d)
}

/// `|DOI(a) - DOI(b)|` matrix.
pub fn doi_matrix(components: &[Vec<f64>], kind: DoiKind) -> DMatrix<f64> {
    let scores: Vec<f64> = par::map_slice(components, |c| doi(c, kind));
    DMatrix::from_fn(scores.len(), scores.len(), |i, j| (scores[i] - scores[j]).abs())
}

/// Mean `dist_cor` of the optimal one-to-one matching between two ensembles.
pub fn ensemble_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, DissimError> {
    if a.is_empty() || b.is_empty() {
        return Ok(0.0);
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let cors = abs_correlations(small, large)?;
    let cost: Vec<Vec<f64>> = cors.iter().map(|row| row.iter().map(|c| 1.0 - c).collect()).collect();
    let (_, total) = min_cost_assignment(&cost);
    Ok((total / small.len() as f64).max(0.0))
}

/// Pairwise ensemble distances.
pub fn ensemble_matrix(ensembles: &[Vec<Vec<f64>>]) -> Result<DMatrix<f64>, DissimError> {
    let m = ensembles.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| ((i + 1)..m).map(move |j| (i, j))).collect();
    let values = par::map_slice(&pairs, |&(i, j)| ensemble_distance(&ensembles[i], &ensembles[j]));
    let mut d = DMatrix::zeros(m, m);
    for (&(i, j), v) in pairs.iter().zip(values) {
        let v = v?;
        d[(i, j)] = v;
        d[(j, i)] = v;
    }
    Ok(d)
}
