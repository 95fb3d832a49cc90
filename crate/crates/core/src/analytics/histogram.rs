//! Six-bin lag set histograms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lags::LagSet;

pub const BINS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagHistogram {
    /// Seven ascending edges; bin b covers `[edges[b], edges[b + 1])`.
    pub bin_edges: [usize; BINS + 1],
    pub counts: [usize; BINS],
    pub max_lag_context: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistogramError {
    #[error("histograms use different bin edges")]
    BinMismatch,
}

/// Edges of six integer bins of width `max(1, context / 6)` starting at 1;
/// the last bin absorbs the remainder.
pub fn bin_edges(max_lag_context: usize) -> [usize; BINS + 1] {
    let width = (max_lag_context / BINS).max(1);
    let mut edges = [0; BINS + 1];
    for (b, e) in edges.iter_mut().enumerate() {
        *e = 1 + b * width;
    }
    edges[BINS] = edges[BINS].max(max_lag_context + 1);
    edges
}

/// Histogram of `lags` over `[1, max_lag_context]`. Lags beyond the context
/// are counted in the last bin.
pub fn lag_histogram(lags: &LagSet, max_lag_context: usize) -> LagHistogram {
    let bin_edges = bin_edges(max_lag_context);
    let mut counts = [0; BINS];
    for lag in lags.iter() {
        let b = (0..BINS).rev().find(|&b| lag >= bin_edges[b]).unwrap_or(0);
        counts[b] += 1;
    }
    LagHistogram { bin_edges, counts, max_lag_context }
}

/// Histograms of several lag sets on the shared context of their largest lag.
pub fn shared_histograms(sets: &[&LagSet]) -> Vec<LagHistogram> {
    let context = sets.iter().filter_map(|s| s.max()).max().unwrap_or(1);
    sets.iter().map(|s| lag_histogram(s, context)).collect()
}

/// Manhattan distance between bin counts.
pub fn histogram_distance(a: &LagHistogram, b: &LagHistogram) -> Result<usize, HistogramError> {
    if a.bin_edges != b.bin_edges {
        return Err(HistogramError::BinMismatch);
    }
    Ok(a.counts.iter().zip(&b.counts).map(|(x, y)| x.abs_diff(*y)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lags_fill_all_bins() {
        let h = lag_histogram(&LagSet::range(1, 12), 12);
        assert_eq!(h.bin_edges, [1, 3, 5, 7, 9, 11, 13]);
        assert_eq!(h.counts, [2; 6]);
    }

    #[test]
    fn single_lag() {
        let h = lag_histogram(&LagSet::new([5]).unwrap(), 12);
        assert_eq!(h.counts, [0, 0, 1, 0, 0, 0]);
    }

    #[test]
    fn small_context_clamps_width() {
        let h = lag_histogram(&LagSet::range(1, 3), 3);
        assert_eq!(h.bin_edges, [1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(h.counts, [1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn last_bin_absorbs_remainder() {
        let h = lag_histogram(&LagSet::range(1, 14), 14);
        assert_eq!(h.bin_edges, [1, 3, 5, 7, 9, 11, 15]);
        assert_eq!(h.counts.iter().sum::<usize>(), 14);
        assert_eq!(h.counts[5], 4);
    }

    #[test]
    fn distances() {
        let a = lag_histogram(&LagSet::new([1]).unwrap(), 12);
        let b = lag_histogram(&LagSet::new([12]).unwrap(), 12);
        assert_eq!(histogram_distance(&a, &a), Ok(0));
        assert_eq!(histogram_distance(&a, &b), Ok(2));
        assert_eq!(histogram_distance(&b, &a), Ok(2));
        let c = lag_histogram(&LagSet::new([1]).unwrap(), 30);
        assert_eq!(histogram_distance(&a, &c), Err(HistogramError::BinMismatch));
    }

    #[test]
    fn shared_context() {
        let a = LagSet::range(1, 3);
        let b = LagSet::new([10, 30]).unwrap();
        let hs = shared_histograms(&[&a, &b]);
        assert!(hs.iter().all(|h| h.max_lag_context == 30));
        assert_eq!(hs[0].counts, [3, 0, 0, 0, 0, 0]);
        assert_eq!(hs[1].counts, [0, 1, 0, 0, 0, 1]);
    }
}
