//! Time-window selection and min-max downsampling shared by all series of a
//! view, so every series in one response has the same number of points.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tbss_core::solver::RunId;

/// Windows longer than this are bucketed unless a resolution is given.
pub const DEFAULT_RESOLUTION: usize = 2000;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowQuery {
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    /// Maximum number of points per series.
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSeries {
    /// `None` for input variables.
    pub run_id: Option<RunId>,
    pub index: usize,
    pub label: String,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesWindow {
    /// First row of the window.
    pub start: usize,
    /// One past the last row.
    pub end: usize,
    /// First date of every bucket.
    pub dates: Vec<NaiveDate>,
    pub series: Vec<WindowSeries>,
}

/// Row range `[start, end)` of the dates inside `[from, to]`.
pub fn row_range(dates: &[NaiveDate], from: Option<NaiveDate>, to: Option<NaiveDate>) -> (usize, usize) {
    let start = from.map_or(0, |f| dates.partition_point(|d| *d < f));
    let end = to.map_or(dates.len(), |t| dates.partition_point(|d| *d <= t));
    (start, end.max(start))
}

/// Splits `[start, end)` into at most `resolution` contiguous buckets of
/// near-equal size.
pub fn buckets(start: usize, end: usize, resolution: usize) -> Vec<(usize, usize)> {
    let len = end - start;
    let count = len.min(resolution.max(1));
    (0..count)
        .map(|b| (start + b * len / count, start + (b + 1) * len / count))
        .collect()
}

pub fn min_max(values: &[f64], buckets: &[(usize, usize)]) -> (Vec<f64>, Vec<f64>) {
    buckets
        .iter()
        .map(|&(a, b)| {
            values[a..b]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        })
        .unzip()
}

/// Builds a window over `columns`, each given as `(run, index, label, values)`.
pub fn window<'a, I>(dates: &[NaiveDate], query: &WindowQuery, columns: I) -> SeriesWindow
where
    I: IntoIterator<Item = (Option<RunId>, usize, String, &'a [f64])>,
{
    let (start, end) = row_range(dates, query.from, query.to);
    let bounds = buckets(start, end, query.resolution.unwrap_or(DEFAULT_RESOLUTION));
    let series = columns
        .into_iter()
        .map(|(run_id, index, label, values)| {
            let (min, max) = min_max(values, &bounds);
            WindowSeries { run_id, index, label, min, max }
        })
        .collect();
    SeriesWindow { start, end, dates: bounds.iter().map(|&(a, _)| dates[a]).collect(), series }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dates(n: usize) -> Vec<NaiveDate> {
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        (0..n).map(|i| d0 + chrono::Days::new(i as u64)).collect()
    }

    #[test]
    fn buckets_cover_the_range() {
        let b = buckets(3, 103, 7);
        assert_eq!(b.len(), 7);
        assert_eq!(b[0].0, 3);
        assert_eq!(b[6].1, 103);
        assert!(b.windows(2).all(|w| w[0].1 == w[1].0 && w[0].0 < w[0].1));
        assert_eq!(buckets(0, 5, 100).len(), 5);
        assert!(buckets(4, 4, 10).is_empty());
    }

    #[test]
    fn window_bounds_by_date() {
        let d = dates(10);
        assert_eq!(row_range(&d, Some(d[2]), Some(d[5])), (2, 6));
        assert_eq!(row_range(&d, None, None), (0, 10));
        assert_eq!(row_range(&d, Some(d[8]), Some(d[1])), (8, 8));
    }

    #[test]
    fn min_max_keeps_extremes() {
        let d = dates(6);
        let v = [1.0, 5.0, -2.0, 0.0, 3.0, 3.0];
        let w = window(&d, &WindowQuery { from: None, to: None, resolution: Some(2) }, [(None, 0, "x".to_string(), &v[..])]);
        assert_eq!(w.series[0].min, vec![-2.0, 0.0]);
        assert_eq!(w.series[0].max, vec![5.0, 3.0]);
        assert_eq!(w.dates, vec![d[0], d[3]]);
    }
}
