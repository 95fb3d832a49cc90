//! Per-lag guidance for choosing lag sets.
//!
//! For each candidate lag the table reports its calendar meaning, the largest
//! absolute autocorrelation among the input variables, the smallest eigenvalue
//! gap of the whitened autocovariance and, when a converged run is being
//! refined, how diagonal that run's scatters are at the lag.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::lags::{format_lag_set, parse_lag_expr, LagExprError};
use crate::lags::LagSet;
use crate::par;
use crate::scatters::{self, ScatterError};
use crate::series::{self, granule_lags, infer_granules, lag_labels, GranuleUnit, MultivariateSeries, SeriesError};
use crate::solver::{Parametrization, RunResult};

/// Minimum series length for automatic seed parametrizations.
pub const MIN_SEED_LENGTH: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GuidanceError {
    #[error("lag {lag} out of range for series of length {n}")]
    LagTooLarge { lag: usize, n: usize },
    #[error("lags must be positive")]
    ZeroLag,
    #[error("no variable {0}")]
    NoSuchVariable(usize),
    #[error("series of length {n} is too short, need at least {MIN_SEED_LENGTH}")]
    SeriesTooShort { n: usize },
    #[error("reference run {0} did not converge")]
    RunFailed(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Scatter(#[from] ScatterError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceRow {
    pub lag: usize,
    /// Calendar labels, smallest granule first.
    pub calendar_label: Vec<String>,
    pub max_abs_acf: f64,
    pub eigen_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sobi_diag: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vsobi_diag: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceTable {
    /// Granule the lags were filtered to (`None` = every lag).
    pub granule: Option<GranuleUnit>,
    pub reference_run: Option<String>,
    pub rows: Vec<GuidanceRow>,
}

impl GuidanceTable {
    pub fn has_diagonality(&self) -> bool {
        self.reference_run.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GuidanceRequest {
    /// Keep only lags matching whole multiples of this granule.
    pub granule: Option<GranuleUnit>,
    /// Largest lag considered (default `n / 2`).
    pub max_lag: Option<usize>,
}

/// Default upper lag bound of the guidance scope.
pub fn default_max_lag(n: usize) -> usize {
    (n / 2).min(n.saturating_sub(2)).max(1)
}

/// Sample autocorrelation at lag `k` (divisor n in numerator and denominator).
pub fn acf(series: &[f64], k: usize) -> f64 {
    let n = series.len();
    if k >= n {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let denom: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
    if denom == 0.0 {
        return 0.0;
    }
    let num: f64 = (0..n - k).map(|t| (series[t] - mean) * (series[t + k] - mean)).sum();
    num / denom
}

/// Lags in scope for a request.
pub fn scoped_lags(x: &MultivariateSeries, request: &GuidanceRequest) -> Vec<usize> {
    let cap = default_max_lag(x.n());
    let max_lag = request.max_lag.map_or(cap, |m| m.min(cap));
    match request.granule {
        None => (1..=max_lag).collect(),
        Some(unit) => {
            let info = infer_granules(x.index());
            granule_lags(x.index(), &info, unit, max_lag).into_iter().map(|(k, _)| k).collect()
        }
    }
}

/// Builds the guidance table; rows are computed in parallel.
pub fn guidance_table(
    x: &MultivariateSeries,
    request: &GuidanceRequest,
    reference: Option<&RunResult>,
) -> Result<GuidanceTable, GuidanceError> {
    if let Some(run) = reference {
        if !run.is_converged() {
            return Err(GuidanceError::RunFailed(run.id.to_string()));
        }
    }
    let lags = scoped_lags(x, request);
    let info = infer_granules(x.index());
    let z = series::whiten(x)?;
    let columns: Vec<Vec<f64>> = (0..x.p()).map(|j| x.column(j)).collect();
    let metrics = par::map_slice(&lags, |&k| -> Result<(f64, f64), GuidanceError> {
        let go2 = columns.iter().map(|c| acf(c, k).abs()).fold(0.0, f64::max);
        let go3 = scatters::eigen_gap(&scatters::autocov(&z.values, k)?.matrix);
        Ok((go2, go3))
    });
    let profile = match reference {
        Some(run) => Some(scatters::diagonality_profile(run, x, Some(&lags))?),
        None => None,
    };
    let mut rows = Vec::with_capacity(lags.len());
    for (i, (&lag, m)) in lags.iter().zip(metrics).enumerate() {
        let (max_abs_acf, eigen_gap) = m?;
        rows.push(GuidanceRow {
            lag,
            calendar_label: lag_labels(x.index(), &info, lag),
            max_abs_acf,
            eigen_gap,
            sobi_diag: profile.as_ref().map(|p| p.sobi[i]),
            vsobi_diag: profile.as_ref().map(|p| p.vsobi[i]),
        });
    }
    Ok(GuidanceTable { granule: request.granule, reference_run: reference.map(|r| r.id.to_string()), rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacfOrder {
    #[default]
    Value,
    Name,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacfEntry {
    pub variable: String,
    pub acf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacfBox {
    pub lag: usize,
    pub entries: Vec<MacfEntry>,
}

/// Autocorrelations of every variable at each lag.
pub fn macf(x: &MultivariateSeries, lags: &[usize], order: MacfOrder) -> Result<Vec<MacfBox>, GuidanceError> {
    for &k in lags {
        check_lag(x.n(), k)?;
    }
    let columns: Vec<Vec<f64>> = (0..x.p()).map(|j| x.column(j)).collect();
    Ok(par::map_slice(lags, |&lag| {
        let mut entries: Vec<MacfEntry> = columns
            .iter()
            .zip(x.names())
            .map(|(c, name)| MacfEntry { variable: name.clone(), acf: acf(c, lag) })
            .collect();
        match order {
            MacfOrder::Value => entries.sort_by(|a, b| b.acf.total_cmp(&a.acf)),
            MacfOrder::Name => entries.sort_by(|a, b| a.variable.cmp(&b.variable)),
        }
        MacfBox { lag, entries }
    }))
}

fn check_lag(n: usize, k: usize) -> Result<(), GuidanceError> {
    if k == 0 {
        Err(GuidanceError::ZeroLag)
    } else if k >= n {
        Err(GuidanceError::LagTooLarge { lag: k, n })
    } else {
        Ok(())
    }
}

/// Pairs `(v_t, v_{t+k})` of one variable in time order.
pub fn lag_scatter(x: &MultivariateSeries, variable: usize, k: usize) -> Result<Vec<[f64; 2]>, GuidanceError> {
    check_lag(x.n(), k)?;
    if variable >= x.p() {
        return Err(GuidanceError::NoSuchVariable(variable));
    }
    let v = x.values().column(variable);
    Ok((0..x.n() - k).map(|t| [v[t], v[t + k]]).collect())
}

/// Configurable stand-in for the literature recommendation: the short lags
/// `1..=min(short_lags, n/4)` plus, for every calendar granule larger than
/// the base step, the multiple of that granule with the largest GO2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteraturePreset {
    pub b: f64,
    pub short_lags: usize,
    pub granule_peaks: bool,
    pub k2: LagSet,
}

impl Default for LiteraturePreset {
    fn default() -> Self {
        LiteraturePreset { b: 0.9, short_lags: 12, granule_peaks: true, k2: LagSet::range(1, 3) }
    }
}

/// Cap for randomly drawn lags.
pub fn random_lag_cap(n: usize) -> usize {
    (n / 4).clamp(1, 400)
}

fn random_parametrization(n: usize, rng: &mut ChaCha8Rng) -> Parametrization {
    let b = rng.random_range(0..=10) as f64 / 10.0;
    let cap = random_lag_cap(n);
    let draw = |rng: &mut ChaCha8Rng| {
        let size = rng.random_range(3..=12).min(cap);
        LagSet::new(sample(rng, cap, size).into_iter().map(|i| i + 1)).expect("lags are positive")
    };
    let k1 = draw(rng);
    let k2 = draw(rng);
    Parametrization::new(b, k1, k2)
}

/// The literature preset applied to `x`.
pub fn literature_parametrization(x: &MultivariateSeries, preset: &LiteraturePreset) -> Parametrization {
    let n = x.n();
    let short = preset.short_lags.min(n / 4).max(1);
    let mut k1 = LagSet::range(1, short);
    if preset.granule_peaks {
        let info = infer_granules(x.index());
        let columns: Vec<Vec<f64>> = (0..x.p()).map(|j| x.column(j)).collect();
        let max_lag = default_max_lag(n);
        for g in &info.larger {
            let best = granule_lags(x.index(), &info, g.unit, max_lag)
                .into_iter()
                .map(|(k, _)| (k, columns.iter().map(|c| acf(c, k).abs()).fold(0.0, f64::max)))
                .fold(None::<(usize, f64)>, |acc, (k, v)| match acc {
                    Some((_, best)) if best >= v => acc,
                    _ => Some((k, v)),
                });
            if let Some((k, _)) = best {
                k1 = k1.union(&LagSet::new([k]).expect("positive"));
            }
        }
    }
    let k2 = LagSet::new(preset.k2.iter().filter(|&k| k + 1 < n)).expect("positive");
    Parametrization::new(preset.b, k1, k2)
}

/// Five automatic parametrizations for a fresh dataset: the package default,
/// the literature preset, two random draws and classic SOBI.
pub fn seed_parametrizations(x: &MultivariateSeries, seed: u64) -> Result<Vec<Parametrization>, GuidanceError> {
    seed_parametrizations_with(x, seed, &LiteraturePreset::default())
}

pub fn seed_parametrizations_with(
    x: &MultivariateSeries,
    seed: u64,
    preset: &LiteraturePreset,
) -> Result<Vec<Parametrization>, GuidanceError> {
    let n = x.n();
    if n < MIN_SEED_LENGTH {
        return Err(GuidanceError::SeriesTooShort { n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = random_parametrization(n, &mut rng);
    let second = random_parametrization(n, &mut rng);
    Ok(vec![
        Parametrization::default_gsobi(),
        literature_parametrization(x, preset),
        first,
        second,
        Parametrization::new(1.0, LagSet::range(1, 12), LagSet::new([1]).expect("positive")),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::CalendarIndex;
    use nalgebra::DMatrix;
    use chrono::NaiveDate;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_series(n: usize, p: usize, seed: u64) -> MultivariateSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MultivariateSeries::from_values(DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))).unwrap()
    }

    fn sine_series(n: usize, period: f64) -> MultivariateSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let values = DMatrix::from_fn(n, 2, |t, j| {
            let phase = j as f64 * 0.7;
            (std::f64::consts::TAU * t as f64 / period + phase).sin() + 0.01 * { let s: f64 = StandardNormal.sample(&mut rng); s }
        });
        MultivariateSeries::from_values(values).unwrap()
    }

    #[test]
    fn sine_peaks_at_period() {
        let x = sine_series(1000, 50.0);
        let t = guidance_table(&x, &GuidanceRequest { granule: None, max_lag: Some(120) }, None).unwrap();
        // Around the period, the strongest lag is the period itself.
        let best = t.rows.iter().filter(|r| (38..=62).contains(&r.lag)).max_by(|a, b| a.max_abs_acf.total_cmp(&b.max_abs_acf)).unwrap();
        assert_eq!(best.lag, 50);
        assert!(!t.has_diagonality());
        assert!(t.rows.iter().all(|r| r.sobi_diag.is_none() && r.vsobi_diag.is_none()));
    }

    #[test]
    fn noise_has_small_acf() {
        let x = noise_series(5000, 3, 1);
        let t = guidance_table(&x, &GuidanceRequest { granule: None, max_lag: Some(60) }, None).unwrap();
        assert!(t.rows.iter().all(|r| r.max_abs_acf < 0.1));
    }

    #[test]
    fn granule_filter_keeps_weeks() {
        let x = noise_series(200, 2, 2);
        let t = guidance_table(&x, &GuidanceRequest { granule: Some(GranuleUnit::Week), max_lag: Some(40) }, None).unwrap();
        assert_eq!(t.rows.iter().map(|r| r.lag).collect::<Vec<_>>(), vec![7, 14, 21, 28, 35]);
        assert_eq!(t.rows[1].calendar_label, vec!["14 days".to_string(), "2 weeks".to_string()]);
    }

    #[test]
    fn macf_shapes_and_order() {
        let x = sine_series(500, 25.0);
        let boxes = macf(&x, &[1, 25], MacfOrder::Value).unwrap();
        assert_eq!(boxes.len(), 2);
        assert!(boxes.iter().all(|b| b.entries.len() == 2));
        assert!(boxes[1].entries.iter().all(|e| e.acf > 0.9));
        assert!(boxes[0].entries[0].acf >= boxes[0].entries[1].acf);
        let by_name = macf(&x, &[3], MacfOrder::Name).unwrap();
        assert_eq!(by_name[0].entries[0].variable, "x01");
        assert!(matches!(macf(&x, &[500], MacfOrder::Value), Err(GuidanceError::LagTooLarge { .. })));
    }

    #[test]
    fn constant_plus_noise_has_small_acf() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values = DMatrix::from_fn(3000, 2, |_, j| 100.0 * (j + 1) as f64 + { let s: f64 = StandardNormal.sample(&mut rng); s });
        let x = MultivariateSeries::from_values(values).unwrap();
        let boxes = macf(&x, &[1, 2, 3], MacfOrder::Value).unwrap();
        assert!(boxes.iter().flat_map(|b| &b.entries).all(|e| e.acf.abs() < 0.1));
    }

    #[test]
    fn lag_scatter_ar1() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut prev = 0.0;
        let v: Vec<f64> = (0..5000)
            .map(|_| {
                prev = 0.9 * prev + { let s: f64 = StandardNormal.sample(&mut rng); s };
                prev
            })
            .collect();
        let values = DMatrix::from_fn(5000, 2, |t, j| if j == 0 { v[t] } else { (t % 7) as f64 });
        let x = MultivariateSeries::from_values(values).unwrap();
        let pts = lag_scatter(&x, 0, 1).unwrap();
        assert_eq!(pts.len(), 4999);
        assert_eq!(pts[0], [v[0], v[1]]);
        let a: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let b: Vec<f64> = pts.iter().map(|p| p[1]).collect();
        let r = 1.0 - crate::analytics::dissim::dist_cor(&a, &b).unwrap();
        assert!((r - 0.9).abs() < 0.03);
        assert!(matches!(lag_scatter(&x, 0, 0), Err(GuidanceError::ZeroLag)));
        assert!(matches!(lag_scatter(&x, 0, 5000), Err(GuidanceError::LagTooLarge { .. })));
        assert!(matches!(lag_scatter(&x, 2, 1), Err(GuidanceError::NoSuchVariable(2))));
    }

    #[test]
    fn seeds() {
        let x = noise_series(400, 3, 6);
        let a = seed_parametrizations(&x, 17).unwrap();
        let b = seed_parametrizations(&x, 17).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
        assert_eq!(a[0], Parametrization::default_gsobi());
        assert_eq!(a[4].b, 1.0);
        for p in &a {
            p.validate(x.n()).unwrap();
            assert!(p.k1.iter().chain(p.k2.iter()).all(|k| k < x.n() - 1));
        }
        for p in &a[2..4] {
            assert!((3..=12).contains(&p.k1.len()) && (3..=12).contains(&p.k2.len()));
            assert!(p.k1.max().unwrap() <= 100);
            assert!(((p.b * 10.0).round() - p.b * 10.0).abs() < 1e-12);
        }
        let short = noise_series(29, 2, 1);
        assert!(matches!(seed_parametrizations(&short, 1), Err(GuidanceError::SeriesTooShort { n: 29 })));
    }

    #[test]
    fn literature_preset_adds_granule_peaks() {
        // Daily data with a three-week cycle: lag 21 is the best week multiple.
        let n = 400;
        let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
        let values = DMatrix::from_fn(n, 2, |t, j| {
            if j == 0 { (std::f64::consts::TAU * t as f64 / 21.0).cos() } else { ((t * 13) % 17) as f64 }
        });
        let x = MultivariateSeries::new(values, CalendarIndex::daily(start, n), vec!["a".into(), "b".into()]).unwrap();
        let p = literature_parametrization(&x, &LiteraturePreset::default());
        assert!(p.k1.iter().take(12).eq(1..=12));
        assert!(p.k1.contains(21), "{:?}", p.k1);
        assert_eq!(p.k2, LagSet::range(1, 3));
    }

    #[test]
    fn lag_expression_reexport() {
        assert_eq!(parse_lag_expr("1:12").unwrap(), LagSet::range(1, 12));
    }
}
