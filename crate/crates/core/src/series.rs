//! Multivariate series ingestion, whitening and calendar granules.

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg;

/// Hard cap on the number of variables accepted at ingestion.
pub const MAX_VARIABLES: usize = 100;
/// Hard cap on the number of observations accepted at ingestion.
pub const MAX_OBSERVATIONS: usize = 20_000;
/// Whitening refuses covariances with a larger condition number.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("missing or non-numeric value at row {row}, column '{column}'")]
    MissingData { row: usize, column: String },
    #[error("dates must be strictly increasing (row {row})")]
    NonMonotoneDates { row: usize },
    #[error("invalid date '{value}' at row {row}, expected YYYY-MM-DD")]
    InvalidDate { row: usize, value: String },
    #[error("input too large: {n} rows x {p} variables (limits {MAX_OBSERVATIONS} x {MAX_VARIABLES})")]
    TooLarge { n: usize, p: usize },
    #[error("at least two variables are required, found {p}")]
    TooFewVariables { p: usize },
    #[error("at least three observations are required, found {n}")]
    TooFewObservations { n: usize },
    #[error("duplicate variable name '{0}'")]
    DuplicateName(String),
    #[error("index length {index} does not match {rows} rows")]
    LengthMismatch { index: usize, rows: usize },
    #[error("malformed table: {0}")]
    Malformed(String),
    #[error("sample covariance is singular or ill-conditioned (condition number {condition:e})")]
    SingularCovariance { condition: f64 },
}

/// Strictly increasing sequence of calendar dates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarIndex(Vec<NaiveDate>);

impl CalendarIndex {
    pub fn new(dates: Vec<NaiveDate>) -> Result<Self, SeriesError> {
        if let Some(pos) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(SeriesError::NonMonotoneDates { row: pos + 1 });
        }
        Ok(CalendarIndex(dates))
    }

    /// Consecutive daily dates starting at `start`.
    pub fn daily(start: NaiveDate, n: usize) -> Self {
        CalendarIndex(start.iter_days().take(n).collect())
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Median calendar span in days between observations `k` steps apart.
    pub fn median_span(&self, k: usize) -> Option<f64> {
        let n = self.0.len();
        if k == 0 || k >= n {
            return None;
        }
        let mut spans: Vec<i64> = (0..n - k).map(|t| (self.0[t + k] - self.0[t]).num_days()).collect();
        let m = spans.len();
        let mid = m / 2;
        let (_, upper, _) = spans.select_nth_unstable(mid);
        let upper = *upper;
        if m % 2 == 1 {
            Some(upper as f64)
        } else {
            let lower = *spans[..mid].iter().max().unwrap_or(&upper);
            Some((lower + upper) as f64 / 2.0)
        }
    }

    fn mean_step(&self) -> f64 {
        let n = self.0.len();
        (self.0[n - 1] - self.0[0]).num_days() as f64 / (n - 1) as f64
    }
}

/// A p-variate series of length n with a calendar index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultivariateSeries {
    values: DMatrix<f64>,
    index: CalendarIndex,
    names: Vec<String>,
}

impl MultivariateSeries {
    /// Validates and builds a series; `values` is n x p (rows are time points).
    pub fn new(values: DMatrix<f64>, index: CalendarIndex, names: Vec<String>) -> Result<Self, SeriesError> {
        let (n, p) = values.shape();
        if index.len() != n {
            return Err(SeriesError::LengthMismatch { index: index.len(), rows: n });
        }
        if names.len() != p {
            return Err(SeriesError::Malformed(format!("{} names for {} columns", names.len(), p)));
        }
        if n > MAX_OBSERVATIONS || p > MAX_VARIABLES {
            return Err(SeriesError::TooLarge { n, p });
        }
        if p < 2 {
            return Err(SeriesError::TooFewVariables { p });
        }
        if n < 3 {
            return Err(SeriesError::TooFewObservations { n });
        }
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(SeriesError::DuplicateName(name.clone()));
            }
        }
        for j in 0..p {
            if let Some(row) = values.column(j).iter().position(|v| !v.is_finite()) {
                return Err(SeriesError::MissingData { row, column: names[j].clone() });
            }
        }
        Ok(MultivariateSeries { values, index, names })
    }

    /// Series on a synthetic daily calendar starting 2000-01-01 with names
    /// `x01`, `x02`, ... Mostly useful for simulations.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self, SeriesError> {
        let (n, p) = values.shape();
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        let names = (1..=p).map(|j| format!("x{j:02}")).collect();
        Self::new(values, CalendarIndex::daily(start, n), names)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn index(&self) -> &CalendarIndex {
        &self.index
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of variables.
    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    /// Content digest over dates, names and the exact bit patterns of the values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.p() as u64).to_le_bytes());
        for d in self.index.dates() {
            h.update(d.num_days_from_ce().to_le_bytes());
        }
        for name in &self.names {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
        }
        for v in self.values.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        to_hex(&h.finalize())
    }

    /// Writes the series as a delimited table with a `date` column. Floats use
    /// the shortest representation that parses back to the same value.
    pub fn to_delimited(&self, delimiter: u8) -> String {
        write_table(self.index.dates(), &self.names, &self.values, delimiter)
    }
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Delimited table writer shared by series and component exports.
pub fn write_table(dates: &[NaiveDate], names: &[String], values: &DMatrix<f64>, delimiter: u8) -> String {
    let sep = delimiter as char;
    let mut out = String::with_capacity(values.len() * 20);
    out.push_str("date");
    for name in names {
        out.push(sep);
        out.push_str(name);
    }
    out.push('\n');
    for (t, date) in dates.iter().enumerate() {
        out.push_str(&date.format("%Y-%m-%d").to_string());
        for j in 0..values.ncols() {
            out.push(sep);
            out.push_str(&format!("{:?}", values[(t, j)]));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    pub delimiter: u8,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { delimiter: b',' }
    }
}

/// Parses a delimited table: header row, ISO dates in the first column,
/// numeric variables in the rest. Columns are returned ordered by name.
pub fn ingest(raw: &[u8], options: &ParseOptions) -> Result<MultivariateSeries, SeriesError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(raw);
    let header = reader.headers().map_err(|e| SeriesError::Malformed(e.to_string()))?.clone();
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let p = names.len();
    if p < 2 {
        return Err(SeriesError::TooFewVariables { p });
    }
    if p > MAX_VARIABLES {
        return Err(SeriesError::TooLarge { n: 0, p });
    }
    let mut dates = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); p];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| SeriesError::Malformed(e.to_string()))?;
        if dates.len() >= MAX_OBSERVATIONS {
            return Err(SeriesError::TooLarge { n: dates.len() + 1, p });
        }
        let raw_date = record.get(0).unwrap_or_default();
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|_| SeriesError::InvalidDate { row, value: raw_date.to_string() })?;
        dates.push(date);
        for (j, column) in columns.iter_mut().enumerate() {
            let cell = record.get(j + 1).unwrap_or_default();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => column.push(v),
                _ => return Err(SeriesError::MissingData { row, column: names[j].clone() }),
            }
        }
    }
    let index = CalendarIndex::new(dates)?;
    let n = index.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| names[a].cmp(&names[b]));
    let values = DMatrix::from_fn(n, p, |t, j| columns[order[j]][t]);
    let names = order.iter().map(|&j| names[j].clone()).collect();
    MultivariateSeries::new(values, index, names)
}

/// Centered and whitened series `z_t = S^(-1/2) (x_t - mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedSeries {
    pub values: DMatrix<f64>,
    pub whitener: DMatrix<f64>,
    pub mean: DVector<f64>,
}

impl WhitenedSeries {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }
}

pub fn whiten(x: &MultivariateSeries) -> Result<WhitenedSeries, SeriesError> {
    whiten_values(x.values())
}

/// Whitens an n x p matrix using the symmetric inverse square root of its
/// sample covariance (divisor n).
pub fn whiten_values(x: &DMatrix<f64>) -> Result<WhitenedSeries, SeriesError> {
    let mean = linalg::column_means(x);
    let xc = linalg::center(x, &mean);
    let mut cov = xc.transpose() * &xc / x.nrows() as f64;
    linalg::symmetrize(&mut cov);
    let (values, vectors) = linalg::sym_eigen_sorted(&cov);
    let p = values.len();
    let (lo, hi) = (values[0], values[p - 1]);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(SeriesError::SingularCovariance { condition });
    }
    let scaled = DMatrix::from_fn(p, p, |i, j| vectors[(i, j)] / values[j].sqrt());
    let mut whitener = scaled * vectors.transpose();
    linalg::symmetrize(&mut whitener);
    let values = xc * &whitener;
    Ok(WhitenedSeries { values, whitener, mean })
}

/// Calendar unit used to label and filter lags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GranuleUnit {
    Day,
    Week,
    Month,
    Quarter,
    Year,
    /// Irregular spacing: lags stay abstract step counts.
    Step,
}

impl GranuleUnit {
    pub const LARGER: [GranuleUnit; 4] = [GranuleUnit::Week, GranuleUnit::Month, GranuleUnit::Quarter, GranuleUnit::Year];

    /// Nominal length in days (`None` for abstract steps).
    pub fn nominal_days(self) -> Option<f64> {
        match self {
            GranuleUnit::Day => Some(1.0),
            GranuleUnit::Week => Some(7.0),
            GranuleUnit::Month => Some(365.2425 / 12.0),
            GranuleUnit::Quarter => Some(365.2425 / 4.0),
            GranuleUnit::Year => Some(365.2425),
            GranuleUnit::Step => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GranuleUnit::Day => "day",
            GranuleUnit::Week => "week",
            GranuleUnit::Month => "month",
            GranuleUnit::Quarter => "quarter",
            GranuleUnit::Year => "year",
            GranuleUnit::Step => "step",
        }
    }

    pub fn parse(s: &str) -> Option<GranuleUnit> {
        match s {
            "day" => Some(GranuleUnit::Day),
            "week" => Some(GranuleUnit::Week),
            "month" => Some(GranuleUnit::Month),
            "quarter" => Some(GranuleUnit::Quarter),
            "year" => Some(GranuleUnit::Year),
            "step" => Some(GranuleUnit::Step),
            _ => None,
        }
    }
}

/// A calendar granule larger than the base step, with the lag that spans it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Granule {
    pub unit: GranuleUnit,
    pub lag: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranuleInfo {
    pub base: GranuleUnit,
    /// Dates fall on Monday to Friday only.
    pub weekday_only: bool,
    pub larger: Vec<Granule>,
}

impl GranuleInfo {
    pub fn lag_for(&self, unit: GranuleUnit) -> Option<usize> {
        if unit == self.base {
            return Some(1);
        }
        self.larger.iter().find(|g| g.unit == unit).map(|g| g.lag)
    }
}

/// Relative tolerance when matching a lag's median span to a granule.
pub const GRANULE_TOLERANCE: f64 = 0.10;

/// Infers the base step and the larger granules expressible as lags.
pub fn infer_granules(idx: &CalendarIndex) -> GranuleInfo {
    let dates = idx.dates();
    let n = dates.len();
    let abstract_only = GranuleInfo { base: GranuleUnit::Step, weekday_only: false, larger: Vec::new() };
    if n < 3 {
        return abstract_only;
    }
    let mut steps: Vec<i64> = dates.windows(2).map(|w| (w[1] - w[0]).num_days()).collect();
    steps.sort_unstable();
    let median_step = steps[steps.len() / 2];
    let base = match median_step {
        1 => GranuleUnit::Day,
        7 => GranuleUnit::Week,
        28..=31 => GranuleUnit::Month,
        89..=92 => GranuleUnit::Quarter,
        365 | 366 => GranuleUnit::Year,
        _ => return abstract_only,
    };
    let weekday_only = base == GranuleUnit::Day
        && dates.iter().all(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        && (dates[n - 1] - dates[0]).num_days() >= 7;
    let base_days = base.nominal_days().unwrap_or(1.0);
    let larger = GranuleUnit::LARGER
        .iter()
        .filter(|u| u.nominal_days().unwrap_or(0.0) > 1.5 * base_days)
        .filter_map(|&unit| best_lag_for_multiple(idx, unit, 1).map(|lag| Granule { unit, lag }))
        .collect();
    GranuleInfo { base, weekday_only, larger }
}

/// Lag whose median span best matches `multiple` granules of `unit`, if the
/// match is within the granule tolerance. Ties prefer the smaller lag.
pub fn best_lag_for_multiple(idx: &CalendarIndex, unit: GranuleUnit, multiple: usize) -> Option<usize> {
    let nominal = unit.nominal_days()?;
    let n = idx.len();
    if n < 3 || multiple == 0 {
        return None;
    }
    let target = nominal * multiple as f64;
    let estimate = target / idx.mean_step();
    let lo = ((estimate * 0.8).floor() as usize).max(1);
    let hi = ((estimate * 1.25).ceil() as usize + 1).min(n - 1);
    let mut best: Option<(usize, f64)> = None;
    for k in lo..=hi {
        if let Some(span) = idx.median_span(k) {
            let err = (span - target).abs();
            if best.is_none_or(|(_, e)| err < e) {
                best = Some((k, err));
            }
        }
    }
    best.filter(|&(_, err)| err <= GRANULE_TOLERANCE * nominal).map(|(k, _)| k)
}

/// Lags (ascending, at most `max_lag`) that correspond to whole multiples of
/// `unit`, paired with the multiple.
pub fn granule_lags(idx: &CalendarIndex, info: &GranuleInfo, unit: GranuleUnit, max_lag: usize) -> Vec<(usize, usize)> {
    if unit == info.base || unit == GranuleUnit::Step {
        return (1..=max_lag).map(|k| (k, k)).collect();
    }
    if info.lag_for(unit).is_none() {
        return Vec::new();
    }
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut multiple = 1;
    let mut misses = 0;
    loop {
        match best_lag_for_multiple(idx, unit, multiple) {
            Some(k) if k > max_lag => break,
            Some(k) => {
                misses = 0;
                if out.last().is_none_or(|&(last, _)| last < k) {
                    out.push((k, multiple));
                }
            }
            None => {
                misses += 1;
                let nominal = unit.nominal_days().unwrap_or(1.0);
                if misses > 3 || nominal * multiple as f64 > idx.mean_step() * (max_lag as f64 + 1.0) * 1.25 {
                    break;
                }
            }
        }
        multiple += 1;
    }
    out
}

/// Human readable calendar labels for lag `k`, smallest granule first.
pub fn lag_labels(idx: &CalendarIndex, info: &GranuleInfo, k: usize) -> Vec<String> {
    let plural = |m: usize, name: &str| if m == 1 { format!("1 {name}") } else { format!("{m} {name}s") };
    let base_name = match (info.base, info.weekday_only) {
        (GranuleUnit::Day, true) => "business day",
        (unit, _) => unit.name(),
    };
    let mut labels = vec![plural(k, base_name)];
    for g in &info.larger {
        let m = (k as f64 / g.lag as f64).round() as usize;
        if m >= 1 && best_lag_for_multiple(idx, g.unit, m) == Some(k) {
            labels.push(plural(m, g.unit.name()));
        }
    }
    labels
}
