//! gSOBI estimation by fixed-point iteration with symmetric orthogonalization.
//!
//! For whitened data `z` and an orthogonal `U` with rows `u_i` the objective
//!
//! ```text
//! b * sum_{k in k1} sum_i (E[u_i'z_t u_i'z_{t+k}])^2
//!   + (1 - b) * sum_{k in k2} sum_i (E[(u_i'z_t)^2 (u_i'z_{t+k})^2] - 1)^2
//! ```
//!
//! is maximized by repeatedly replacing `U` with the symmetric
//! orthogonalization of its gradient. The unmixing matrix is then
//! `W = U S^(-1/2)` where `S^(-1/2)` is the whitener.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::doi::{doi, DoiKind};
use crate::lags::{format_lag_set, LagSet, MAX_SET_SIZE};
use crate::linalg;
use crate::par;
use crate::scatters;
use crate::series::{self, MultivariateSeries, SeriesError, WhitenedSeries};

/// Tuning parameters of one gSOBI run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parametrization {
    /// Weight of the second order (SOBI) part, in `[0, 1]`.
    pub b: f64,
    /// Lags of the second order part.
    pub k1: LagSet,
    /// Lags of the fourth order part.
    pub k2: LagSet,
    /// Seed for random restarts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ParamError {
    /// Path of the offending field, e.g. `k1[3]`.
    pub field: String,
    pub message: String,
}

impl Parametrization {
    /// `b = 0.9`, `k1 = 1..12`, `k2 = {1, 2, 3}`.
    pub fn default_gsobi() -> Self {
        Parametrization { b: 0.9, k1: LagSet::range(1, 12), k2: LagSet::range(1, 3), seed: None }
    }

    pub fn new(b: f64, k1: LagSet, k2: LagSet) -> Self {
        Parametrization { b, k1, k2, seed: None }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn uses_second_order(&self) -> bool {
        self.b > 0.0
    }

    pub fn uses_fourth_order(&self) -> bool {
        self.b < 1.0
    }

    /// Checks the parametrization against a series of length `n`.
    pub fn validate(&self, n: usize) -> Result<(), ParamError> {
        let err = |field: &str, message: String| Err(ParamError { field: field.to_string(), message });
        if !self.b.is_finite() || !(0.0..=1.0).contains(&self.b) {
            return err("b", format!("must lie in [0, 1], got {}", self.b));
        }
        if self.uses_second_order() && self.k1.is_empty() {
            return err("k1", "must not be empty when b > 0".into());
        }
        if self.uses_fourth_order() && self.k2.is_empty() {
            return err("k2", "must not be empty when b < 1".into());
        }
        for (name, set) in [("k1", &self.k1), ("k2", &self.k2)] {
            if set.len() > MAX_SET_SIZE {
                return err(name, format!("holds {} lags, at most {MAX_SET_SIZE} allowed", set.len()));
            }
            if let Some(pos) = set.iter().position(|k| k + 1 >= n) {
                let lag = set.as_slice()[pos];
                return err(&format!("{name}[{pos}]"), format!("lag {lag} must be below n - 1 = {}", n.saturating_sub(1)));
            }
        }
        Ok(())
    }

    /// Stable text encoding used for run identifiers.
    pub fn canonical(&self) -> String {
        let b = if self.b == 0.0 { 0.0 } else { self.b };
        let seed = self.seed.map_or_else(|| "-".to_string(), |s| s.to_string());
        format!("gsobi;b={b:?};k1={};k2={};seed={seed}", format_lag_set(&self.k1), format_lag_set(&self.k2))
    }

    /// Deterministic identifier of this parametrization on a dataset.
    pub fn run_id(&self, dataset_digest: &str) -> RunId {
        let mut h = Sha256::new();
        h.update(dataset_digest.as_bytes());
        h.update(b"|");
        h.update(self.canonical().as_bytes());
        let hex = series::to_hex(&h.finalize());
        RunId(format!("m{}", &hex[..12]))
    }

    fn restart_seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| {
            let digest = Sha256::digest(self.canonical().as_bytes());
            u64::from_le_bytes(digest[..8].try_into().unwrap_or([0; 8]))
        })
    }
}

/// Unique, deterministic run ("Method") identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunId(pub String);

impl fmt::Display for RunId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RunId {
    fn from(s: &str) -> Self {
        RunId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Converged,
    Failed,
}

/// Outcome of a run. Failed runs carry parameters and diagnostics only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub id: RunId,
    pub params: Parametrization,
    pub status: RunStatus,
    /// Fixed-point iterations of the final attempt.
    pub iterations: usize,
    /// Random restarts used after the warm start.
    pub restarts: usize,
    pub criterion_value: Option<f64>,
    /// p x p unmixing matrix, rows ordered like the components.
    pub unmixing: Option<DMatrix<f64>>,
    /// n x p component matrix (one column per component).
    pub components: Option<DMatrix<f64>>,
    /// Objective decreases observed between accepted iterations.
    pub monotonicity_violations: usize,
    pub failure: Option<String>,
}

impl RunResult {
    pub fn is_converged(&self) -> bool {
        self.status == RunStatus::Converged
    }

    /// Number of components (0 for failed runs).
    pub fn p(&self) -> usize {
        self.components.as_ref().map_or(0, |c| c.ncols())
    }

    pub fn component(&self, i: usize) -> Option<Vec<f64>> {
        self.components.as_ref().map(|c| c.column(i).iter().copied().collect())
    }

    /// Record for a run that failed before or during estimation.
    pub fn failed(id: RunId, params: Parametrization, reason: impl Into<String>) -> Self {
        RunResult {
            id,
            params,
            status: RunStatus::Failed,
            iterations: 0,
            restarts: 0,
            criterion_value: None,
            unmixing: None,
            components: None,
            monotonicity_violations: 0,
            failure: Some(reason.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Seeded random orthogonal restarts after a non-converged warm start.
    pub restarts: usize,
    /// Interestingness function used to order the components.
    pub doi: DoiKind,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { max_iter: 1000, tol: 1e-6, restarts: 1, doi: DoiKind::Kurtosis }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("invalid parametrization: {0}")]
    InvalidParams(#[from] ParamError),
    #[error("numerical breakdown: gradient rows are linearly dependent at iteration {iteration}")]
    NumericalBreakdown { iteration: usize },
    #[error("matrix is not orthogonal (max deviation {deviation:e})")]
    NotOrthogonal { deviation: f64 },
}

/// Precomputed pieces of the objective on one whitened series.
struct Objective<'a> {
    z: &'a DMatrix<f64>,
    b: f64,
    second: Vec<DMatrix<f64>>,
    fourth: Vec<usize>,
}

impl<'a> Objective<'a> {
    fn new(z: &'a DMatrix<f64>, params: &Parametrization) -> Result<Self, SolveError> {
        params.validate(z.nrows())?;
        let second = if params.uses_second_order() {
            params.k1.iter().map(|k| scatters::lagged_product(z, k)).collect()
        } else {
            Vec::new()
        };
        let fourth = if params.uses_fourth_order() { params.k2.as_slice().to_vec() } else { Vec::new() };
        Ok(Objective { z, b: params.b, second, fourth })
    }

    /// `E[y_t^2 y_{t+k}^2] - 1` for a projected series `y`.
    fn fourth_moment(y: &[f64], k: usize) -> f64 {
        let m = y.len() - k;
        let s: f64 = (0..m).map(|t| y[t] * y[t] * y[t + k] * y[t + k]).sum();
        s / m as f64 - 1.0
    }

    fn value(&self, u: &DMatrix<f64>) -> f64 {
        let p = u.nrows();
        let mut second = 0.0;
        for m in &self.second {
            for i in 0..p {
                let ui = u.row(i).transpose();
                let lambda = ui.dot(&(m * &ui));
                second += lambda * lambda;
            }
        }
        let mut fourth = 0.0;
        if !self.fourth.is_empty() {
            let y = self.z * u.transpose();
            for i in 0..p {
                let yi: Vec<f64> = y.column(i).iter().copied().collect();
                for &k in &self.fourth {
                    let mu = Self::fourth_moment(&yi, k);
                    fourth += mu * mu;
                }
            }
        }
        self.weighted(second, fourth)
    }

    fn weighted(&self, second: f64, fourth: f64) -> f64 {
        match (self.second.is_empty(), self.fourth.is_empty()) {
            (false, true) => self.b * second,
            (true, false) => (1.0 - self.b) * fourth,
            _ => self.b * second + (1.0 - self.b) * fourth,
        }
    }

    fn gradient(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, p) = self.z.shape();
        let y = if self.fourth.is_empty() { None } else { Some(self.z * u.transpose()) };
        let rows = par::map_indexed(p, |i| {
            let ui = u.row(i).transpose();
            let mut second = DVector::zeros(p);
            for m in &self.second {
                let mu = m * &ui;
                let lambda = ui.dot(&mu);
                second += mu * (4.0 * lambda);
            }
            let mut fourth = DVector::zeros(p);
            if let Some(y) = &y {
                let yi: Vec<f64> = y.column(i).iter().copied().collect();
                for &k in &self.fourth {
                    let m = n - k;
                    let mu = Self::fourth_moment(&yi, k);
                    let w_lead = DVector::from_fn(m, |t, _| 2.0 * yi[t] * yi[t + k] * yi[t + k]);
                    let w_lag = DVector::from_fn(m, |t, _| 2.0 * yi[t] * yi[t] * yi[t + k]);
                    let g = self.z.rows(0, m).transpose() * w_lead + self.z.rows(k, m).transpose() * w_lag;
                    fourth += g * (2.0 * mu / m as f64);
                }
            }
            let combined = match (self.second.is_empty(), self.fourth.is_empty()) {
                (false, true) => second * self.b,
                (true, false) => fourth * (1.0 - self.b),
                _ => second * self.b + fourth * (1.0 - self.b),
            };
            combined.transpose()
        });
        let mut t = DMatrix::zeros(p, p);
        for (i, row) in rows.into_iter().enumerate() {
            t.set_row(i, &row);
        }
        t
    }
}

fn check_orthogonal(u: &DMatrix<f64>) -> Result<(), SolveError> {
    let deviation = linalg::max_abs_dev_from_identity(&(u * u.transpose()));
    if u.is_square() && deviation <= 1e-8 {
        Ok(())
    } else {
        Err(SolveError::NotOrthogonal { deviation })
    }
}

/// The gSOBI objective at orthogonal `u` on whitened data.
pub fn criterion(u: &DMatrix<f64>, z: &WhitenedSeries, params: &Parametrization) -> Result<f64, SolveError> {
    check_orthogonal(u)?;
    Ok(Objective::new(&z.values, params)?.value(u))
}

/// Matrix whose row i is the gradient of the objective with respect to `u_i`.
pub fn gradient_rows(u: &DMatrix<f64>, z: &WhitenedSeries, params: &Parametrization) -> Result<DMatrix<f64>, SolveError> {
    check_orthogonal(u)?;
    Ok(Objective::new(&z.values, params)?.gradient(u))
}

/// Sign-adjusted change between two orthogonal iterates: each row may flip.
fn sign_adjusted_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    (0..new.nrows())
        .map(|i| {
            let minus = (new.row(i) - old.row(i)).abs().max();
            let plus = (new.row(i) + old.row(i)).abs().max();
            minus.min(plus)
        })
        .fold(0.0, f64::max)
}

fn warm_start(z: &DMatrix<f64>, params: &Parametrization) -> DMatrix<f64> {
    let p = z.ncols();
    let first = params.k1.min().into_iter().chain(params.k2.min()).min();
    let Some(k) = first else {
        return DMatrix::identity(p, p);
    };
    let (_, vectors) = linalg::sym_eigen_sorted(&scatters::lagged_product(z, k));
    let u = vectors.transpose();
    if u.iter().all(|v| v.is_finite()) && check_orthogonal(&u).is_ok() {
        u
    } else {
        DMatrix::identity(p, p)
    }
}

/// Haar-ish random orthogonal matrix from a seeded Gaussian draw.
pub fn random_orthogonal(p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let g = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
        if let Some(u) = linalg::symmetric_orthogonalize(&g) {
            return u;
        }
    }
}

struct Iterate {
    u: DMatrix<f64>,
    iterations: usize,
    converged: bool,
    value: f64,
    violations: usize,
}

fn iterate(objective: &Objective, mut u: DMatrix<f64>, options: &SolveOptions) -> Result<Iterate, SolveError> {
    let mut value = objective.value(&u);
    let mut violations = 0;
    for iteration in 1..=options.max_iter {
        let t = objective.gradient(&u);
        let next = linalg::symmetric_orthogonalize(&t).ok_or(SolveError::NumericalBreakdown { iteration })?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(SolveError::NumericalBreakdown { iteration });
        }
        let change = sign_adjusted_change(&next, &u);
        let next_value = objective.value(&next);
        if next_value < value - 1e-12 {
            violations += 1;
            log::debug!("objective decreased at iteration {iteration}: {value} -> {next_value}");
        }
        u = next;
        value = next_value;
        if change < options.tol {
            return Ok(Iterate { u, iterations: iteration, converged: true, value, violations });
        }
    }
    Ok(Iterate { u, iterations: options.max_iter, converged: false, value, violations })
}

/// Components `c_t = W (x_t - mean(x))` as an n x p matrix.
pub fn apply_unmixing(w: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = linalg::column_means(x);
    linalg::center(x, &mean) * w.transpose()
}

/// Estimates the unmixing matrix for `x`. The run id is derived from the
/// series digest. Non-convergence yields a failed `RunResult`, not an error.
pub fn solve(x: &MultivariateSeries, params: &Parametrization, options: &SolveOptions) -> Result<RunResult, SolveError> {
    let id = params.run_id(&x.digest());
    solve_with_id(x, params, options, id)
}

pub fn solve_with_id(
    x: &MultivariateSeries,
    params: &Parametrization,
    options: &SolveOptions,
    id: RunId,
) -> Result<RunResult, SolveError> {
    params.validate(x.n())?;
    let z = series::whiten(x)?;
    let objective = Objective::new(&z.values, params)?;
    let mut attempt = iterate(&objective, warm_start(&z.values, params), options)?;
    let mut restarts = 0;
    let seed = params.restart_seed();
    while !attempt.converged && restarts < options.restarts {
        restarts += 1;
        let start = random_orthogonal(x.p(), seed.wrapping_add(restarts as u64));
        attempt = iterate(&objective, start, options)?;
    }
    if !attempt.converged {
        let mut failed = RunResult::failed(
            id,
            params.clone(),
            format!("no convergence within {} iterations", options.max_iter),
        );
        failed.iterations = attempt.iterations;
        failed.restarts = restarts;
        return Ok(failed);
    }
    let mut w = &attempt.u * &z.whitener;
    let mut components = &z.values * attempt.u.transpose();
    order_and_normalize(&mut w, &mut components, options.doi);
    Ok(RunResult {
        id,
        params: params.clone(),
        status: RunStatus::Converged,
        iterations: attempt.iterations,
        restarts,
        criterion_value: Some(attempt.value),
        unmixing: Some(w),
        components: Some(components),
        monotonicity_violations: attempt.violations,
        failure: None,
    })
}

/// Orders components by descending DOI (stable) and flips each so that the
/// largest-magnitude loading of its unmixing row is positive.
fn order_and_normalize(w: &mut DMatrix<f64>, components: &mut DMatrix<f64>, kind: DoiKind) {
    let p = w.nrows();
    let scores: Vec<f64> = (0..p)
        .map(|i| doi(components.column(i).as_slice(), kind))
        .collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let w_sorted = DMatrix::from_fn(p, p, |i, j| w[(order[i], j)]);
    let c_sorted = DMatrix::from_fn(components.nrows(), p, |t, i| components[(t, order[i])]);
    *w = w_sorted;
    *components = c_sorted;
    for i in 0..p {
        let row = w.row(i);
        let lead = (0..p).fold(0, |best, j| if row[j].abs() > row[best].abs() { j } else { best });
        if w[(i, lead)] < 0.0 {
            w.row_mut(i).neg_mut();
            components.column_mut(i).neg_mut();
        }
    }
}

/// Worst-case deviations of a converged run from the model constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub max_abs_mean: f64,
    pub max_abs_variance_dev: f64,
    pub max_whitening_dev: f64,
    pub max_reconstruction_dev: f64,
}

impl InvariantReport {
    pub fn holds(&self) -> bool {
        self.max_abs_mean < 1e-8
            && self.max_abs_variance_dev < 1e-6
            && self.max_whitening_dev < 1e-6
            && self.max_reconstruction_dev < 1e-8
    }
}

/// Checks zero mean, unit variance, `W Cov(x) W' = I` and that component i is
/// row i of W applied to the centered input.
pub fn invariant_report(run: &RunResult, x: &MultivariateSeries) -> Option<InvariantReport> {
    let w = run.unmixing.as_ref()?;
    let c = run.components.as_ref()?;
    let n = c.nrows() as f64;
    let mut max_abs_mean = 0.0_f64;
    let mut max_abs_variance_dev = 0.0_f64;
    for col in c.column_iter() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        max_abs_mean = max_abs_mean.max(mean.abs());
        max_abs_variance_dev = max_abs_variance_dev.max((var - 1.0).abs());
    }
    let cov = linalg::covariance(x.values());
    let max_whitening_dev = linalg::max_abs_dev_from_identity(&(w * cov * w.transpose()));
    let rebuilt = apply_unmixing(w, x.values());
    let scale = rebuilt.abs().max().max(1.0);
    let max_reconstruction_dev = (rebuilt - c).abs().max() / scale;
    Some(InvariantReport { max_abs_mean, max_abs_variance_dev, max_whitening_dev, max_reconstruction_dev })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ar_sources(n: usize, phis: &[f64], seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = phis.len();
        let mut out = DMatrix::zeros(n, p);
        for (j, &phi) in phis.iter().enumerate() {
            let mut prev = 0.0;
            for t in 0..(n + 100) {
                let e: f64 = StandardNormal.sample(&mut rng);
                prev = phi * prev + e;
                if t >= 100 {
                    out[(t - 100, j)] = prev;
                }
            }
        }
        out
    }

    #[test]
    fn default_parametrization() {
        let p = Parametrization::default_gsobi();
        assert_eq!(p.b, 0.9);
        assert_eq!(p.k1, LagSet::range(1, 12));
        assert_eq!(p.k2.as_slice(), &[1, 2, 3]);
        assert!(p.validate(100).is_ok());
        assert_eq!(p.canonical(), "gsobi;b=0.9;k1=1:12;k2=1:3;seed=-");
    }

    #[test]
    fn validation_reports_field_paths() {
        let mut p = Parametrization::default_gsobi();
        let e = p.validate(12).unwrap_err();
        assert_eq!(e.field, "k1[10]");
        p.b = 1.5;
        assert_eq!(p.validate(100).unwrap_err().field, "b");
        let p = Parametrization::new(0.5, LagSet::default(), LagSet::range(1, 2));
        assert_eq!(p.validate(100).unwrap_err().field, "k1");
        let p = Parametrization::new(1.0, LagSet::range(1, 2), LagSet::default());
        assert!(p.validate(100).is_ok());
        let p = Parametrization::new(0.0, LagSet::default(), LagSet::default());
        assert_eq!(p.validate(100).unwrap_err().field, "k2");
    }

    #[test]
    fn run_ids_are_deterministic() {
        let p = Parametrization::default_gsobi();
        assert_eq!(p.run_id("abc"), p.run_id("abc"));
        assert_ne!(p.run_id("abc"), p.run_id("abd"));
        assert_ne!(p.run_id("abc"), p.clone().with_seed(1).run_id("abc"));
    }

    #[test]
    fn criterion_row_permutation_invariant() {
        let x = MultivariateSeries::from_values(ar_sources(500, &[0.3, 0.6, 0.9], 1)).unwrap();
        let z = series::whiten(&x).unwrap();
        let u = random_orthogonal(3, 5);
        let perm = DMatrix::from_fn(3, 3, |i, j| u[([2, 0, 1][i], j)]);
        let params = Parametrization::default_gsobi();
        let a = criterion(&u, &z, &params).unwrap();
        let b = criterion(&perm, &z, &params).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        assert!(matches!(criterion(&(u * 2.0), &z, &params), Err(SolveError::NotOrthogonal { .. })));
    }

    #[test]
    fn weight_annihilation() {
        let x = MultivariateSeries::from_values(ar_sources(400, &[0.3, 0.6, 0.9], 2)).unwrap();
        let z = series::whiten(&x).unwrap();
        let u = random_orthogonal(3, 9);
        let sobi_a = Parametrization::new(1.0, LagSet::range(1, 4), LagSet::range(1, 3));
        let sobi_b = Parametrization::new(1.0, LagSet::range(1, 4), LagSet::new([7, 9]).unwrap());
        assert_eq!(gradient_rows(&u, &z, &sobi_a).unwrap(), gradient_rows(&u, &z, &sobi_b).unwrap());
        let v_a = Parametrization::new(0.0, LagSet::range(1, 4), LagSet::range(1, 3));
        let v_b = Parametrization::new(0.0, LagSet::new([5]).unwrap(), LagSet::range(1, 3));
        assert_eq!(gradient_rows(&u, &z, &v_a).unwrap(), gradient_rows(&u, &z, &v_b).unwrap());
    }

    #[test]
    fn identity_mixing_recovers_sources() {
        let c = ar_sources(3000, &[0.2, 0.6, 0.95], 3);
        let x = MultivariateSeries::from_values(c.clone()).unwrap();
        let params = Parametrization::new(1.0, LagSet::range(1, 12), LagSet::range(1, 3));
        let run = solve(&x, &params, &SolveOptions::default()).unwrap();
        assert!(run.is_converged());
        let comps = run.components.as_ref().unwrap();
        for j in 0..3 {
            let best = (0..3)
                .map(|i| pearson(c.column(j).as_slice(), comps.column(i).as_slice()).abs())
                .fold(0.0, f64::max);
            assert!(best > 0.95, "source {j} best |cor| {best}");
        }
        assert!(invariant_report(&run, &x).unwrap().holds());
    }

    #[test]
    fn solve_is_deterministic_and_normalized() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.2, 0.3, 1.0, 0.5, -0.6, 0.1, 1.0]);
        let x = MultivariateSeries::from_values(ar_sources(1500, &[0.2, 0.5, 0.9], 4) * a.transpose()).unwrap();
        let params = Parametrization::default_gsobi();
        let r1 = solve(&x, &params, &SolveOptions::default()).unwrap();
        let r2 = solve(&x, &params, &SolveOptions::default()).unwrap();
        assert_eq!(r1.unmixing, r2.unmixing);
        assert_eq!(r1.id, r2.id);
        let w = r1.unmixing.unwrap();
        for i in 0..3 {
            let lead = (0..3).map(|j| w[(i, j)]).max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
            assert!(lead > 0.0);
        }
        let c = r1.components.unwrap();
        let scores: Vec<f64> = (0..3).map(|i| doi(c.column(i).as_slice(), DoiKind::Kurtosis)).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn non_convergence_gives_failed_run() {
        let x = MultivariateSeries::from_values(ar_sources(800, &[0.2, 0.5, 0.9], 6)).unwrap();
        let options = SolveOptions { max_iter: 1, tol: 0.0, restarts: 1, ..SolveOptions::default() };
        let run = solve(&x, &Parametrization::default_gsobi(), &options).unwrap();
        assert_eq!(run.status, RunStatus::Failed);
        assert!(run.unmixing.is_none() && run.components.is_none());
        assert_eq!(run.restarts, 1);
    }

    #[test]
    fn collinear_input_is_singular() {
        let c = ar_sources(300, &[0.5], 7);
        let values = DMatrix::from_fn(300, 2, |t, j| c[(t, 0)] * (j as f64 + 1.0));
        let x = MultivariateSeries::from_values(values).unwrap();
        assert!(matches!(
            solve(&x, &Parametrization::default_gsobi(), &SolveOptions::default()),
            Err(SolveError::Series(SeriesError::SingularCovariance { .. }))
        ));
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }
}
