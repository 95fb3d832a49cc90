//! Lagged second and fourth order scatter matrices and diagonality measures.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::par;
use crate::series::MultivariateSeries;
use crate::solver::RunResult;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScatterError {
    #[error("lag {lag} out of range for series of length {n} (need 1 <= lag <= n - 2)")]
    LagTooLarge { lag: usize, n: usize },
    #[error("matrix has no mass, diagonality undefined")]
    ZeroMatrix,
    #[error("run {0} did not converge")]
    RunFailed(String),
    #[error("series has {series} variables but the run has {run}")]
    DimensionMismatch { series: usize, run: usize },
}

/// Symmetrized lag-k autocovariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocovMatrix {
    pub lag: usize,
    pub matrix: DMatrix<f64>,
}

/// Lag-k fourth order cross moment matrix with entries
/// `q_ij = E[z_i,t z_j,t z_i,t+k z_j,t+k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourthCrossMatrix {
    pub lag: usize,
    pub matrix: DMatrix<f64>,
}

fn check_lag(n: usize, k: usize) -> Result<(), ScatterError> {
    if k == 0 || n < 3 || k > n - 2 {
        Err(ScatterError::LagTooLarge { lag: k, n })
    } else {
        Ok(())
    }
}

/// `(C_k + C_k^T) / 2` with `C_k = 1/(n-k) sum_t z_t z_{t+k}^T` on centered `z`.
pub fn autocov(z: &DMatrix<f64>, k: usize) -> Result<AutocovMatrix, ScatterError> {
    let n = z.nrows();
    check_lag(n, k)?;
    let mean = linalg::column_means(z);
    let zc = linalg::center(z, &mean);
    Ok(AutocovMatrix { lag: k, matrix: lagged_product(&zc, k) })
}

/// Symmetrized lagged product without re-centering.
pub(crate) fn lagged_product(z: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = z.nrows();
    let m = n - k;
    let mut c = z.rows(0, m).transpose() * z.rows(k, m) / m as f64;
    linalg::symmetrize(&mut c);
    c
}

/// Raw fourth order lagged cross moments (no cumulant correction).
pub fn fourth_cross(z: &DMatrix<f64>, k: usize) -> Result<FourthCrossMatrix, ScatterError> {
    let n = z.nrows();
    check_lag(n, k)?;
    let p = z.ncols();
    let m = n - k;
    // a_t = z_t ∘ z_{t+k}; q = mean_t a_t a_t^T, filled on the upper triangle
    // and mirrored so that q_ij == q_ji bit for bit.
    let a = DMatrix::from_fn(m, p, |t, j| z[(t, j)] * z[(t + k, j)]);
    let mut q = DMatrix::zeros(p, p);
    for i in 0..p {
        let ai = a.column(i);
        for j in i..p {
            let v = ai.dot(&a.column(j)) / m as f64;
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    Ok(FourthCrossMatrix { lag: k, matrix: q })
}

/// Share of squared mass off the diagonal; 0 for diagonal matrices.
pub fn diagonality(m: &DMatrix<f64>) -> Result<f64, ScatterError> {
    let mut total = 0.0;
    let mut diag = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let sq = m[(i, j)] * m[(i, j)];
            total += sq;
            if i == j {
                diag += sq;
            }
        }
    }
    if total == 0.0 || !total.is_finite() {
        return Err(ScatterError::ZeroMatrix);
    }
    Ok(((total - diag) / total).clamp(0.0, 1.0))
}

/// Smallest difference between consecutive sorted eigenvalues of a symmetric
/// matrix; 0 for 1 x 1 input.
pub fn eigen_gap(m: &DMatrix<f64>) -> f64 {
    if m.nrows() < 2 {
        return 0.0;
    }
    let (values, _) = linalg::sym_eigen_sorted(m);
    values
        .as_slice()
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// Diagonality of the autocovariance and fourth order scatters of
/// `components` at lag `k`. A scatter with no mass counts as diagonal.
pub fn scatter_diagonalities(components: &DMatrix<f64>, k: usize) -> Result<(f64, f64), ScatterError> {
    let second = diagonality(&autocov(components, k)?.matrix).unwrap_or(0.0);
    let fourth = diagonality(&fourth_cross(components, k)?.matrix).unwrap_or(0.0);
    Ok((second, fourth))
}

/// Per-lag diagonality curves of the scatters of a run's components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalityProfile {
    pub lags: Vec<usize>,
    /// Autocovariance (SOBI-type) diagonality per lag.
    pub sobi: Vec<f64>,
    /// Fourth order (vSOBI-type) diagonality per lag.
    pub vsobi: Vec<f64>,
}

/// Default profile length `min(n/4, 200)`.
pub fn default_profile_len(n: usize) -> usize {
    (n / 4).min(200).min(n.saturating_sub(2))
}

/// Computes the diagonality profile of `run` applied to `x` over `lags`
/// (default `1..=min(n/4, 200)`). Lags are evaluated in parallel and merged
/// in the given order.
pub fn diagonality_profile(
    run: &RunResult,
    x: &MultivariateSeries,
    lags: Option<&[usize]>,
) -> Result<DiagonalityProfile, ScatterError> {
    let w = run.unmixing.as_ref().ok_or_else(|| ScatterError::RunFailed(run.id.to_string()))?;
    if w.ncols() != x.p() {
        return Err(ScatterError::DimensionMismatch { series: x.p(), run: w.ncols() });
    }
    let components = crate::solver::apply_unmixing(w, x.values());
    let lags: Vec<usize> = match lags {
        Some(l) => l.to_vec(),
        None => (1..=default_profile_len(x.n())).collect(),
    };
    let pairs = par::map_slice(&lags, |&k| scatter_diagonalities(&components, k));
    let mut sobi = Vec::with_capacity(lags.len());
    let mut vsobi = Vec::with_capacity(lags.len());
    for pair in pairs {
        let (s, v) = pair?;
        sobi.push(s);
        vsobi.push(v);
    }
    Ok(DiagonalityProfile { lags, sobi, vsobi })
}
