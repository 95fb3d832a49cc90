//! Temporal blind source separation workbench.
//!
//! The crate estimates gSOBI unmixing matrices for multivariate time series
//! and provides the analytics used to compare many runs against each other:
//! component dissimilarities, the minimum distance index, constrained
//! k-medoids clustering, classical MDS with grid de-occlusion, lag set
//! histograms and per-lag guidance metrics for choosing new lag sets.
//!
//! ```no_run
//! use tbss_core::series::{ingest, ParseOptions};
//! use tbss_core::solver::{solve, Parametrization, SolveOptions};
//!
//! let raw = std::fs::read("prices.csv").unwrap();
//! let x = ingest(&raw, &ParseOptions::default()).unwrap();
//! let run = solve(&x, &Parametrization::default_gsobi(), &SolveOptions::default()).unwrap();
//! println!("{:?} after {} iterations", run.status, run.iterations);
//! ```

pub mod analytics;
pub mod guidance;
pub mod lags;
pub mod linalg;
pub mod par;
pub mod scatters;
pub mod series;
pub mod solver;

pub use lags::{format_lag_set, parse_lag_expr, LagSet};
pub use series::{MultivariateSeries, WhitenedSeries};
pub use solver::{Parametrization, RunResult, RunStatus};
