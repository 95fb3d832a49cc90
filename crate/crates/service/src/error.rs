use thiserror::Error;

use tbss_core::analytics::cluster::ClusterError;
use tbss_core::analytics::compare::CompareError;
use tbss_core::analytics::dissim::DissimError;
use tbss_core::analytics::histogram::HistogramError;
use tbss_core::analytics::md_index::MdError;
use tbss_core::analytics::mds::MdsError;
use tbss_core::guidance::GuidanceError;
use tbss_core::lags::LagExprError;
use tbss_core::scatters::ScatterError;
use tbss_core::series::SeriesError;
use tbss_core::solver::ParamError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no dataset with id {0}")]
    UnknownDataset(String),
    #[error("no run with id {0}")]
    UnknownRun(String),
    #[error("invalid parameters: {field}: {message}")]
    InvalidParams { field: String, message: String },
    #[error("invalid lag expression: {0}")]
    LagExpr(#[from] LagExprError),
    #[error("{0}")]
    InvalidRequest(String),
    #[error("run {0} has not converged")]
    RunNotConverged(String),
    #[error("all {0} selectable colors are in use")]
    SelectionFull(usize),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Projection(#[from] MdsError),
    #[error(transparent)]
    Dissimilarity(#[from] DissimError),
    #[error(transparent)]
    Scatter(#[from] ScatterError),
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error("MD index undefined: {0}")]
    MdIndex(#[from] MdError),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
    #[error("storage: {0}")]
    Storage(String),
}

impl From<ParamError> for ServiceError {
    fn from(e: ParamError) -> Self {
        ServiceError::InvalidParams { field: e.field, message: e.message }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

impl ServiceError {
    /// Machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownDataset(_) => "unknown_dataset",
            ServiceError::UnknownRun(_) => "unknown_run",
            ServiceError::InvalidParams { .. } => "invalid_params",
            ServiceError::LagExpr(LagExprError::Parse { .. }) => "lag_parse_error",
            ServiceError::LagExpr(_) => "lag_out_of_range",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::RunNotConverged(_) => "run_not_converged",
            ServiceError::SelectionFull(_) => "selection_full",
            ServiceError::Series(e) => match e {
                SeriesError::MissingData { .. } => "missing_data",
                SeriesError::NonMonotoneDates { .. } => "non_monotone_dates",
                SeriesError::InvalidDate { .. } => "invalid_date",
                SeriesError::TooLarge { .. } => "too_large",
                SeriesError::TooFewVariables { .. } => "too_few_variables",
                SeriesError::SingularCovariance { .. } => "singular_covariance",
                _ => "invalid_series",
            },
            ServiceError::Guidance(GuidanceError::SeriesTooShort { .. }) => "series_too_short",
            ServiceError::Guidance(GuidanceError::NoSuchVariable(_)) => "no_such_variable",
            ServiceError::Guidance(GuidanceError::LagTooLarge { .. } | GuidanceError::ZeroLag) => "lag_too_large",
            ServiceError::Guidance(_) => "guidance_error",
            ServiceError::Cluster(ClusterError::Infeasible { .. }) => "infeasible_k",
            ServiceError::Cluster(ClusterError::TooFewRuns) => "too_few_runs",
            ServiceError::Cluster(_) => "cluster_error",
            ServiceError::Projection(MdsError::GridFull { .. }) => "grid_full",
            ServiceError::Projection(_) => "degenerate_input",
            ServiceError::Dissimilarity(_) => "constant_series",
            ServiceError::Scatter(ScatterError::LagTooLarge { .. }) => "lag_too_large",
            ServiceError::Scatter(_) => "scatter_error",
            ServiceError::Compare(_) => "compare_error",
            ServiceError::MdIndex(_) => "singular",
            ServiceError::Histogram(_) => "bin_mismatch",
            ServiceError::Storage(_) => "storage",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServiceError::UnknownDataset(_) | ServiceError::UnknownRun(_) => 404,
            ServiceError::SelectionFull(_) | ServiceError::RunNotConverged(_) => 409,
            ServiceError::Storage(_) => 500,
            ServiceError::InvalidRequest(_) => 400,
            _ => 422,
        }
    }

    /// Offending field path for parameter errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            ServiceError::InvalidParams { field, .. } => Some(field),
            _ => None,
        }
    }

    /// Character position for lag expression errors.
    pub fn position(&self) -> Option<usize> {
        match self {
            ServiceError::LagExpr(LagExprError::Parse { position, .. } | LagExprError::OutOfRange { position, .. }) => {
                Some(*position)
            }
            _ => None,
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
