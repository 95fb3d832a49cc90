//! HTTP service around the blind source separation core: dataset sessions,
//! a background run queue, persistence and the analytic views.

pub mod api;
pub mod cache;
pub mod error;
pub mod export;
pub mod jobs;
pub mod session;
pub mod store;
pub mod window;
pub mod workbench;

pub use error::{Result, ServiceError};
pub use workbench::{Config, Workbench};
