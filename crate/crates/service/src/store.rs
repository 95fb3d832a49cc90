//! Single-file session store.
//!
//! Each dataset lives in its own directory `<data-dir>/sessions/<dataset id>/`
//! holding one `session.json`. Dataset columns and run matrices are stored as
//! base64 blocks of little-endian f64 so values survive bit for bit; runs are
//! plain structured records. Writes go to a temporary file that is renamed
//! over the old one.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use tbss_core::series::CalendarIndex;
use tbss_core::solver::{RunId, RunResult, RunStatus};
use tbss_core::{MultivariateSeries, Parametrization};

use crate::error::{Result, ServiceError};
use crate::jobs::JobState;
use crate::session::SessionState;

pub const STORE_FORMAT: &str = "tbss-session";
pub const STORE_VERSION: u32 = 1;
const SESSION_FILE: &str = "session.json";

/// Distinguishes temporary files of concurrent writers.
static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Column-major matrix block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: String,
}

fn encode_f64(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_f64(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD.decode(text).map_err(|e| ServiceError::Storage(format!("bad column block: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(ServiceError::Storage("column block length is not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl StoredMatrix {
    pub fn encode(m: &DMatrix<f64>) -> Self {
        StoredMatrix { rows: m.nrows(), cols: m.ncols(), data: encode_f64(m.as_slice()) }
    }

    pub fn decode(&self) -> Result<DMatrix<f64>> {
        let values = decode_f64(&self.data)?;
        if values.len() != self.rows * self.cols {
            return Err(ServiceError::Storage("matrix block has the wrong size".into()));
        }
        Ok(DMatrix::from_vec(self.rows, self.cols, values))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredDataset {
    pub id: String,
    pub name: String,
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    /// One base64 block per variable.
    pub columns: Vec<String>,
}

impl StoredDataset {
    pub fn encode(id: &str, name: &str, x: &MultivariateSeries) -> Self {
        StoredDataset {
            id: id.to_string(),
            name: name.to_string(),
            dates: x.index().dates().to_vec(),
            names: x.names().to_vec(),
            columns: (0..x.p()).map(|j| encode_f64(&x.column(j))).collect(),
        }
    }

    pub fn decode(&self) -> Result<MultivariateSeries> {
        let n = self.dates.len();
        let mut values = DMatrix::zeros(n, self.columns.len());
        for (j, block) in self.columns.iter().enumerate() {
            let col = decode_f64(block)?;
            if col.len() != n {
                return Err(ServiceError::Storage(format!("column {j} has {} values, expected {n}", col.len())));
            }
            values.set_column(j, &nalgebra::DVector::from_vec(col));
        }
        let index = CalendarIndex::new(self.dates.clone())?;
        Ok(MultivariateSeries::new(values, index, self.names.clone())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResult {
    pub status: RunStatus,
    pub iterations: usize,
    pub restarts: usize,
    pub criterion_value: Option<f64>,
    pub monotonicity_violations: usize,
    pub failure: Option<String>,
    pub unmixing: Option<StoredMatrix>,
    pub components: Option<StoredMatrix>,
}

impl StoredResult {
    pub fn encode(r: &RunResult) -> Self {
        StoredResult {
            status: r.status,
            iterations: r.iterations,
            restarts: r.restarts,
            criterion_value: r.criterion_value,
            monotonicity_violations: r.monotonicity_violations,
            failure: r.failure.clone(),
            unmixing: r.unmixing.as_ref().map(StoredMatrix::encode),
            components: r.components.as_ref().map(StoredMatrix::encode),
        }
    }

    pub fn decode(&self, id: RunId, params: Parametrization) -> Result<RunResult> {
        Ok(RunResult {
            id,
            params,
            status: self.status,
            iterations: self.iterations,
            restarts: self.restarts,
            criterion_value: self.criterion_value,
            unmixing: self.unmixing.as_ref().map(StoredMatrix::decode).transpose()?,
            components: self.components.as_ref().map(StoredMatrix::decode).transpose()?,
            monotonicity_violations: self.monotonicity_violations,
            failure: self.failure.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRun {
    pub id: RunId,
    pub seq: u64,
    pub params: Parametrization,
    pub state: JobState,
    pub result: Option<StoredResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    pub format: String,
    pub version: u32,
    pub created_seq: u64,
    pub dataset: StoredDataset,
    pub state: SessionState,
    pub runs: Vec<StoredRun>,
}

/// Session files under a data directory; `None` keeps everything in memory.
#[derive(Debug, Clone)]
pub struct Store {
    root: Option<PathBuf>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store { root: None }
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let root: PathBuf = dir.into();
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Store { root: Some(root) })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn session_dir(&self, id: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join("sessions").join(id))
    }

    pub fn save(&self, file: &SessionFile) -> Result<()> {
        let Some(dir) = self.session_dir(&file.dataset.id) else {
            return Ok(());
        };
        fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!("{SESSION_FILE}.{}.tmp", TMP_COUNTER.fetch_add(1, Ordering::Relaxed)));
        let body = serde_json::to_vec(file).map_err(|e| ServiceError::Storage(e.to_string()))?;
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&body)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, dir.join(SESSION_FILE))?;
        Ok(())
    }

    pub fn remove(&self, id: &str) -> Result<()> {
        if let Some(dir) = self.session_dir(id) {
            if dir.exists() {
                fs::remove_dir_all(dir)?;
            }
        }
        Ok(())
    }

    /// Loads every session file, skipping (and logging) unreadable ones.
    pub fn load_all(&self) -> Result<Vec<SessionFile>> {
        let Some(root) = &self.root else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        for entry in fs::read_dir(root.join("sessions"))? {
            let path = entry?.path().join(SESSION_FILE);
            if !path.exists() {
                continue;
            }
            let parsed = fs::read(&path)
                .map_err(|e| e.to_string())
                .and_then(|bytes| serde_json::from_slice::<SessionFile>(&bytes).map_err(|e| e.to_string()));
            match parsed {
                Ok(file) if file.format == STORE_FORMAT && file.version == STORE_VERSION => out.push(file),
                Ok(file) => log::warn!("{}: unsupported store format {} v{}", path.display(), file.format, file.version),
                Err(e) => log::warn!("{}: {e}", path.display()),
            }
        }
        out.sort_by_key(|f| f.created_seq);
        Ok(out)
    }
}
