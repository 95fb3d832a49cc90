//! Portable run bundle (tar archive).
//!
//! Format `tbss-run-export` version 1:
//!
//! | file               | content                                                    |
//! |--------------------|------------------------------------------------------------|
//! | `params.json`      | format tag, version, ids, status, parametrization          |
//! | `unmixing.csv`     | W, one row per component (`c01`, ...), one column per input |
//! | `components.csv`   | `date` column plus one column per component                |
//! | `diagnostics.json` | iterations, restarts, criterion, DOI, model invariants      |
//!
//! Failed runs carry `params.json` only. Numbers are written in the shortest
//! form that parses back to the same double.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use tbss_core::analytics::doi::{doi, DoiKind};
use tbss_core::series::write_table;
use tbss_core::solver::{invariant_report, InvariantReport, RunStatus};
use tbss_core::{format_lag_set, MultivariateSeries, Parametrization, RunResult};

use crate::error::{Result, ServiceError};

pub const EXPORT_FORMAT: &str = "tbss-run-export";
pub const EXPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportParams {
    pub format: String,
    pub version: u32,
    pub dataset_id: String,
    pub run_id: String,
    pub status: RunStatus,
    pub params: Parametrization,
    /// Lag sets in the lag expression grammar.
    pub k1_expr: String,
    pub k2_expr: String,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportDiagnostics {
    pub iterations: usize,
    pub restarts: usize,
    pub criterion_value: Option<f64>,
    pub monotonicity_violations: usize,
    pub doi_kind: DoiKind,
    pub doi: Vec<f64>,
    pub invariants: Option<InvariantReport>,
}

/// `c01`, `c02`, ... padded to the width of `p`.
pub fn component_names(p: usize) -> Vec<String> {
    let width = p.to_string().len().max(2);
    (1..=p).map(|i| format!("c{i:0width$}")).collect()
}

fn append(builder: &mut tar::Builder<Vec<u8>>, name: &str, body: &[u8]) -> Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(body.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_cksum();
    builder.append_data(&mut header, name, body)?;
    Ok(())
}

fn json(value: &impl Serialize) -> Result<Vec<u8>> {
    serde_json::to_vec_pretty(value).map_err(|e| ServiceError::Storage(e.to_string()))
}

pub fn export_bundle(dataset_id: &str, x: &MultivariateSeries, run: &RunResult, doi_kind: DoiKind) -> Result<Vec<u8>> {
    let mut builder = tar::Builder::new(Vec::new());
    let params = ExportParams {
        format: EXPORT_FORMAT.into(),
        version: EXPORT_VERSION,
        dataset_id: dataset_id.into(),
        run_id: run.id.0.clone(),
        status: run.status,
        params: run.params.clone(),
        k1_expr: format_lag_set(&run.params.k1),
        k2_expr: format_lag_set(&run.params.k2),
        failure: run.failure.clone(),
    };
    append(&mut builder, "params.json", &json(&params)?)?;

    if let (true, Some(w), Some(c)) = (run.is_converged(), &run.unmixing, &run.components) {
        let names = component_names(w.nrows());
        let mut unmixing = String::from("component");
        for v in x.names() {
            unmixing.push(',');
            unmixing.push_str(v);
        }
        unmixing.push('\n');
        for (i, name) in names.iter().enumerate() {
            unmixing.push_str(name);
            for j in 0..w.ncols() {
                unmixing.push_str(&format!(",{:?}", w[(i, j)]));
            }
            unmixing.push('\n');
        }
        append(&mut builder, "unmixing.csv", unmixing.as_bytes())?;
        append(&mut builder, "components.csv", write_table(x.index().dates(), &names, c, b',').as_bytes())?;
        let diagnostics = ExportDiagnostics {
            iterations: run.iterations,
            restarts: run.restarts,
            criterion_value: run.criterion_value,
            monotonicity_violations: run.monotonicity_violations,
            doi_kind,
            doi: c.column_iter().map(|col| doi(col.as_slice(), doi_kind)).collect(),
            invariants: invariant_report(run, x),
        };
        append(&mut builder, "diagnostics.json", &json(&diagnostics)?)?;
    }
    Ok(builder.into_inner()?)
}

/// Reads a bundle back into `file name -> bytes`.
pub fn read_bundle(bytes: &[u8]) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut archive = tar::Archive::new(bytes);
    let mut out = BTreeMap::new();
    for entry in archive.entries()? {
        let mut entry = entry?;
        let name = entry.path()?.to_string_lossy().into_owned();
        let mut body = Vec::new();
        entry.read_to_end(&mut body)?;
        out.insert(name, body);
    }
    Ok(out)
}
