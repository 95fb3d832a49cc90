//! Dataset sessions, the run registry and the analytic views served over HTTP.
//!
//! A session is keyed by a digest of its dataset. Runs are append-only and
//! keyed by the deterministic run id of their parametrization, so a repeated
//! submission returns the existing run. Results are committed under a
//! per-session lock and written to the store before they become visible.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock, RwLock, Weak};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tbss_core::analytics::cluster::{cluster_components, quality_curve, Clustering};
use tbss_core::analytics::compare::{rank_distribution, rank_positions, slope_links, superimpose_distance, SlopeLink};
use tbss_core::analytics::dissim::{dist_cor_matrix, doi_matrix, ensemble_matrix, Dissimilarity};
use tbss_core::analytics::doi::{doi, DoiKind};
use tbss_core::analytics::histogram::{histogram_distance, lag_histogram, shared_histograms, LagHistogram};
use tbss_core::analytics::md_index::md_between_runs;
use tbss_core::analytics::mds::{project, ProjectionKind};
use tbss_core::analytics::ComponentRef;
use tbss_core::guidance::{
    guidance_table, lag_scatter, macf, seed_parametrizations, GuidanceRequest, GuidanceTable, MacfBox, MacfOrder,
};
use tbss_core::scatters::{diagonality_profile, DiagonalityProfile};
use tbss_core::series::{infer_granules, ingest, GranuleInfo, GranuleUnit, ParseOptions};
use tbss_core::solver::{invariant_report, solve_with_id, InvariantReport, RunId, SolveOptions};
use tbss_core::{format_lag_set, MultivariateSeries, Parametrization, RunResult};

use crate::cache::Coalescing;
use crate::error::{Result, ServiceError};
use crate::export::{component_names, export_bundle};
use crate::jobs::{Job, JobState, WorkerPool};
use crate::session::SessionState;
use crate::store::{SessionFile, Store, StoredDataset, StoredResult, StoredRun, STORE_FORMAT, STORE_VERSION};
use crate::window::{window, SeriesWindow, WindowQuery};

const CACHE_CAPACITY: usize = 64;

#[derive(Debug, Clone)]
pub struct Config {
    /// `None` keeps all state in memory.
    pub data_dir: Option<PathBuf>,
    pub workers: usize,
    /// Seed for the random seed parametrizations.
    pub seed: u64,
    pub solve: SolveOptions,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: None,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            seed: 0,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub id: RunId,
    /// Creation order across the workbench.
    pub seq: u64,
    pub params: Parametrization,
    pub state: JobState,
    pub result: Option<Arc<RunResult>>,
}

struct SessionInner {
    runs: Vec<RunRecord>,
    index: HashMap<RunId, usize>,
    state: SessionState,
}

type RunSetKey = Vec<RunId>;
type GuidanceKey = (Option<GranuleUnit>, Option<usize>, Option<RunId>);

struct Caches {
    dissim: Coalescing<(Dissimilarity, DoiKind, RunSetKey), DMatrix<f64>>,
    guidance: Coalescing<GuidanceKey, GuidanceTable>,
}

pub struct Session {
    pub id: String,
    pub name: String,
    pub dataset: Arc<MultivariateSeries>,
    pub digest: String,
    pub granules: GranuleInfo,
    created_seq: u64,
    inner: RwLock<SessionInner>,
    commit: Mutex<()>,
    caches: Caches,
    deleted: AtomicBool,
}

impl Session {
    fn read(&self) -> std::sync::RwLockReadGuard<'_, SessionInner> {
        self.inner.read().expect("session lock")
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, SessionInner> {
        self.inner.write().expect("session lock")
    }

    fn record(&self, run: &RunId) -> Result<RunRecord> {
        let inner = self.read();
        inner
            .index
            .get(run)
            .map(|&i| inner.runs[i].clone())
            .ok_or_else(|| ServiceError::UnknownRun(run.0.clone()))
    }

    fn snapshot(&self) -> SessionFile {
        let inner = self.read();
        SessionFile {
            format: STORE_FORMAT.into(),
            version: STORE_VERSION,
            created_seq: self.created_seq,
            dataset: StoredDataset::encode(&self.id, &self.name, &self.dataset),
            state: inner.state.clone(),
            runs: inner
                .runs
                .iter()
                .map(|r| StoredRun {
                    id: r.id.clone(),
                    seq: r.seq,
                    params: r.params.clone(),
                    state: r.state,
                    result: r.result.as_deref().map(StoredResult::encode),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranuleLag {
    pub unit: GranuleUnit,
    pub lag: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub name: String,
    pub digest: String,
    pub n: usize,
    pub p: usize,
    pub names: Vec<String>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub base_granule: GranuleUnit,
    pub weekday_only: bool,
    pub granules: Vec<GranuleLag>,
    pub runs: usize,
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: RunId,
    pub seq: u64,
    pub params: Parametrization,
    pub canonical: String,
    pub k1_expr: String,
    pub k2_expr: String,
    pub state: JobState,
    pub iterations: Option<usize>,
    pub restarts: Option<usize>,
    pub criterion_value: Option<f64>,
    pub failure: Option<String>,
    /// Table-view histograms, each on the context of its own largest lag.
    pub k1_histogram: Option<LagHistogram>,
    pub k2_histogram: Option<LagHistogram>,
    pub color: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDetail {
    #[serde(flatten)]
    pub summary: RunSummary,
    pub unmixing: Option<Vec<Vec<f64>>>,
    pub component_names: Vec<String>,
    /// DOI of each component under the session's active DOI kind.
    pub doi: Vec<f64>,
    /// DOI rank (0 = most interesting) of each component.
    pub ranks: Vec<usize>,
    pub invariants: Option<InvariantReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub run_id: RunId,
    pub state: JobState,
    /// False when the parametrization already existed.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistograms {
    pub run_id: RunId,
    pub k1: LagHistogram,
    pub k2: LagHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRequest {
    pub kind: ProjectionKind,
    pub dissimilarity: Dissimilarity,
    pub grid: usize,
    pub runs: Option<Vec<RunId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedItem {
    pub run_id: RunId,
    /// Component index; `None` for items that stand for a whole run.
    pub index: Option<usize>,
    pub raw: [f64; 2],
    pub cell: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionView {
    pub kind: ProjectionKind,
    pub dissimilarity: Dissimilarity,
    pub grid: usize,
    pub stress: f64,
    pub items: Vec<ProjectedItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub component: ComponentRef,
    /// DOI rank within its own ensemble.
    pub rank: usize,
    /// `1 - dist_cor` to the cluster medoid.
    pub opacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterView {
    pub medoid: ComponentRef,
    pub members: Vec<ClusterMember>,
    pub rank_histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringView {
    pub k: usize,
    pub quality: f64,
    pub cost: f64,
    pub iterations: usize,
    pub violations: usize,
    pub clusters: Vec<ClusterView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityPoint {
    pub k: usize,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdMatrixView {
    pub runs: Vec<RunId>,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorScale {
    /// W as estimated.
    #[default]
    Raw,
    /// `W diag(sd(x))`: the unmixing matrix for unit-variance inputs.
    Input,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorsView {
    pub run_id: RunId,
    pub scale: FactorScale,
    pub components: Vec<String>,
    pub variables: Vec<String>,
    /// One row per component.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedComponent {
    pub run_id: RunId,
    pub index: usize,
    #[serde(default = "one")]
    pub sign: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub jobs_started: u64,
    pub jobs_finished: u64,
    pub workers: usize,
}

struct Shared {
    store: Store,
    seed: u64,
    solve: SolveOptions,
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
    uploads: Mutex<()>,
    seq: AtomicU64,
    pool: OnceLock<WorkerPool>,
    events: (Mutex<u64>, Condvar),
    jobs_started: AtomicU64,
    jobs_finished: AtomicU64,
}

/// Converged runs, their component refs, the dist_cor matrix and the active DOI.
type ClusteringInput = (Vec<Arc<RunResult>>, Vec<ComponentRef>, Arc<DMatrix<f64>>, DoiKind);

/// Cheap to clone handle to the shared workbench state.
#[derive(Clone)]
pub struct Workbench {
    shared: Arc<Shared>,
}

fn dataset_id(digest: &str) -> String {
    format!("d{}", &digest[..12])
}

impl Workbench {
    /// Opens (or creates) the store, restores sessions and re-queues runs
    /// that had not finished.
    pub fn open(config: Config) -> Result<Self> {
        let store = match &config.data_dir {
            Some(dir) => Store::open(dir)?,
            None => Store::in_memory(),
        };
        let shared = Arc::new(Shared {
            store,
            seed: config.seed,
            solve: config.solve.clone(),
            sessions: RwLock::new(BTreeMap::new()),
            uploads: Mutex::new(()),
            seq: AtomicU64::new(0),
            pool: OnceLock::new(),
            events: (Mutex::new(0), Condvar::new()),
            jobs_started: AtomicU64::new(0),
            jobs_finished: AtomicU64::new(0),
        });
        let weak: Weak<Shared> = Arc::downgrade(&shared);
        let pool = WorkerPool::start(config.workers, move |job: Job| {
            if let Some(shared) = weak.upgrade() {
                Workbench { shared }.execute(job);
            }
        });
        let _ = shared.pool.set(pool);
        let bench = Workbench { shared };
        bench.restore()?;
        Ok(bench)
    }

    pub fn in_memory() -> Result<Self> {
        Workbench::open(Config::default())
    }

    fn restore(&self) -> Result<()> {
        let mut requeue = Vec::new();
        for file in self.shared.store.load_all()? {
            let dataset = file.dataset.decode()?;
            let mut runs = Vec::with_capacity(file.runs.len());
            for r in file.runs {
                let result = match r.result {
                    Some(res) => Some(Arc::new(res.decode(r.id.clone(), r.params.clone())?)),
                    None => None,
                };
                let state = if result.is_none() { JobState::Pending } else { r.state };
                if state == JobState::Pending {
                    requeue.push(Job { dataset: file.dataset.id.clone(), run: r.id.clone() });
                }
                self.bump_seq(r.seq);
                runs.push(RunRecord { id: r.id, seq: r.seq, params: r.params, state, result });
            }
            self.bump_seq(file.created_seq);
            let session = self.new_session(file.dataset.id.clone(), file.dataset.name.clone(), dataset, file.created_seq);
            {
                let mut inner = session.write();
                inner.index = runs.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
                inner.runs = runs;
                inner.state = file.state;
            }
            self.shared.sessions.write().expect("sessions lock").insert(session.id.clone(), session);
        }
        for job in requeue {
            self.pool().submit(job);
        }
        Ok(())
    }

    fn bump_seq(&self, seen: u64) {
        self.shared.seq.fetch_max(seen + 1, Ordering::SeqCst);
    }

    fn next_seq(&self) -> u64 {
        self.shared.seq.fetch_add(1, Ordering::SeqCst)
    }

    fn pool(&self) -> &WorkerPool {
        self.shared.pool.get().expect("pool started in open")
    }

    fn new_session(&self, id: String, name: String, dataset: MultivariateSeries, created_seq: u64) -> Arc<Session> {
        let digest = dataset.digest();
        let granules = infer_granules(dataset.index());
        Arc::new(Session {
            id,
            name,
            dataset: Arc::new(dataset),
            digest,
            granules,
            created_seq,
            inner: RwLock::new(SessionInner { runs: Vec::new(), index: HashMap::new(), state: SessionState::default() }),
            commit: Mutex::new(()),
            caches: Caches {
                dissim: Coalescing::new(CACHE_CAPACITY),
                guidance: Coalescing::new(CACHE_CAPACITY),
            },
            deleted: AtomicBool::new(false),
        })
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>> {
        self.shared
            .sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownDataset(id.to_string()))
    }

    fn notify(&self) {
        let (lock, cv) = &self.shared.events;
        *lock.lock().expect("event lock") += 1;
        cv.notify_all();
    }

    // ---- datasets -------------------------------------------------------

    /// Ingests a delimited table. A dataset that is already loaded is
    /// returned as is (`created == false`); a new one gets its five seed runs.
    pub fn upload(&self, name: &str, raw: &[u8], options: &ParseOptions) -> Result<(DatasetSummary, bool)> {
        let dataset = ingest(raw, options)?;
        self.add_dataset(name, dataset)
    }

    pub fn add_dataset(&self, name: &str, dataset: MultivariateSeries) -> Result<(DatasetSummary, bool)> {
        let _serial = self.shared.uploads.lock().expect("upload lock");
        let id = dataset_id(&dataset.digest());
        if let Ok(existing) = self.session(&id) {
            return Ok((self.summary(&existing), false));
        }
        let seeds = seed_parametrizations(&dataset, self.shared.seed)?;
        let session = self.new_session(id.clone(), name.to_string(), dataset, self.next_seq());
        let mut jobs = Vec::new();
        {
            let _commit = session.commit.lock().expect("commit lock");
            let mut inner = session.write();
            for mut params in seeds {
                params.validate(session.dataset.n())?;
                let mut run_id = params.run_id(&session.digest);
                // A preset that coincides with an earlier seed (e.g. no
                // calendar peak to add) is told apart by an explicit seed.
                let mut tag = 1;
                while inner.index.contains_key(&run_id) {
                    params.seed = Some(tag);
                    run_id = params.run_id(&session.digest);
                    tag += 1;
                }
                let seq = self.next_seq();
                let at = inner.runs.len();
                inner.index.insert(run_id.clone(), at);
                inner.runs.push(RunRecord { id: run_id.clone(), seq, params, state: JobState::Pending, result: None });
                jobs.push(Job { dataset: id.clone(), run: run_id });
            }
        }
        self.shared.store.save(&session.snapshot())?;
        self.shared.sessions.write().expect("sessions lock").insert(id, session.clone());
        for job in jobs {
            self.pool().submit(job);
        }
        self.notify();
        Ok((self.summary(&session), true))
    }

    fn summary(&self, s: &Session) -> DatasetSummary {
        let inner = s.read();
        let dates = s.dataset.index().dates();
        DatasetSummary {
            id: s.id.clone(),
            name: s.name.clone(),
            digest: s.digest.clone(),
            n: s.dataset.n(),
            p: s.dataset.p(),
            names: s.dataset.names().to_vec(),
            start: dates[0],
            end: dates[dates.len() - 1],
            base_granule: s.granules.base,
            weekday_only: s.granules.weekday_only,
            granules: s.granules.larger.iter().map(|g| GranuleLag { unit: g.unit, lag: g.lag }).collect(),
            runs: inner.runs.len(),
            pending: inner.runs.iter().filter(|r| !r.state.is_terminal()).count(),
        }
    }

    pub fn datasets(&self) -> Vec<DatasetSummary> {
        let sessions: Vec<Arc<Session>> = self.shared.sessions.read().expect("sessions lock").values().cloned().collect();
        let mut out: Vec<(u64, DatasetSummary)> = sessions.iter().map(|s| (s.created_seq, self.summary(s))).collect();
        out.sort_by_key(|(seq, _)| *seq);
        out.into_iter().map(|(_, s)| s).collect()
    }

    pub fn dataset(&self, id: &str) -> Result<DatasetSummary> {
        let session = self.session(id)?;
        Ok(self.summary(&session))
    }

    /// Removes a dataset with all its runs and state.
    pub fn delete_dataset(&self, id: &str) -> Result<()> {
        let session = self
            .shared
            .sessions
            .write()
            .expect("sessions lock")
            .remove(id)
            .ok_or_else(|| ServiceError::UnknownDataset(id.to_string()))?;
        let _commit = session.commit.lock().expect("commit lock");
        session.deleted.store(true, Ordering::SeqCst);
        self.shared.store.remove(id)?;
        self.notify();
        Ok(())
    }

    // ---- runs -----------------------------------------------------------

    /// Registers a parametrization and queues its job. Idempotent: a known
    /// parametrization returns the existing run without a new job.
    pub fn submit_run(&self, dataset: &str, params: Parametrization) -> Result<SubmitOutcome> {
        let session = self.session(dataset)?;
        params.validate(session.dataset.n())?;
        let run_id = params.run_id(&session.digest);
        let created = {
            let _commit = session.commit.lock().expect("commit lock");
            if session.deleted.load(Ordering::SeqCst) {
                return Err(ServiceError::UnknownDataset(dataset.to_string()));
            }
            let mut inner = session.write();
            if let Some(&i) = inner.index.get(&run_id) {
                return Ok(SubmitOutcome { run_id, state: inner.runs[i].state, created: false });
            }
            let seq = self.next_seq();
            let at = inner.runs.len();
                inner.index.insert(run_id.clone(), at);
            inner.runs.push(RunRecord { id: run_id.clone(), seq, params, state: JobState::Pending, result: None });
            drop(inner);
            self.shared.store.save(&session.snapshot())?;
            true
        };
        self.pool().submit(Job { dataset: dataset.to_string(), run: run_id.clone() });
        self.notify();
        Ok(SubmitOutcome { run_id, state: JobState::Pending, created })
    }

    fn set_state(&self, session: &Session, run: &RunId, state: JobState) -> bool {
        let mut inner = session.write();
        match inner.index.get(run).copied() {
            Some(i) if inner.runs[i].state == JobState::Pending => {
                inner.runs[i].state = state;
                true
            }
            _ => false,
        }
    }

    /// Worker entry point.
    fn execute(&self, job: Job) {
        let Ok(session) = self.session(&job.dataset) else {
            return;
        };
        if !self.set_state(&session, &job.run, JobState::Running) {
            return;
        }
        self.shared.jobs_started.fetch_add(1, Ordering::SeqCst);
        self.notify();
        let params = match session.record(&job.run) {
            Ok(r) => r.params,
            Err(_) => return,
        };
        let result = match solve_with_id(&session.dataset, &params, &self.shared.solve, job.run.clone()) {
            Ok(r) => r,
            Err(e) => RunResult::failed(job.run.clone(), params, e.to_string()),
        };
        let state = if result.is_converged() { JobState::Converged } else { JobState::Failed };
        {
            let _commit = session.commit.lock().expect("commit lock");
            if !session.deleted.load(Ordering::SeqCst) {
                {
                    let mut inner = session.write();
                    if let Some(&i) = inner.index.get(&job.run) {
                        inner.runs[i].result = Some(Arc::new(result));
                        inner.runs[i].state = state;
                    }
                }
                if let Err(e) = self.shared.store.save(&session.snapshot()) {
                    log::error!("persisting run {} failed: {e}", job.run);
                }
            }
        }
        self.shared.jobs_finished.fetch_add(1, Ordering::SeqCst);
        self.notify();
    }

    fn run_summary(&self, r: &RunRecord, state: &SessionState) -> RunSummary {
        let result = r.result.as_deref();
        RunSummary {
            id: r.id.clone(),
            seq: r.seq,
            canonical: r.params.canonical(),
            k1_expr: format_lag_set(&r.params.k1),
            k2_expr: format_lag_set(&r.params.k2),
            params: r.params.clone(),
            state: r.state,
            iterations: result.map(|x| x.iterations),
            restarts: result.map(|x| x.restarts),
            criterion_value: result.and_then(|x| x.criterion_value),
            failure: result.and_then(|x| x.failure.clone()),
            k1_histogram: r.params.k1.max().map(|m| lag_histogram(&r.params.k1, m)),
            k2_histogram: r.params.k2.max().map(|m| lag_histogram(&r.params.k2, m)),
            color: state.color_of(&r.id),
        }
    }

    /// Runs of a dataset in creation order.
    pub fn runs(&self, dataset: &str) -> Result<Vec<RunSummary>> {
        let session = self.session(dataset)?;
        let inner = session.read();
        Ok(inner.runs.iter().map(|r| self.run_summary(r, &inner.state)).collect())
    }

    pub fn run(&self, dataset: &str, run: &RunId) -> Result<RunDetail> {
        let session = self.session(dataset)?;
        let record = session.record(run)?;
        let state = session.read().state.clone();
        let summary = self.run_summary(&record, &state);
        let result = record.result.as_deref().filter(|r| r.is_converged());
        let (unmixing, names, dois, ranks, invariants) = match result {
            Some(r) => {
                let w = r.unmixing.as_ref().expect("converged run has W");
                let c = r.components.as_ref().expect("converged run has components");
                (
                    Some(w.row_iter().map(|row| row.iter().copied().collect()).collect()),
                    component_names(w.nrows()),
                    c.column_iter().map(|col| doi(col.as_slice(), state.doi_kind)).collect(),
                    rank_positions(r, state.doi_kind)?,
                    invariant_report(r, &session.dataset),
                )
            }
            None => (None, Vec::new(), Vec::new(), Vec::new(), None),
        };
        Ok(RunDetail { summary, unmixing, component_names: names, doi: dois, ranks, invariants })
    }

    pub fn run_state(&self, dataset: &str, run: &RunId) -> Result<JobState> {
        Ok(self.session(dataset)?.record(run)?.state)
    }

    /// Blocks until the run reaches a terminal state or the timeout passes.
    pub fn wait_for_run(&self, dataset: &str, run: &RunId, timeout: Duration) -> Result<JobState> {
        let deadline = Instant::now() + timeout;
        let (lock, cv) = &self.shared.events;
        let mut guard = lock.lock().expect("event lock");
        loop {
            let state = self.run_state(dataset, run)?;
            let now = Instant::now();
            if state.is_terminal() || now >= deadline {
                return Ok(state);
            }
            guard = cv.wait_timeout(guard, deadline - now).expect("event lock").0;
        }
    }

    /// Blocks until no run of any dataset is pending or running.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let (lock, cv) = &self.shared.events;
        let mut guard = lock.lock().expect("event lock");
        loop {
            let busy = self.datasets().iter().any(|d| d.pending > 0);
            let now = Instant::now();
            if !busy {
                return true;
            }
            if now >= deadline {
                return false;
            }
            guard = cv.wait_timeout(guard, deadline - now).expect("event lock").0;
        }
    }

    pub fn stats(&self) -> Stats {
        Stats {
            jobs_started: self.shared.jobs_started.load(Ordering::SeqCst),
            jobs_finished: self.shared.jobs_finished.load(Ordering::SeqCst),
            workers: self.pool().workers(),
        }
    }

    pub fn run_result(&self, dataset: &str, run: &RunId) -> Result<Arc<RunResult>> {
        let record = self.session(dataset)?.record(run)?;
        record.result.ok_or_else(|| ServiceError::RunNotConverged(run.0.clone()))
    }

    pub fn export_run(&self, dataset: &str, run: &RunId) -> Result<Vec<u8>> {
        let session = self.session(dataset)?;
        let record = session.record(run)?;
        let doi_kind = session.read().state.doi_kind;
        match record.result {
            Some(result) => export_bundle(&session.id, &session.dataset, &result, doi_kind),
            None => {
                // Unfinished runs export their parameters, like failed ones.
                let placeholder = RunResult::failed(record.id, record.params, "not finished");
                export_bundle(&session.id, &session.dataset, &placeholder, doi_kind)
            }
        }
    }

    /// Converged runs for a view: the listed ones (which must exist and have
    /// converged) or all converged runs in creation order.
    fn converged(&self, session: &Session, runs: Option<&[RunId]>) -> Result<Vec<Arc<RunResult>>> {
        match runs {
            Some(ids) => ids
                .iter()
                .map(|id| {
                    let record = session.record(id)?;
                    record
                        .result
                        .filter(|r| r.is_converged())
                        .ok_or_else(|| ServiceError::RunNotConverged(id.0.clone()))
                })
                .collect(),
            None => Ok(session
                .read()
                .runs
                .iter()
                .filter_map(|r| r.result.clone())
                .filter(|r| r.is_converged())
                .collect()),
        }
    }

    fn records(&self, session: &Session, runs: Option<&[RunId]>) -> Result<Vec<RunRecord>> {
        match runs {
            Some(ids) => ids.iter().map(|id| session.record(id)).collect(),
            None => Ok(session.read().runs.clone()),
        }
    }

    // ---- series views ---------------------------------------------------

    pub fn series_window(&self, dataset: &str, query: &WindowQuery) -> Result<SeriesWindow> {
        let session = self.session(dataset)?;
        let x = &session.dataset;
        let columns: Vec<Vec<f64>> = (0..x.p()).map(|j| x.column(j)).collect();
        Ok(window(
            x.index().dates(),
            query,
            columns.iter().zip(x.names()).enumerate().map(|(j, (c, name))| (None, j, name.clone(), c.as_slice())),
        ))
    }

    pub fn components_window(&self, dataset: &str, runs: Option<&[RunId]>, query: &WindowQuery) -> Result<SeriesWindow> {
        let session = self.session(dataset)?;
        let results = self.converged(&session, runs)?;
        let mut columns = Vec::new();
        for r in &results {
            let c = r.components.as_ref().expect("converged run has components");
            for (i, name) in component_names(c.ncols()).into_iter().enumerate() {
                columns.push((Some(r.id.clone()), i, name, c.column(i)));
            }
        }
        Ok(window(
            session.dataset.index().dates(),
            query,
            columns.iter().map(|(id, i, name, col)| (id.clone(), *i, name.clone(), col.as_slice())),
        ))
    }

    // ---- comparison views -----------------------------------------------

    /// k1 and k2 histograms of each run, each on a context shared by all
    /// listed runs.
    pub fn lag_histograms(&self, dataset: &str, runs: Option<&[RunId]>) -> Result<Vec<RunHistograms>> {
        let session = self.session(dataset)?;
        let records = self.records(&session, runs)?;
        let k1: Vec<_> = shared_histograms(&records.iter().map(|r| &r.params.k1).collect::<Vec<_>>());
        let k2: Vec<_> = shared_histograms(&records.iter().map(|r| &r.params.k2).collect::<Vec<_>>());
        Ok(records
            .iter()
            .zip(k1.into_iter().zip(k2))
            .map(|(r, (k1, k2))| RunHistograms { run_id: r.id.clone(), k1, k2 })
            .collect())
    }

    fn component_columns(results: &[Arc<RunResult>]) -> (Vec<ComponentRef>, Vec<Vec<f64>>) {
        let mut refs = Vec::new();
        let mut cols = Vec::new();
        for r in results {
            let c = r.components.as_ref().expect("converged run has components");
            for i in 0..c.ncols() {
                refs.push(ComponentRef::new(r.id.clone(), i));
                cols.push(c.column(i).iter().copied().collect());
            }
        }
        (refs, cols)
    }

    /// Dissimilarity matrix over the components (or ensembles) of `results`,
    /// cached per run set and DOI kind.
    fn dissimilarity(
        &self,
        session: &Session,
        results: &[Arc<RunResult>],
        kind: Dissimilarity,
        doi_kind: DoiKind,
    ) -> Result<Arc<DMatrix<f64>>> {
        let key = (kind, doi_kind, results.iter().map(|r| r.id.clone()).collect::<Vec<_>>());
        session.caches.dissim.get_or_try(&key, || -> Result<DMatrix<f64>> {
            let (_, cols) = Self::component_columns(results);
            Ok(match kind {
                Dissimilarity::Correlation => dist_cor_matrix(&cols)?,
                Dissimilarity::Doi => doi_matrix(&cols, doi_kind),
                Dissimilarity::Ensemble => {
                    let ensembles: Vec<Vec<Vec<f64>>> = results
                        .iter()
                        .map(|r| {
                            let c = r.components.as_ref().expect("converged run has components");
                            c.column_iter().map(|col| col.iter().copied().collect()).collect()
                        })
                        .collect();
                    ensemble_matrix(&ensembles)?
                }
            })
        })
    }

    pub fn projection(&self, dataset: &str, request: &ProjectionRequest) -> Result<ProjectionView> {
        let session = self.session(dataset)?;
        let runs = request.runs.as_deref();
        let (items, d): (Vec<(RunId, Option<usize>)>, DMatrix<f64>) = match request.kind {
            ProjectionKind::LagSet => {
                let records = self.records(&session, runs)?;
                let k1 = shared_histograms(&records.iter().map(|r| &r.params.k1).collect::<Vec<_>>());
                let k2 = shared_histograms(&records.iter().map(|r| &r.params.k2).collect::<Vec<_>>());
                let m = records.len();
                let mut d = DMatrix::zeros(m, m);
                for i in 0..m {
                    for j in (i + 1)..m {
                        let v = (histogram_distance(&k1[i], &k1[j])? + histogram_distance(&k2[i], &k2[j])?) as f64;
                        d[(i, j)] = v;
                        d[(j, i)] = v;
                    }
                }
                (records.into_iter().map(|r| (r.id, None)).collect(), d)
            }
            ProjectionKind::Component => {
                let results = self.converged(&session, runs)?;
                let doi_kind = session.read().state.doi_kind;
                let d = self.dissimilarity(&session, &results, request.dissimilarity, doi_kind)?;
                let items = if request.dissimilarity == Dissimilarity::Ensemble {
                    results.iter().map(|r| (r.id.clone(), None)).collect()
                } else {
                    Self::component_columns(&results).0.into_iter().map(|c| (c.run_id, Some(c.index))).collect()
                };
                (items, (*d).clone())
            }
        };
        let projection = project(&d, request.grid, request.kind)?;
        Ok(ProjectionView {
            kind: request.kind,
            dissimilarity: request.dissimilarity,
            grid: request.grid,
            stress: projection.stress,
            items: items
                .into_iter()
                .zip(projection.points)
                .map(|((run_id, index), p)| ProjectedItem { run_id, index, raw: p.raw, cell: p.cell })
                .collect(),
        })
    }

    fn clustering_input(
        &self,
        session: &Session,
        runs: Option<&[RunId]>,
    ) -> Result<ClusteringInput> {
        let results = self.converged(session, runs)?;
        let doi_kind = session.read().state.doi_kind;
        let d = self.dissimilarity(session, &results, Dissimilarity::Correlation, doi_kind)?;
        let (refs, _) = Self::component_columns(&results);
        Ok((results, refs, d, doi_kind))
    }

    pub fn clustering(&self, dataset: &str, k: usize, runs: Option<&[RunId]>) -> Result<ClusteringView> {
        let session = self.session(dataset)?;
        let (results, refs, d, doi_kind) = self.clustering_input(&session, runs)?;
        let clustering: Clustering = cluster_components(&refs, &d, k)?;
        let mut ranks = Vec::with_capacity(refs.len());
        for r in &results {
            ranks.extend(rank_positions(r, doi_kind)?);
        }
        let clusters = (0..k)
            .map(|c| -> Result<ClusterView> {
                let dist = rank_distribution(&clustering, c, &ranks, &d)?;
                let members = clustering
                    .members(c)
                    .into_iter()
                    .zip(dist.opacity)
                    .map(|(i, (component, opacity))| ClusterMember { component, rank: ranks[i], opacity })
                    .collect();
                Ok(ClusterView { medoid: clustering.medoid_ref(c).clone(), members, rank_histogram: dist.histogram })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClusteringView {
            k,
            quality: clustering.quality,
            cost: clustering.cost,
            iterations: clustering.iterations,
            violations: clustering.violations(),
            clusters,
        })
    }

    /// Silhouette per k; the default range runs from the largest ensemble
    /// size to one below the component count.
    pub fn quality_curve(&self, dataset: &str, ks: Option<(usize, usize)>, runs: Option<&[RunId]>) -> Result<Vec<QualityPoint>> {
        let session = self.session(dataset)?;
        let (results, refs, d, _) = self.clustering_input(&session, runs)?;
        let p = results.iter().map(|r| r.p()).max().unwrap_or(0).max(2);
        let (lo, hi) = ks.unwrap_or((p, refs.len().saturating_sub(1)));
        if lo > hi {
            return Err(ServiceError::InvalidRequest(format!("empty k range {lo}..={hi}")));
        }
        let ks: Vec<usize> = (lo..=hi).collect();
        Ok(quality_curve(&refs, &d, &ks)?.into_iter().map(|(k, quality)| QualityPoint { k, quality }).collect())
    }

    /// Symmetric MD-index matrix between converged runs, zero diagonal.
    pub fn md_matrix(&self, dataset: &str, runs: Option<&[RunId]>) -> Result<MdMatrixView> {
        let session = self.session(dataset)?;
        let results = self.converged(&session, runs)?;
        let m = results.len();
        let mut matrix = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in (i + 1)..m {
                let v = md_between_runs(
                    results[i].unmixing.as_ref().expect("converged"),
                    results[j].unmixing.as_ref().expect("converged"),
                )?;
                matrix[i][j] = v;
                matrix[j][i] = v;
            }
        }
        Ok(MdMatrixView { runs: results.iter().map(|r| r.id.clone()).collect(), matrix })
    }

    pub fn factors(&self, dataset: &str, run: &RunId, scale: FactorScale) -> Result<FactorsView> {
        let session = self.session(dataset)?;
        let result = self.converged(&session, Some(std::slice::from_ref(run)))?.remove(0);
        let w = result.unmixing.as_ref().expect("converged");
        let x = &session.dataset;
        let sd: Vec<f64> = (0..x.p())
            .map(|j| {
                let c = x.values().column(j);
                let mean = c.sum() / c.len() as f64;
                (c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c.len() as f64).sqrt()
            })
            .collect();
        let values = (0..w.nrows())
            .map(|i| {
                (0..w.ncols())
                    .map(|j| match scale {
                        FactorScale::Raw => w[(i, j)],
                        FactorScale::Input => w[(i, j)] * sd[j],
                    })
                    .collect()
            })
            .collect();
        Ok(FactorsView {
            run_id: run.clone(),
            scale,
            components: component_names(w.nrows()),
            variables: x.names().to_vec(),
            values,
        })
    }

    pub fn diagonality(&self, dataset: &str, run: &RunId, lags: Option<&[usize]>) -> Result<DiagonalityProfile> {
        let session = self.session(dataset)?;
        let result = self.converged(&session, Some(std::slice::from_ref(run)))?.remove(0);
        Ok(diagonality_profile(&result, &session.dataset, lags)?)
    }

    pub fn slope_links(&self, dataset: &str, left: &RunId, right: &RunId, threshold: f64) -> Result<Vec<SlopeLink>> {
        let session = self.session(dataset)?;
        let results = self.converged(&session, Some(&[left.clone(), right.clone()]))?;
        let cols = |r: &RunResult| -> Vec<Vec<f64>> {
            let c = r.components.as_ref().expect("converged");
            c.column_iter().map(|col| col.iter().copied().collect()).collect()
        };
        Ok(slope_links(&cols(&results[0]), &cols(&results[1]), threshold)?)
    }

    pub fn superimpose(&self, dataset: &str, items: &[SignedComponent]) -> Result<f64> {
        let session = self.session(dataset)?;
        let mut comps = Vec::with_capacity(items.len());
        for item in items {
            let r = self.converged(&session, Some(std::slice::from_ref(&item.run_id)))?.remove(0);
            let c = r
                .component(item.index)
                .filter(|_| item.index < r.p())
                .ok_or_else(|| ServiceError::InvalidRequest(format!("run {} has no component {}", item.run_id, item.index)))?;
            comps.push(c);
        }
        let signs: Vec<f64> = items.iter().map(|i| i.sign).collect();
        Ok(superimpose_distance(&comps, &signs)?)
    }

    // ---- guidance -------------------------------------------------------

    /// Guidance table, computed once per (granule, max lag, reference run).
    pub fn guidance(&self, dataset: &str, request: &GuidanceRequest, reference: Option<&RunId>) -> Result<Arc<GuidanceTable>> {
        let session = self.session(dataset)?;
        let reference_run = match reference {
            Some(id) => Some(
                session
                    .record(id)?
                    .result
                    .filter(|r| r.is_converged())
                    .ok_or_else(|| ServiceError::RunNotConverged(id.0.clone()))?,
            ),
            None => None,
        };
        let key = (request.granule, request.max_lag, reference.cloned());
        session
            .caches
            .guidance
            .get_or_try(&key, || Ok(guidance_table(&session.dataset, request, reference_run.as_deref())?))
    }

    pub fn macf(&self, dataset: &str, lags: &[usize], order: MacfOrder) -> Result<Vec<MacfBox>> {
        let session = self.session(dataset)?;
        Ok(macf(&session.dataset, lags, order)?)
    }

    pub fn lag_scatter(&self, dataset: &str, variable: usize, lag: usize) -> Result<Vec<[f64; 2]>> {
        let session = self.session(dataset)?;
        Ok(lag_scatter(&session.dataset, variable, lag)?)
    }

    // ---- session state --------------------------------------------------

    pub fn session_state(&self, dataset: &str) -> Result<SessionState> {
        Ok(self.session(dataset)?.read().state.clone())
    }

    fn update_state<T>(&self, dataset: &str, f: impl FnOnce(&Session, &mut SessionState) -> Result<T>) -> Result<T> {
        let session = self.session(dataset)?;
        let _commit = session.commit.lock().expect("commit lock");
        // The commit lock serializes updates, so nothing slips in between
        // reading the state and writing it back.
        let mut state = session.read().state.clone();
        let out = f(&session, &mut state)?;
        session.write().state = state;
        self.shared.store.save(&session.snapshot())?;
        Ok(out)
    }

    /// Binds the next free color to a run.
    pub fn select(&self, dataset: &str, run: &RunId) -> Result<usize> {
        self.update_state(dataset, |session, state| {
            session.record(run)?;
            state.select(run.clone())
        })
    }

    pub fn deselect(&self, dataset: &str, run: &RunId) -> Result<bool> {
        self.update_state(dataset, |_, state| Ok(state.deselect(run)))
    }

    pub fn set_color_order(&self, dataset: &str, order: Vec<usize>) -> Result<SessionState> {
        self.update_state(dataset, |_, state| {
            state.set_color_order(order)?;
            Ok(state.clone())
        })
    }

    pub fn set_doi_kind(&self, dataset: &str, kind: DoiKind) -> Result<SessionState> {
        self.update_state(dataset, |_, state| {
            state.set_doi_kind(kind);
            Ok(state.clone())
        })
    }

    /// Changes whenever the dataset, its run set (or run states) or the
    /// session state change; used as the ETag of dataset-scoped reads.
    pub fn version_tag(&self, dataset: &str) -> Result<String> {
        let session = self.session(dataset)?;
        let inner = session.read();
        let mut h = Sha256::new();
        h.update(session.digest.as_bytes());
        for r in &inner.runs {
            h.update(r.id.0.as_bytes());
            h.update([r.state as u8]);
        }
        h.update(inner.state.version.to_le_bytes());
        let digest = h.finalize();
        Ok(digest[..12].iter().map(|b| format!("{b:02x}")).collect())
    }
}
