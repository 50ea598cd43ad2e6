// SPDX-License-Identifier: Apache-2.0

//! The long-running service: stores, workers, the poll loop, benchmark
//! validation and the read-side queries behind the HTTP API.
//!
//! Layout of `data_dir`:
//!
//! ```text
//! catalog.jsonl              projects and venues
//! jobs.jsonl                 job journal
//! ledger/projects/<id>/runs.jsonl
//! registry/projects/<id>/registry.jsonl, registry/blobs/
//! manifests/<digest>.json    every manifest a run used
//! transcripts/               content-addressed stage and cell logs
//! cache/                     dependency artifacts
//! mirrors/<id>/              clones of remote sources
//! workspaces/<id>/           retained workspaces (cleared at startup)
//! ```

use std::collections::{BTreeMap, VecDeque};
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::catalog::{Catalog, Registration, CATALOG_LOG_NAME};
use super::config::{ConfigError, ServiceConfig};
use super::runner::{self, LoadedManifest, ManifestSource, RunRequest};
use super::ApiError;
use crate::harness::{run_matrix, BenchmarkCase};
use crate::ids::{new_id, CommitId, ProjectId};
use crate::ingest::{DependencyIndex, Ingest, Job, Project, PushEvent, TriggerEvent};
use crate::ledger::query::{self, BehaviorDiff, History};
use crate::ledger::{Ledger, RunRecord};
use crate::pipeline::deps::DependencyCache;
use crate::pipeline::fetch::SourceLocator;
use crate::pipeline::manifest::Manifest;
use crate::pipeline::workspace::{Phase, Workspace};
use crate::pipeline::{PipelineContext, SourceInput, TranscriptStore};
use crate::registry::{
    hard_models, Benchmark, HardModel, PublicationLink, Registry, SubmissionMeta, Tombstone,
    ValidationReport,
};
use crate::report::{apply_policy, PolicyMode, ReviewAnnotation, VenuePolicy};
use crate::report::{grade, rank, render_badge, Badge, RankedEntry, TrafficLight};

/// Longest a submission waits for the project's running job.
const INLINE_WAIT: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot open {what}: {message}")]
    Store { what: &'static str, message: String },
    #[error("cannot listen on {address}: {source}")]
    Bind { address: String, source: std::io::Error },
}

/// A workspace kept after its run, for post-mortem or benchmark validation.
struct Retained {
    run_id: String,
    manifest: Option<Manifest>,
    /// Taken out while a validation uses it.
    workspace: Option<Workspace>,
}

impl Retained {
    fn destroy(&mut self) {
        if let Some(ws) = self.workspace.as_mut() {
            ws.destroy();
        }
    }
}

struct Inner {
    config: ServiceConfig,
    service_env: BTreeMap<String, String>,
    catalog: Catalog,
    ingest: Ingest,
    ledger: Ledger,
    registry: Registry,
    transcripts: TranscriptStore,
    cache: DependencyCache,
    /// Newest first, per project.
    retained: Mutex<BTreeMap<ProjectId, VecDeque<Retained>>>,
    stopping: AtomicBool,
}

impl Drop for Inner {
    fn drop(&mut self) {
        let retained = self.retained.get_mut().unwrap_or_else(|p| p.into_inner());
        for r in retained.values_mut().flat_map(|q| q.iter_mut()) {
            r.destroy();
        }
    }
}

/// Cheap-to-clone handle on the running service.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

/// The newest run at a commit, graded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunView {
    pub run: RunRecord,
    pub grade: TrafficLight,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectAnnotation {
    pub project_id: ProjectId,
    pub annotation: Option<ReviewAnnotation>,
    /// Error code when the policy cannot be satisfied.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    pub venue: VenuePolicy,
    pub entries: Vec<RankedEntry>,
    pub annotations: Vec<ProjectAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regression {
    pub benchmark_id: String,
    pub algorithm: String,
    pub commit_id: Option<CommitId>,
}

impl Service {
    /// Opens (or creates) every store under `config.data_dir`.
    pub fn open(mut config: ServiceConfig, service_env: BTreeMap<String, String>) -> Result<Self, StartupError> {
        config.validate()?;
        config.prepare_data_dir()?;
        let store = |what: &'static str| move |e: String| StartupError::Store { what, message: e };
        // Sandboxed commands run elsewhere; every stored path must be absolute.
        config.data_dir = config.data_dir.canonicalize().map_err(|e| store("data_dir")(e.to_string()))?;
        let data = config.data_dir.clone();

        let workspaces = data.join("workspaces");
        if workspaces.exists() {
            std::fs::remove_dir_all(&workspaces).map_err(|e| store("workspaces")(e.to_string()))?;
        }
        for sub in ["manifests", "workspaces", "mirrors"] {
            std::fs::create_dir_all(data.join(sub)).map_err(|e| store("data_dir")(e.to_string()))?;
        }
        let catalog = Catalog::open(&data.join(CATALOG_LOG_NAME)).map_err(|e| store("catalog")(e.to_string()))?;
        let ingest = Ingest::open(&data.join("jobs.jsonl")).map_err(|e| store("job journal")(e.to_string()))?;
        let ledger = Ledger::open(data.join("ledger")).map_err(|e| store("ledger")(e.to_string()))?;
        for r in ledger.recoveries() {
            tracing::warn!(
                project = %r.project_id,
                line = r.torn.line,
                bytes = r.torn.discarded_bytes,
                "discarded a torn final ledger entry"
            );
        }
        let registry =
            Registry::open(data.join("registry"), config.max_model_bytes).map_err(|e| store("registry")(e.to_string()))?;
        let inner = Inner {
            transcripts: TranscriptStore::new(&data),
            cache: DependencyCache::new(data.join("cache")),
            service_env,
            catalog,
            ingest,
            ledger,
            registry,
            retained: Mutex::new(BTreeMap::new()),
            stopping: AtomicBool::new(false),
            config,
        };
        Ok(Self { inner: Arc::new(inner) })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    /// Resolves a bearer token to a submitter identity. `None` when no
    /// tokens are configured.
    pub fn authorize(&self, token: Option<&str>) -> Result<Option<String>, ApiError> {
        let tokens = &self.inner.config.submitter_tokens;
        if tokens.is_empty() {
            return Ok(None);
        }
        let token = token.ok_or_else(|| ApiError::new("UNAUTHORIZED", "a submitter token is required"))?;
        tokens
            .get(token)
            .cloned()
            .map(Some)
            .ok_or_else(|| ApiError::new("UNAUTHORIZED", "unknown submitter token"))
    }

    pub fn data_dir(&self) -> &Path {
        &self.inner.config.data_dir
    }

    pub fn ledger(&self) -> &Ledger {
        &self.inner.ledger
    }

    pub fn ingest(&self) -> &Ingest {
        &self.inner.ingest
    }

    pub fn registry(&self) -> &Registry {
        &self.inner.registry
    }

    fn ctx(&self) -> PipelineContext<'_> {
        PipelineContext {
            transcripts: &self.inner.transcripts,
            service_env: &self.inner.service_env,
            cache: Some(&self.inner.cache),
        }
    }

    fn retained(&self) -> MutexGuard<'_, BTreeMap<ProjectId, VecDeque<Retained>>> {
        self.inner.retained.lock().unwrap_or_else(|p| p.into_inner())
    }

    // ---- projects and venues ----

    pub fn register_project(&self, req: Registration) -> Result<Project, ApiError> {
        let project = self.inner.catalog.register(req)?;
        tracing::info!(project = %project.project_id, source = %project.source, "registered project");
        Ok(project)
    }

    /// The project with its publication links.
    pub fn project(&self, id: &ProjectId) -> Result<Project, ApiError> {
        let mut project = self
            .inner
            .catalog
            .project(id)
            .ok_or_else(|| ApiError::new("NOT_REGISTERED", format!("project {id} is not registered")))?;
        project.publications = self.inner.registry.project_links(id);
        Ok(project)
    }

    pub fn projects(&self) -> Vec<Project> {
        self.inner.catalog.projects()
    }

    pub fn link_project(&self, id: &ProjectId, link: PublicationLink) -> Result<Project, ApiError> {
        self.project(id)?;
        self.inner.registry.link_project(id, link)?;
        self.project(id)
    }

    pub fn set_venue(&self, venue_id: &str, mode: PolicyMode, label: Option<String>) -> Result<VenuePolicy, ApiError> {
        Ok(self.inner.catalog.set_venue(venue_id, mode, label)?)
    }

    pub fn venue(&self, venue_id: &str) -> Result<VenuePolicy, ApiError> {
        self.inner.catalog.venue(venue_id).ok_or_else(|| ApiError::not_found(format!("venue {venue_id} not found")))
    }

    // ---- intake ----

    fn check_running(&self) -> Result<(), ApiError> {
        if self.inner.stopping.load(Ordering::SeqCst) {
            return Err(ApiError::new("SHUTTING_DOWN", "the service is shutting down"));
        }
        Ok(())
    }

    pub fn receive_push(&self, event: PushEvent) -> Result<Job, ApiError> {
        self.check_running()?;
        let catalog = &self.inner.catalog;
        Ok(self.inner.ingest.receive_push(event, &|p| catalog.contains(p))?)
    }

    /// Invalidates cached artifacts of `name`, then fans out one job per
    /// declaring project.
    pub fn receive_dependency_update(&self, name: &str, version: &str) -> Result<Vec<Job>, ApiError> {
        self.check_running()?;
        if name.is_empty() || version.is_empty() {
            return Err(ApiError::new("BAD_EVENT", "dependency name and version must not be empty"));
        }
        self.inner.cache.invalidate(name);
        Ok(self.inner.ingest.receive_dependency_update(name, version, self))
    }

    pub fn request_run(&self, project: &ProjectId, commit: &str) -> Result<Job, ApiError> {
        self.check_running()?;
        self.project(project)?;
        let commit = CommitId::parse(commit).map_err(|e| ApiError::new("BAD_EVENT", e.to_string()))?;
        Ok(self.inner.ingest.receive_manual(project, commit)?)
    }

    pub fn job(&self, job_id: &str) -> Result<Job, ApiError> {
        self.inner.ingest.job(job_id).ok_or_else(|| ApiError::not_found(format!("job {job_id} not found")))
    }

    pub fn jobs(&self) -> Vec<Job> {
        self.inner.ingest.jobs()
    }

    /// Polls every project's source once.
    pub fn poll_once(&self) -> Vec<Job> {
        let mut jobs = Vec::new();
        for project in self.inner.catalog.projects() {
            match self.inner.ingest.poll_source(&project) {
                Ok(Some(job)) => jobs.push(job),
                Ok(None) => {}
                Err(e) => tracing::warn!(project = %project.project_id, error = %e, "poll failed; retrying next interval"),
            }
        }
        jobs
    }

    // ---- execution ----

    fn mirror_dir(&self, project: &ProjectId) -> PathBuf {
        self.data_dir().join("mirrors").join(project.as_str())
    }

    fn workspace_parent(&self, project: &ProjectId) -> PathBuf {
        self.data_dir().join("workspaces").join(project.as_str())
    }

    pub fn manifest_path(&self, digest: &crate::ids::Digest) -> PathBuf {
        self.data_dir().join("manifests").join(format!("{digest}.json"))
    }

    fn store_manifest(&self, loaded: &LoadedManifest) {
        let path = self.manifest_path(&loaded.digest);
        if !path.exists() {
            if let Err(e) = std::fs::write(&path, &loaded.bytes) {
                tracing::error!(path = %path.display(), error = %e, "could not store manifest");
            }
        }
    }

    fn stored_manifest(&self, digest: &crate::ids::Digest) -> Option<Manifest> {
        let bytes = std::fs::read(self.manifest_path(digest)).ok()?;
        Manifest::parse(&bytes).ok()
    }

    fn active_cases(&self, project: &ProjectId) -> Vec<BenchmarkCase> {
        self.inner.registry.active(project).iter().map(|b| self.inner.registry.case(b)).collect()
    }

    /// Runs the pipeline for `trigger` at its commit.
    fn execute(
        &self,
        project: &Project,
        trigger: TriggerEvent,
        benchmarks: &[BenchmarkCase],
    ) -> Result<runner::RunProduct, String> {
        let commit = trigger.commit.clone().ok_or("trigger carries no commit")?;
        let locator = SourceLocator::parse(&project.source);
        let mirror = self.mirror_dir(&project.project_id);
        let parent = self.workspace_parent(&project.project_id);
        let product = runner::execute(
            &self.ctx(),
            RunRequest {
                run_id: new_id("run"),
                trigger,
                commit,
                source: SourceInput::Repository { source: &locator, mirror: &mirror },
                manifest: ManifestSource::InTree(&project.manifest_path),
                workspaces: &parent,
                benchmarks,
                matrix: &self.inner.config.matrix,
            },
        );
        if let Some(m) = &product.manifest {
            self.store_manifest(m);
        }
        Ok(product)
    }

    /// Executes a claimed job: pipeline, ledger append, completion.
    pub fn run_job(&self, job: Job) -> Job {
        let job_id = job.job_id.clone();
        let result = std::panic::catch_unwind(AssertUnwindSafe(|| self.run_job_inner(job)));
        let outcome = match result {
            Ok(r) => r,
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Err(format!("internal error: {msg}"))
            }
        };
        if let Err(e) = &outcome {
            tracing::error!(job = %job_id, error = %e, "job failed");
        }
        self.inner.ingest.complete(&job_id, outcome.map(Some)).expect("claimed job exists")
    }

    fn run_job_inner(&self, job: Job) -> Result<String, String> {
        let project = self
            .inner
            .catalog
            .project(job.project_id())
            .ok_or_else(|| format!("project {} is not registered", job.project_id()))?;
        let cases = self.active_cases(&project.project_id);
        tracing::info!(job = %job.job_id, project = %project.project_id, kind = ?job.trigger.kind, "starting run");
        let product = self.execute(&project, job.trigger.clone(), &cases)?;
        let record = product.record;
        self.inner.ledger.append_run(&record).map_err(|e| e.to_string())?;
        tracing::info!(
            run = %record.run_id,
            commit = %record.commit.commit_id,
            color = grade(&record).color.label(),
            "run recorded"
        );
        self.retain(
            &project.project_id,
            Retained {
                run_id: record.run_id.clone(),
                manifest: product.manifest.map(|m| m.manifest),
                workspace: product.workspace,
            },
        );
        Ok(record.run_id)
    }

    fn retain(&self, project: &ProjectId, mut entry: Retained) {
        let limit = self.inner.config.retention_count as usize;
        if limit == 0 {
            entry.destroy();
            return;
        }
        let mut retained = self.retained();
        let queue = retained.entry(project.clone()).or_default();
        queue.push_front(entry);
        while queue.len() > limit {
            if let Some(mut old) = queue.pop_back() {
                old.destroy();
            }
        }
    }

    /// Number of workspaces currently retained for `project`.
    pub fn retained_workspaces(&self, project: &ProjectId) -> usize {
        self.retained().get(project).map_or(0, |q| q.iter().filter(|r| r.workspace.is_some()).count())
    }

    /// Starts `worker_limit` workers and, when `poll` is set, the poll loop.
    pub fn spawn_workers(&self, poll: bool) -> Workers {
        let stop = Arc::new((Mutex::new(false), Condvar::new()));
        let mut handles = Vec::new();
        for i in 0..self.inner.config.worker_limit {
            let service = self.clone();
            let handle = std::thread::Builder::new()
                .name(format!("worker-{i}"))
                .spawn(move || {
                    while !service.inner.stopping.load(Ordering::SeqCst) {
                        if let Some(job) = service.inner.ingest.wait_for_job(Duration::from_millis(500)) {
                            service.run_job(job);
                        }
                    }
                })
                .expect("spawn worker thread");
            handles.push(handle);
        }
        if poll {
            let service = self.clone();
            let stop = stop.clone();
            let interval = Duration::from_secs(self.inner.config.ingest.poll_seconds);
            let handle = std::thread::Builder::new()
                .name("poller".into())
                .spawn(move || loop {
                    let (lock, cvar) = &*stop;
                    let guard = lock.lock().unwrap_or_else(|p| p.into_inner());
                    let (guard, _) = cvar
                        .wait_timeout_while(guard, interval, |stopped| !*stopped)
                        .unwrap_or_else(|p| p.into_inner());
                    if *guard {
                        break;
                    }
                    drop(guard);
                    service.poll_once();
                })
                .expect("spawn poller thread");
            handles.push(handle);
        }
        Workers { service: self.clone(), handles, stop }
    }

    /// Blocks until no job is queued or running, or the timeout passes.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while !self.inner.ingest.is_idle() {
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        true
    }

    /// Blocks until the job is DONE or FAILED_INTERNAL.
    pub fn wait_for(&self, job_id: &str, timeout: Duration) -> Option<Job> {
        let deadline = Instant::now() + timeout;
        loop {
            let job = self.inner.ingest.job(job_id)?;
            if job.state.is_terminal() {
                return Some(job);
            }
            if Instant::now() >= deadline {
                return None;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    // ---- benchmarks ----

    /// Stores a benchmark and validates it against the latest successful
    /// build, reusing its retained workspace when there is one.
    pub fn submit_benchmark(
        &self,
        project_id: &ProjectId,
        meta: SubmissionMeta,
        model: &[u8],
    ) -> Result<ValidationReport, ApiError> {
        self.check_running()?;
        let project = self.project(project_id)?;
        let baseline = self
            .inner
            .ledger
            .with_records(project_id, |rs| {
                query::in_run_order(rs).into_iter().rev().find(|r| r.is_successful_build()).cloned()
            })
            .ok_or_else(|| ApiError::new("NO_BASELINE", format!("project {project_id} has no successful build yet")))?;

        let benchmark = self.inner.registry.submit(project_id, meta, model)?;
        let case = self.inner.registry.case(&benchmark);
        let job = self
            .inner
            .ingest
            .begin_inline(project_id, baseline.commit.commit_id.clone(), INLINE_WAIT)
            .map_err(|e| {
                self.abandon(&benchmark, "validation could not start");
                ApiError::internal(e.to_string())
            })?;

        let result = std::panic::catch_unwind(AssertUnwindSafe(|| self.validate(&project, &baseline, &case, &job)));
        let outcome = match result {
            Ok(r) => r,
            Err(_) => Err(ApiError::internal("validation panicked")),
        };
        let (cells, rebuilt) = match outcome {
            Ok(v) => v,
            Err(e) => {
                self.abandon(&benchmark, &e.message);
                self.inner.ingest.complete(&job.job_id, Err(e.message.clone()));
                return Err(e);
            }
        };
        self.inner.ingest.complete(&job.job_id, Ok(None));

        let accepted = !cells.is_empty();
        if accepted {
            self.inner.registry.activate(project_id, &benchmark.benchmark_id)?;
        } else {
            self.inner.registry.retire(project_id, &benchmark.benchmark_id, "no applicable algorithm", "service")?;
        }
        Ok(ValidationReport {
            benchmark_id: benchmark.benchmark_id,
            validated_against: baseline.commit,
            cells,
            accepted,
            rebuilt,
            job_id: job.job_id,
        })
    }

    fn abandon(&self, benchmark: &Benchmark, reason: &str) {
        if let Err(e) = self.inner.registry.retire(&benchmark.project_id, &benchmark.benchmark_id, reason, "service") {
            tracing::error!(benchmark = %benchmark.benchmark_id, error = %e, "could not retire abandoned submission");
        }
    }

    fn validate(
        &self,
        project: &Project,
        baseline: &RunRecord,
        case: &BenchmarkCase,
        job: &Job,
    ) -> Result<(Vec<crate::harness::CellOutcome>, bool), ApiError> {
        let cases = std::slice::from_ref(case);
        let taken = {
            let mut retained = self.retained();
            retained.get_mut(&project.project_id).and_then(|q| {
                q.iter_mut().find(|r| r.run_id == baseline.run_id).and_then(|r| {
                    let manifest = r.manifest.clone()?;
                    let usable = r.workspace.as_ref().is_some_and(|ws| ws.phase() == Phase::Built);
                    usable.then(|| (r.workspace.take().expect("checked above"), manifest))
                })
            })
        };
        if let Some((mut ws, manifest)) = taken {
            let cells = run_matrix(&self.ctx(), &mut ws, &manifest, cases, &self.inner.config.matrix);
            let mut retained = self.retained();
            let slot = retained
                .get_mut(&project.project_id)
                .and_then(|q| q.iter_mut().find(|r| r.run_id == baseline.run_id));
            match slot {
                Some(r) => r.workspace = Some(ws),
                None => ws.destroy(),
            }
            return Ok((cells, false));
        }

        // No retained product: build the baseline commit afresh.
        let trigger = job.trigger.clone();
        let product = self.execute(project, trigger, &[]).map_err(ApiError::internal)?;
        let mut ws = product.workspace;
        let result = match (&mut ws, &product.manifest) {
            (Some(w), Some(m)) if product.record.is_successful_build() => {
                Ok(run_matrix(&self.ctx(), w, &m.manifest, cases, &self.inner.config.matrix))
            }
            _ => Err(ApiError::new(
                "NO_BASELINE",
                format!(
                    "commit {} built before but its rebuild for validation did not succeed",
                    baseline.commit.commit_id
                ),
            )),
        };
        if let Some(w) = ws.as_mut() {
            w.destroy();
        }
        result.map(|cells| (cells, true))
    }

    pub fn retire_benchmark(
        &self,
        project: &ProjectId,
        benchmark_id: &str,
        reason: &str,
        actor: &str,
    ) -> Result<Tombstone, ApiError> {
        self.project(project)?;
        Ok(self.inner.registry.retire(project, benchmark_id, reason, actor)?)
    }

    pub fn link_benchmark(&self, project: &ProjectId, benchmark_id: &str, link: PublicationLink) -> Result<Benchmark, ApiError> {
        self.project(project)?;
        Ok(self.inner.registry.link_benchmark(project, benchmark_id, link)?)
    }

    pub fn benchmarks(&self, project: &ProjectId) -> Result<Vec<Benchmark>, ApiError> {
        self.project(project)?;
        Ok(self.inner.registry.list(project))
    }

    pub fn benchmark(&self, project: &ProjectId, benchmark_id: &str) -> Result<Benchmark, ApiError> {
        self.project(project)?;
        self.inner
            .registry
            .get(project, benchmark_id)
            .ok_or_else(|| ApiError::not_found(format!("benchmark {benchmark_id} not found")))
    }

    pub fn tombstones(&self, project: &ProjectId) -> Result<Vec<Tombstone>, ApiError> {
        self.project(project)?;
        Ok(self.inner.registry.tombstones(project))
    }

    // ---- queries ----

    fn records<R>(&self, project: &ProjectId, f: impl FnOnce(&[RunRecord]) -> R) -> Result<R, ApiError> {
        self.project(project)?;
        Ok(self.inner.ledger.with_records(project, f))
    }

    pub fn runs(&self, project: &ProjectId) -> Result<Vec<RunRecord>, ApiError> {
        self.records(project, |rs| query::in_run_order(rs).into_iter().cloned().collect())
    }

    pub fn run_for_commit(&self, project: &ProjectId, commit: &str) -> Result<RunView, ApiError> {
        let commit = parse_commit(commit)?;
        self.records(project, |rs| {
            query::latest_for_commit(rs, &commit)
                .map(|r| RunView { run: r.clone(), grade: grade(r) })
                .ok_or_else(|| ApiError::from(query::QueryError::NoRun(commit.to_string())))
        })?
    }

    pub fn diff(&self, project: &ProjectId, from: &str, to: &str) -> Result<BehaviorDiff, ApiError> {
        let (from, to) = (parse_commit(from)?, parse_commit(to)?);
        Ok(self.records(project, |rs| query::diff_commits(rs, &from, &to))??)
    }

    pub fn history(&self, project: &ProjectId, benchmark_id: &str, algorithm: &str) -> Result<History, ApiError> {
        self.records(project, |rs| query::history(rs, benchmark_id, algorithm))
    }

    pub fn first_regression(&self, project: &ProjectId, benchmark_id: &str, algorithm: &str) -> Result<Regression, ApiError> {
        let commit_id = self.records(project, |rs| query::first_regression(rs, benchmark_id, algorithm))?;
        Ok(Regression { benchmark_id: benchmark_id.to_string(), algorithm: algorithm.to_string(), commit_id })
    }

    pub fn hard_models(&self, project: &ProjectId, commit: Option<&str>) -> Result<Vec<HardModel>, ApiError> {
        let commit = commit.map(parse_commit).transpose()?;
        Ok(self.records(project, |rs| hard_models(rs, commit.as_ref()))??)
    }

    pub fn badge(&self, project: &ProjectId, commit: &str) -> Result<Badge, ApiError> {
        let commit = parse_commit(commit)?;
        Ok(self.records(project, |rs| render_badge(rs, &commit, Utc::now()))??)
    }

    /// Latest run of every project under the venue, ranked, with the
    /// venue's review annotation per project.
    pub fn ranking(&self, venue_id: &str) -> Result<Ranking, ApiError> {
        let venue = self.venue(venue_id)?;
        let mut latest = Vec::new();
        let mut annotations = Vec::new();
        for project in self.inner.catalog.projects_in_venue(venue_id) {
            let record = self.inner.ledger.with_records(&project.project_id, |rs| query::latest(rs).cloned());
            let annotation = apply_policy(&venue, record.as_ref());
            annotations.push(ProjectAnnotation {
                project_id: project.project_id.clone(),
                error: annotation.as_ref().err().map(|e| e.code().to_string()),
                annotation: annotation.ok(),
            });
            latest.extend(record);
        }
        Ok(Ranking { venue, entries: rank(&latest), annotations })
    }

    pub fn transcript(&self, log_path: &str) -> Result<Vec<u8>, ApiError> {
        if !log_path.starts_with("transcripts/") {
            return Err(ApiError::not_found(format!("{log_path} is not a transcript")));
        }
        self.inner.transcripts.load(log_path).map_err(|e| ApiError::not_found(format!("{log_path}: {e}")))
    }

    /// Refuses new work; queued jobs stay journaled for the next start.
    pub fn begin_shutdown(&self) {
        self.inner.stopping.store(true, Ordering::SeqCst);
        self.inner.ingest.shutdown();
    }
}

fn parse_commit(raw: &str) -> Result<CommitId, ApiError> {
    CommitId::parse(raw).map_err(|e| ApiError::bad_request(e.to_string()))
}

impl DependencyIndex for Service {
    fn dependents(&self, dependency: &str) -> Vec<(ProjectId, Option<CommitId>)> {
        let mut out = Vec::new();
        for project in self.inner.catalog.projects() {
            let fetched = self.inner.ledger.with_records(&project.project_id, |rs| {
                query::in_run_order(rs)
                    .into_iter()
                    .rev()
                    .find(|r| r.fetched() && r.manifest_digest.is_some())
                    .map(|r| (r.commit.commit_id.clone(), r.manifest_digest.clone().expect("checked")))
            });
            match fetched {
                Some((commit, digest)) => match self.stored_manifest(&digest) {
                    Some(m) if m.declares_dependency(dependency) => out.push((project.project_id, Some(commit))),
                    Some(_) => {}
                    None => tracing::warn!(project = %project.project_id, %digest, "manifest of the last fetch is missing"),
                },
                // Without a fetch the manifest is unknown; ingest skips it with a warning.
                None => out.push((project.project_id, None)),
            }
        }
        out
    }
}

/// Worker threads plus the poll loop.
pub struct Workers {
    service: Service,
    handles: Vec<JoinHandle<()>>,
    stop: Arc<(Mutex<bool>, Condvar)>,
}

impl Workers {
    /// Stops intake, lets in-flight jobs finish and joins every thread.
    pub fn shutdown(self) {
        self.service.begin_shutdown();
        let (lock, cvar) = &*self.stop;
        *lock.lock().unwrap_or_else(|p| p.into_inner()) = true;
        cvar.notify_all();
        for h in self.handles {
            if h.join().is_err() {
                tracing::error!("a worker thread panicked");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::toy::{self, ToyRepo};

    fn open(dir: &Path, retention: u32) -> (Service, ToyRepo) {
        let mut config = ServiceConfig::new(dir.join("data"));
        config.retention_count = retention;
        config.ingest.poll_seconds = 3600;
        let service = Service::open(config, BTreeMap::new()).unwrap();
        let repo = ToyRepo::create(&dir.join("repo")).unwrap();
        let registration = Registration {
            name: "Toy Solver".into(),
            source: repo.path.display().to_string(),
            manifest_path: None,
            policy: None,
            project_id: None,
        };
        service.register_project(registration).unwrap();
        (service, repo)
    }

    fn run(service: &Service, project: &ProjectId, commit: &CommitId) -> Job {
        let event = PushEvent {
            project_id: project.to_string(),
            commit_id: commit.to_string(),
            event_id: format!("push-{commit}"),
        };
        let job = service.receive_push(event).unwrap();
        let done = service.wait_for(&job.job_id, Duration::from_secs(120)).unwrap();
        assert!(done.run_id.is_some(), "{done:?}");
        done
    }

    #[test]
    fn retention_keeps_the_newest_workspaces() {
        let dir = tempfile::tempdir().unwrap();
        let (service, repo) = open(dir.path(), 1);
        let workers = service.spawn_workers(false);
        let project = ProjectId::new("toy-solver");
        run(&service, &project, &repo.c1);
        run(&service, &project, &repo.c3);
        assert_eq!(service.retained_workspaces(&project), 1);
        let (meta, model) = toy::submission("b1");
        let report = service.submit_benchmark(&project, meta, &model).unwrap();
        assert!(!report.rebuilt);
        assert_eq!(report.validated_against.commit_id, repo.c3);
        workers.shutdown();
    }

    #[test]
    fn zero_retention_rebuilds_for_validation() {
        let dir = tempfile::tempdir().unwrap();
        let (service, repo) = open(dir.path(), 0);
        let workers = service.spawn_workers(false);
        let project = ProjectId::new("toy-solver");
        run(&service, &project, &repo.c1);
        assert_eq!(service.retained_workspaces(&project), 0);
        let (meta, model) = toy::submission("b1");
        let report = service.submit_benchmark(&project, meta, &model).unwrap();
        assert!(report.rebuilt && report.accepted);
        workers.shutdown();
    }

    #[test]
    fn dependency_updates_skip_projects_never_fetched() {
        let dir = tempfile::tempdir().unwrap();
        let (service, _repo) = open(dir.path(), 1);
        let project = ProjectId::new("toy-solver");
        assert_eq!(service.dependents("libsolve"), vec![(project, None)]);
        assert!(service.receive_dependency_update("libsolve", "2.1").unwrap().is_empty());
        let err = service.receive_dependency_update("", "2.1").unwrap_err();
        assert_eq!(err.code, "BAD_EVENT");
    }

    #[test]
    fn tokens_map_to_submitters() {
        let dir = tempfile::tempdir().unwrap();
        let (service, _repo) = open(dir.path(), 1);
        assert_eq!(service.authorize(None).unwrap(), None);
        drop(service);
        let mut config = ServiceConfig::new(dir.path().join("data"));
        config.submitter_tokens.insert("s3cret".into(), "ana@example.org".into());
        let service = Service::open(config, BTreeMap::new()).unwrap();
        assert_eq!(service.authorize(Some("s3cret")).unwrap().as_deref(), Some("ana@example.org"));
        assert_eq!(service.authorize(Some("guess")).unwrap_err().code, "UNAUTHORIZED");
        assert_eq!(service.authorize(None).unwrap_err().code, "UNAUTHORIZED");
    }

    #[test]
    fn intake_stops_after_shutdown_begins() {
        let dir = tempfile::tempdir().unwrap();
        let (service, repo) = open(dir.path(), 1);
        service.begin_shutdown();
        let event = PushEvent { project_id: "toy-solver".into(), commit_id: repo.c1.to_string(), event_id: "e".into() };
        assert_eq!(service.receive_push(event).unwrap_err().code, "SHUTTING_DOWN");
    }
}
