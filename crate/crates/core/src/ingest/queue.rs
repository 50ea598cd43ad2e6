// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Duration;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::{CommitRef, DependencyBump, IngestError, Job, JobState, Project, TriggerEvent, TriggerKind};
use crate::ids::{new_id, CommitId, ProjectId};
use crate::ledger::log::JsonlLog;
use crate::pipeline::fetch::SourceLocator;

/// The flat push-webhook document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PushEvent {
    pub project_id: String,
    pub commit_id: String,
    pub event_id: String,
}

/// Answers which projects a dependency update concerns.
pub trait DependencyIndex {
    /// Every registered project whose manifest declares `dependency`, with
    /// its latest successfully fetched commit (`None` if it never fetched).
    fn dependents(&self, dependency: &str) -> Vec<(ProjectId, Option<CommitId>)>;
}

#[derive(Default)]
struct QueueState {
    jobs: HashMap<String, Job>,
    /// Enqueue sequence number per job; orders claims across projects.
    seq_of: HashMap<String, u64>,
    next_seq: u64,
    by_event: HashMap<String, String>,
    queued: BTreeMap<ProjectId, VecDeque<String>>,
    running: HashMap<ProjectId, String>,
    last_seen: HashMap<ProjectId, CommitId>,
    journal: Option<JsonlLog<Job>>,
    shutdown: bool,
}

impl QueueState {
    fn persist(&mut self, job: &Job) -> Result<(), IngestError> {
        match self.journal.as_mut() {
            Some(log) => log.append(job).map(|_| ()).map_err(|e| IngestError::Journal(e.to_string())),
            None => Ok(()),
        }
    }

    fn insert_queued(&mut self, job: Job) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.note_seen(&job);
        self.seq_of.insert(job.job_id.clone(), seq);
        self.by_event.insert(job.trigger.event_id.clone(), job.job_id.clone());
        self.queued.entry(job.project_id().clone()).or_default().push_back(job.job_id.clone());
        self.jobs.insert(job.job_id.clone(), job);
    }

    /// Pushes are what polling compares against; re-runs of older commits
    /// must not make the poller believe the head moved back.
    fn note_seen(&mut self, job: &Job) {
        if let (TriggerKind::Push, Some(commit)) = (job.trigger.kind, job.commit()) {
            self.last_seen.insert(job.project_id().clone(), commit.commit_id.clone());
        }
    }

    fn enqueue(&mut self, trigger: TriggerEvent) -> Result<Job, IngestError> {
        debug_assert!(trigger.is_well_formed());
        let job = Job {
            job_id: new_id("job"),
            trigger,
            state: JobState::Queued,
            enqueued_at: Utc::now(),
            started_at: None,
            finished_at: None,
            run_id: None,
            error: None,
        };
        self.persist(&job)?;
        self.insert_queued(job.clone());
        Ok(job)
    }

    fn start(&mut self, project: &ProjectId) -> Option<Job> {
        if self.running.contains_key(project) {
            return None;
        }
        let id = self.queued.get_mut(project)?.pop_front()?;
        let mut job = self.jobs.get(&id).cloned().expect("queued job exists");
        job.state = JobState::Running;
        job.started_at = Some(Utc::now());
        if let Err(e) = self.persist(&job) {
            tracing::error!(job = %id, error = %e, "could not journal job start");
        }
        self.running.insert(project.clone(), id.clone());
        self.jobs.insert(id, job.clone());
        Some(job)
    }

    /// Oldest queued job among projects with nothing running.
    fn claimable(&self) -> Option<ProjectId> {
        self.queued
            .iter()
            .filter(|(project, q)| !q.is_empty() && !self.running.contains_key(*project))
            .min_by_key(|(_, q)| self.seq_of[q.front().expect("non-empty")])
            .map(|(project, _)| project.clone())
    }
}

/// Job intake and the per-project FIFO queue.
///
/// Thread-safe: producers may call the `receive_*` operations concurrently,
/// each intake is atomic, and workers claim jobs with [`Ingest::wait_for_job`].
pub struct Ingest {
    state: Mutex<QueueState>,
    wake: Condvar,
}

impl Default for Ingest {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Ingest {
    pub fn in_memory() -> Self {
        Self { state: Mutex::new(QueueState::default()), wake: Condvar::new() }
    }

    /// Opens the job journal, replaying queued and finished jobs. Jobs that
    /// were RUNNING when the previous process died become FAILED_INTERNAL.
    pub fn open(journal: &Path) -> Result<Self, IngestError> {
        let opened = JsonlLog::<Job>::open(journal).map_err(|e| IngestError::Journal(e.to_string()))?;
        let mut state = QueueState::default();

        let mut order: Vec<String> = Vec::new();
        let mut latest: HashMap<String, Job> = HashMap::new();
        for job in opened.records {
            if !latest.contains_key(&job.job_id) {
                order.push(job.job_id.clone());
            }
            latest.insert(job.job_id.clone(), job);
        }
        state.journal = Some(opened.log);

        for id in order {
            let mut job = latest.remove(&id).expect("ordered ids come from the map");
            match job.state {
                JobState::Queued => {
                    state.insert_queued(job);
                    continue;
                }
                JobState::Running => {
                    job.state = JobState::FailedInternal;
                    job.finished_at = Some(Utc::now());
                    job.error = Some("interrupted by service restart".into());
                    state.persist(&job)?;
                }
                JobState::Done | JobState::FailedInternal => {}
            }
            let seq = state.next_seq;
            state.next_seq += 1;
            state.seq_of.insert(job.job_id.clone(), seq);
            state.note_seen(&job);
            state.by_event.insert(job.trigger.event_id.clone(), job.job_id.clone());
            state.jobs.insert(job.job_id.clone(), job);
        }
        Ok(Self { state: Mutex::new(state), wake: Condvar::new() })
    }

    fn lock(&self) -> MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn accept(&self, trigger: TriggerEvent) -> Result<Job, IngestError> {
        let mut state = self.lock();
        if let Some(existing) = state.by_event.get(&trigger.event_id) {
            return Ok(state.jobs[existing].clone());
        }
        let job = state.enqueue(trigger)?;
        drop(state);
        self.wake.notify_all();
        Ok(job)
    }

    /// Accepts a push webhook document. Re-delivery of an `event_id`
    /// returns the job created the first time.
    pub fn receive_push(&self, event: PushEvent, is_registered: &dyn Fn(&ProjectId) -> bool) -> Result<Job, IngestError> {
        {
            let state = self.lock();
            if let Some(existing) = state.by_event.get(&event.event_id) {
                return Ok(state.jobs[existing].clone());
            }
        }
        let project_id = ProjectId::new(event.project_id.clone());
        if !is_registered(&project_id) {
            return Err(IngestError::NotRegistered(event.project_id));
        }
        if event.event_id.is_empty() {
            return Err(IngestError::BadEvent("event_id must not be empty".into()));
        }
        let commit_id = CommitId::parse(&event.commit_id).map_err(|e| IngestError::BadEvent(e.to_string()))?;
        let now = Utc::now();
        self.accept(TriggerEvent {
            kind: TriggerKind::Push,
            commit: Some(CommitRef { project_id: project_id.clone(), commit_id, observed_at: now }),
            project_id,
            dependency: None,
            received_at: now,
            event_id: event.event_id,
        })
    }

    /// Intentional re-run of a commit.
    pub fn receive_manual(&self, project_id: &ProjectId, commit_id: CommitId) -> Result<Job, IngestError> {
        let now = Utc::now();
        self.accept(TriggerEvent {
            kind: TriggerKind::Manual,
            project_id: project_id.clone(),
            commit: Some(CommitRef { project_id: project_id.clone(), commit_id, observed_at: now }),
            dependency: None,
            received_at: now,
            event_id: new_id("manual"),
        })
    }

    /// One DEPENDENCY_UPDATE job per project declaring `name`, at that
    /// project's latest successfully fetched commit.
    pub fn receive_dependency_update(&self, name: &str, new_version: &str, index: &dyn DependencyIndex) -> Vec<Job> {
        let mut jobs = Vec::new();
        let mut dependents = index.dependents(name);
        dependents.sort();
        for (project_id, commit) in dependents {
            let Some(commit_id) = commit else {
                tracing::warn!(project = %project_id, dependency = name, "no successfully fetched commit; skipping");
                continue;
            };
            let now = Utc::now();
            let trigger = TriggerEvent {
                kind: TriggerKind::DependencyUpdate,
                commit: Some(CommitRef { project_id: project_id.clone(), commit_id, observed_at: now }),
                project_id,
                dependency: Some(DependencyBump { name: name.to_string(), new_version: new_version.to_string() }),
                received_at: now,
                event_id: new_id("dep"),
            };
            match self.accept(trigger) {
                Ok(job) => jobs.push(job),
                Err(e) => tracing::error!(error = %e, "dropping dependency trigger"),
            }
        }
        jobs
    }

    /// Compares the source head with the last commit seen for the project
    /// and enqueues a PUSH job when it moved.
    pub fn poll_source(&self, project: &Project) -> Result<Option<Job>, IngestError> {
        let head = SourceLocator::parse(&project.source)
            .head_commit()
            .map_err(|e| IngestError::SourceUnavailable(e.to_string()))?;
        if self.lock().last_seen.get(&project.project_id) == Some(&head) {
            return Ok(None);
        }
        let event_id = format!("poll-{}-{}", project.project_id, head);
        if self.lock().by_event.contains_key(&event_id) {
            return Ok(None);
        }
        let now = Utc::now();
        self.accept(TriggerEvent {
            kind: TriggerKind::Push,
            project_id: project.project_id.clone(),
            commit: Some(CommitRef { project_id: project.project_id.clone(), commit_id: head, observed_at: now }),
            dependency: None,
            received_at: now,
            event_id,
        })
        .map(Some)
    }

    /// Oldest queued job of `project`, marked RUNNING, unless one is
    /// already running for that project.
    pub fn next_job(&self, project: &ProjectId) -> Option<Job> {
        self.lock().start(project)
    }

    /// Oldest claimable job across all projects.
    pub fn claim_next(&self) -> Option<Job> {
        let mut state = self.lock();
        let project = state.claimable()?;
        state.start(&project)
    }

    /// Blocks until a job can be claimed, the timeout passes, or the queue
    /// is shut down.
    pub fn wait_for_job(&self, timeout: Duration) -> Option<Job> {
        let deadline = std::time::Instant::now() + timeout;
        let mut state = self.lock();
        loop {
            if state.shutdown {
                return None;
            }
            if let Some(project) = state.claimable() {
                return state.start(&project);
            }
            let now = std::time::Instant::now();
            if now >= deadline {
                return None;
            }
            state = self.wake.wait_timeout(state, deadline - now).unwrap_or_else(|p| p.into_inner()).0;
        }
    }

    /// Registers a SUBMISSION_VALIDATION job that the caller executes
    /// itself. Waits until nothing runs for the project, then returns the
    /// job already RUNNING; finish it with [`Ingest::complete`].
    pub fn begin_inline(&self, project_id: &ProjectId, commit_id: CommitId, timeout: Duration) -> Result<Job, IngestError> {
        let deadline = std::time::Instant::now() + timeout;
        let mut state = self.lock();
        loop {
            if state.shutdown {
                return Err(IngestError::Journal("service is shutting down".into()));
            }
            if !state.running.contains_key(project_id) {
                break;
            }
            let now = std::time::Instant::now();
            if now >= deadline {
                return Err(IngestError::Journal(format!("project {project_id} stayed busy")));
            }
            state = self.wake.wait_timeout(state, deadline - now).unwrap_or_else(|p| p.into_inner()).0;
        }
        let now = Utc::now();
        let job = Job {
            job_id: new_id("job"),
            trigger: TriggerEvent {
                kind: TriggerKind::SubmissionValidation,
                project_id: project_id.clone(),
                commit: Some(CommitRef { project_id: project_id.clone(), commit_id, observed_at: now }),
                dependency: None,
                received_at: now,
                event_id: new_id("validate"),
            },
            state: JobState::Running,
            enqueued_at: now,
            started_at: Some(now),
            finished_at: None,
            run_id: None,
            error: None,
        };
        state.persist(&job)?;
        let seq = state.next_seq;
        state.next_seq += 1;
        state.seq_of.insert(job.job_id.clone(), seq);
        state.by_event.insert(job.trigger.event_id.clone(), job.job_id.clone());
        state.running.insert(project_id.clone(), job.job_id.clone());
        state.jobs.insert(job.job_id.clone(), job.clone());
        Ok(job)
    }

    /// Finishes a RUNNING job: DONE (with the run it produced, if any), or
    /// FAILED_INTERNAL.
    pub fn complete(&self, job_id: &str, outcome: Result<Option<String>, String>) -> Option<Job> {
        let mut state = self.lock();
        let mut job = state.jobs.get(job_id).cloned()?;
        if job.state != JobState::Running {
            return Some(job);
        }
        match outcome {
            Ok(run_id) => {
                job.state = JobState::Done;
                job.run_id = run_id;
            }
            Err(error) => {
                job.state = JobState::FailedInternal;
                job.error = Some(error);
            }
        }
        job.finished_at = Some(Utc::now());
        if let Err(e) = state.persist(&job) {
            tracing::error!(job = job_id, error = %e, "could not journal job completion");
        }
        state.running.remove(job.project_id());
        state.jobs.insert(job.job_id.clone(), job.clone());
        drop(state);
        self.wake.notify_all();
        Some(job)
    }

    pub fn job(&self, job_id: &str) -> Option<Job> {
        self.lock().jobs.get(job_id).cloned()
    }

    /// All jobs in enqueue order.
    pub fn jobs(&self) -> Vec<Job> {
        let state = self.lock();
        let mut jobs: Vec<Job> = state.jobs.values().cloned().collect();
        jobs.sort_by_key(|j| state.seq_of[&j.job_id]);
        jobs
    }

    pub fn queue_len(&self, project: &ProjectId) -> usize {
        self.lock().queued.get(project).map_or(0, VecDeque::len)
    }

    pub fn is_idle(&self) -> bool {
        let state = self.lock();
        state.running.is_empty() && state.queued.values().all(VecDeque::is_empty)
    }

    pub fn last_seen(&self, project: &ProjectId) -> Option<CommitId> {
        self.lock().last_seen.get(project).cloned()
    }

    /// Wakes all waiting workers and stops handing out jobs.
    pub fn shutdown(&self) {
        self.lock().shutdown = true;
        self.wake.notify_all();
    }
}
