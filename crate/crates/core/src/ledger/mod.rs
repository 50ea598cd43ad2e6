// SPDX-License-Identifier: Apache-2.0

//! Append-only run storage: one JSONL log per project with an in-memory
//! index rebuilt from the log on open.

pub mod log;
pub mod query;
mod record;

pub use record::RunRecord;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use crate::ids::ProjectId;
use log::{JsonlLog, TornTail};

pub const RUN_LOG_NAME: &str = "runs.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("run {0} already recorded")]
    Duplicate(String),
    #[error("record rejected: {0}")]
    Rejected(String),
    #[error("ledger storage: {0}")]
    Storage(String),
}

impl LedgerError {
    pub fn code(&self) -> &'static str {
        match self {
            LedgerError::Duplicate(_) => "DUPLICATE",
            LedgerError::Rejected(_) => "REJECTED",
            LedgerError::Storage(_) => "INTERNAL",
        }
    }
}

struct ProjectRuns {
    writer: Mutex<JsonlLog<RunRecord>>,
    records: RwLock<Vec<RunRecord>>,
}

/// A torn final entry found and discarded while opening a project log.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub project_id: ProjectId,
    pub torn: TornTail,
}

pub struct Ledger {
    root: PathBuf,
    projects: RwLock<BTreeMap<ProjectId, Arc<ProjectRuns>>>,
    run_ids: Mutex<HashSet<String>>,
    recoveries: Vec<Recovery>,
}

/// Project ids become directory names.
pub fn is_path_safe(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

impl Ledger {
    /// Opens every project log under `root/projects`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, LedgerError> {
        let root = root.into();
        let projects_dir = root.join("projects");
        std::fs::create_dir_all(&projects_dir).map_err(|e| storage(&projects_dir, e))?;
        let mut projects = BTreeMap::new();
        let mut run_ids = HashSet::new();
        let mut recoveries = Vec::new();
        let mut entries: Vec<_> = std::fs::read_dir(&projects_dir)
            .map_err(|e| storage(&projects_dir, e))?
            .filter_map(Result::ok)
            .collect();
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path().join(RUN_LOG_NAME);
            let Some(name) = entry.file_name().to_str().map(str::to_string) else { continue };
            if !path.is_file() || !is_path_safe(&name) {
                continue;
            }
            let opened = JsonlLog::<RunRecord>::open(&path).map_err(|e| LedgerError::Storage(e.to_string()))?;
            let project_id = ProjectId::new(name);
            if let Some(torn) = opened.torn {
                recoveries.push(Recovery { project_id: project_id.clone(), torn });
            }
            for r in &opened.records {
                run_ids.insert(r.run_id.clone());
            }
            projects.insert(
                project_id,
                Arc::new(ProjectRuns { writer: Mutex::new(opened.log), records: RwLock::new(opened.records) }),
            );
        }
        Ok(Self { root, projects: RwLock::new(projects), run_ids: Mutex::new(run_ids), recoveries })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn recoveries(&self) -> &[Recovery] {
        &self.recoveries
    }

    fn project(&self, id: &ProjectId) -> Option<Arc<ProjectRuns>> {
        self.projects.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    fn project_or_create(&self, id: &ProjectId) -> Result<Arc<ProjectRuns>, LedgerError> {
        if let Some(p) = self.project(id) {
            return Ok(p);
        }
        if !is_path_safe(id.as_str()) {
            return Err(LedgerError::Rejected(format!("project id {id:?} is not usable as a directory name")));
        }
        let mut projects = self.projects.write().unwrap_or_else(|p| p.into_inner());
        if let Some(p) = projects.get(id) {
            return Ok(p.clone());
        }
        let dir = self.root.join("projects").join(id.as_str());
        std::fs::create_dir_all(&dir).map_err(|e| storage(&dir, e))?;
        let opened = JsonlLog::open(dir.join(RUN_LOG_NAME)).map_err(|e| LedgerError::Storage(e.to_string()))?;
        let runs = Arc::new(ProjectRuns { writer: Mutex::new(opened.log), records: RwLock::new(opened.records) });
        projects.insert(id.clone(), runs.clone());
        Ok(runs)
    }

    /// Durably appends a record. Returns its byte offset in the project log.
    pub fn append_run(&self, record: &RunRecord) -> Result<u64, LedgerError> {
        record.validate().map_err(LedgerError::Rejected)?;
        let runs = self.project_or_create(&record.commit.project_id)?;
        let mut writer = runs.writer.lock().unwrap_or_else(|p| p.into_inner());
        let mut ids = self.run_ids.lock().unwrap_or_else(|p| p.into_inner());
        if ids.contains(&record.run_id) {
            return Err(LedgerError::Duplicate(record.run_id.clone()));
        }
        let offset = writer.append(record).map_err(|e| LedgerError::Storage(e.to_string()))?;
        ids.insert(record.run_id.clone());
        drop(ids);
        runs.records.write().unwrap_or_else(|p| p.into_inner()).push(record.clone());
        Ok(offset)
    }

    /// Runs `f` over the project's records in append order.
    pub fn with_records<R>(&self, project: &ProjectId, f: impl FnOnce(&[RunRecord]) -> R) -> R {
        match self.project(project) {
            Some(runs) => f(&runs.records.read().unwrap_or_else(|p| p.into_inner())),
            None => f(&[]),
        }
    }

    pub fn records(&self, project: &ProjectId) -> Vec<RunRecord> {
        self.with_records(project, <[RunRecord]>::to_vec)
    }

    pub fn run(&self, project: &ProjectId, run_id: &str) -> Option<RunRecord> {
        self.with_records(project, |rs| rs.iter().find(|r| r.run_id == run_id).cloned())
    }

    pub fn projects(&self) -> Vec<ProjectId> {
        self.projects.read().unwrap_or_else(|p| p.into_inner()).keys().cloned().collect()
    }

    pub fn log_path(&self, project: &ProjectId) -> PathBuf {
        self.root.join("projects").join(project.as_str()).join(RUN_LOG_NAME)
    }
}

fn storage(path: &Path, e: std::io::Error) -> LedgerError {
    LedgerError::Storage(format!("{}: {e}", path.display()))
}
