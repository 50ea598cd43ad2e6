// SPDX-License-Identifier: Apache-2.0

//! Community benchmark repository: submissions, retirement, publication
//! links and hard-model queries.
//!
//! State is an append-only event log per project
//! (`projects/<id>/registry.jsonl`) replayed on open. Model payloads live in
//! a content-addressed blob store shared by all projects.

mod hard;
mod publication;

pub use hard::{hard_models, hard_models_in, HardModel};
pub use publication::{is_doi, PublicationLink};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::harness::assertion::Assertion;
use crate::harness::{BenchmarkCase, CellOutcome};
use crate::ids::{new_id, Digest, ProjectId, Timestamp};
use crate::ingest::CommitRef;
use crate::ledger::is_path_safe;
use crate::ledger::log::JsonlLog;

pub const REGISTRY_LOG_NAME: &str = "registry.jsonl";
pub const DEFAULT_MAX_MODEL_BYTES: u64 = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BenchmarkState {
    Pending,
    Active,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Benchmark {
    pub benchmark_id: String,
    pub project_id: ProjectId,
    pub model_digest: Digest,
    pub model_bytes: u64,
    pub format_tag: String,
    pub assertion: Assertion,
    /// Empty means every algorithm.
    pub algorithm_tags: Vec<String>,
    pub submitter: String,
    /// In attachment order; corrections append a superseding link.
    pub publications: Vec<PublicationLink>,
    pub schema_version: u32,
    pub state: BenchmarkState,
    pub submitted_at: Timestamp,
    /// Per-cell wall limit override.
    #[serde(default)]
    pub wall_seconds: Option<u64>,
}

/// What a modeller sends. The model travels separately as bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmissionMeta {
    /// Caller-chosen id; generated when absent.
    #[serde(default)]
    pub benchmark_id: Option<String>,
    #[serde(default)]
    pub format_tag: String,
    pub assertion: Assertion,
    #[serde(default)]
    pub algorithm_tags: Vec<String>,
    pub submitter: String,
    #[serde(default)]
    pub publication: Option<PublicationLink>,
    #[serde(default = "SubmissionMeta::default_schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub wall_seconds: Option<u64>,
}

impl SubmissionMeta {
    fn default_schema_version() -> u32 {
        1
    }

    pub fn new(submitter: impl Into<String>, assertion: Assertion) -> Self {
        Self {
            benchmark_id: None,
            format_tag: String::new(),
            assertion,
            algorithm_tags: Vec::new(),
            submitter: submitter.into(),
            publication: None,
            schema_version: 1,
            wall_seconds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tombstone {
    pub benchmark_id: String,
    pub reason: String,
    pub actor: String,
    pub retired_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub benchmark_id: String,
    pub validated_against: CommitRef,
    /// One per applicable algorithm.
    pub cells: Vec<CellOutcome>,
    /// False only when no algorithm of the project applies.
    pub accepted: bool,
    /// A fresh build was needed because no built workspace was retained.
    pub rebuilt: bool,
    pub job_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
enum RegistryEvent {
    Submitted { benchmark: Benchmark },
    Activated { benchmark_id: String, at: Timestamp },
    Retired { tombstone: Tombstone },
    BenchmarkLinked { benchmark_id: String, publication: PublicationLink, at: Timestamp },
    ProjectLinked { publication: PublicationLink, at: Timestamp },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("model is {size} bytes, limit is {max}")]
    TooLarge { size: u64, max: u64 },
    #[error("duplicate benchmark: {0}")]
    Duplicate(String),
    #[error("benchmark {0} not found")]
    NotFound(String),
    #[error("bad publication link: {0}")]
    BadDoi(String),
    #[error("invalid submission: {0}")]
    Invalid(String),
    #[error("registry storage: {0}")]
    Storage(String),
}

impl RegistryError {
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::TooLarge { .. } => "TOO_LARGE",
            RegistryError::Duplicate(_) => "DUPLICATE",
            RegistryError::NotFound(_) => "NOT_FOUND",
            RegistryError::BadDoi(_) => "BAD_DOI",
            RegistryError::Invalid(_) => "BAD_REQUEST",
            RegistryError::Storage(_) => "INTERNAL",
        }
    }
}

struct ProjectRegistry {
    log: JsonlLog<RegistryEvent>,
    benchmarks: BTreeMap<String, Benchmark>,
    /// Benchmark ids in submission order.
    order: Vec<String>,
    tombstones: Vec<Tombstone>,
    project_links: Vec<PublicationLink>,
}

impl ProjectRegistry {
    fn apply(&mut self, event: RegistryEvent) {
        match event {
            RegistryEvent::Submitted { benchmark } => {
                self.order.push(benchmark.benchmark_id.clone());
                self.benchmarks.insert(benchmark.benchmark_id.clone(), benchmark);
            }
            RegistryEvent::Activated { benchmark_id, .. } => {
                if let Some(b) = self.benchmarks.get_mut(&benchmark_id) {
                    b.state = BenchmarkState::Active;
                }
            }
            RegistryEvent::Retired { tombstone } => {
                if let Some(b) = self.benchmarks.get_mut(&tombstone.benchmark_id) {
                    b.state = BenchmarkState::Retired;
                }
                self.tombstones.push(tombstone);
            }
            RegistryEvent::BenchmarkLinked { benchmark_id, publication, .. } => {
                if let Some(b) = self.benchmarks.get_mut(&benchmark_id) {
                    b.publications.push(publication);
                }
            }
            RegistryEvent::ProjectLinked { publication, .. } => self.project_links.push(publication),
        }
    }

    fn record(&mut self, event: RegistryEvent) -> Result<(), RegistryError> {
        self.log.append(&event).map_err(|e| RegistryError::Storage(e.to_string()))?;
        self.apply(event);
        Ok(())
    }

    fn get(&self, id: &str) -> Result<&Benchmark, RegistryError> {
        self.benchmarks.get(id).ok_or_else(|| RegistryError::NotFound(id.to_string()))
    }
}

pub struct Registry {
    root: PathBuf,
    max_model_bytes: u64,
    projects: Mutex<BTreeMap<ProjectId, ProjectRegistry>>,
}

impl Registry {
    pub fn open(root: impl Into<PathBuf>, max_model_bytes: u64) -> Result<Self, RegistryError> {
        let root = root.into();
        let projects_dir = root.join("projects");
        std::fs::create_dir_all(&projects_dir).map_err(|e| RegistryError::Storage(e.to_string()))?;
        std::fs::create_dir_all(root.join("blobs")).map_err(|e| RegistryError::Storage(e.to_string()))?;
        let mut projects = BTreeMap::new();
        for entry in std::fs::read_dir(&projects_dir).map_err(|e| RegistryError::Storage(e.to_string()))? {
            let entry = entry.map_err(|e| RegistryError::Storage(e.to_string()))?;
            let Some(name) = entry.file_name().to_str().map(str::to_string) else { continue };
            let path = entry.path().join(REGISTRY_LOG_NAME);
            if is_path_safe(&name) && path.is_file() {
                projects.insert(ProjectId::new(name), open_project(&path)?);
            }
        }
        Ok(Self { root, max_model_bytes, projects: Mutex::new(projects) })
    }

    fn lock(&self) -> MutexGuard<'_, BTreeMap<ProjectId, ProjectRegistry>> {
        self.projects.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn with_project_mut<R>(
        &self,
        project: &ProjectId,
        f: impl FnOnce(&mut ProjectRegistry) -> Result<R, RegistryError>,
    ) -> Result<R, RegistryError> {
        let mut projects = self.lock();
        if !projects.contains_key(project) {
            if !is_path_safe(project.as_str()) {
                return Err(RegistryError::Invalid(format!("project id {project:?} is not path-safe")));
            }
            let dir = self.root.join("projects").join(project.as_str());
            std::fs::create_dir_all(&dir).map_err(|e| RegistryError::Storage(e.to_string()))?;
            projects.insert(project.clone(), open_project(&dir.join(REGISTRY_LOG_NAME))?);
        }
        f(projects.get_mut(project).expect("inserted above"))
    }

    pub fn max_model_bytes(&self) -> u64 {
        self.max_model_bytes
    }

    /// Checks and stores a submission as PENDING. Nothing is stored when a
    /// check fails.
    pub fn submit(&self, project: &ProjectId, meta: SubmissionMeta, model: &[u8]) -> Result<Benchmark, RegistryError> {
        let size = model.len() as u64;
        if size > self.max_model_bytes {
            return Err(RegistryError::TooLarge { size, max: self.max_model_bytes });
        }
        let assertion = meta.assertion.normalized();
        assertion.validate().map_err(RegistryError::Invalid)?;
        if let Some(link) = &meta.publication {
            link.validate().map_err(RegistryError::BadDoi)?;
        }
        if meta.submitter.trim().is_empty() {
            return Err(RegistryError::Invalid("submitter must not be empty".into()));
        }
        if meta.algorithm_tags.iter().any(|t| t.is_empty()) {
            return Err(RegistryError::Invalid("algorithm tags must be non-empty".into()));
        }
        if meta.wall_seconds == Some(0) {
            return Err(RegistryError::Invalid("wall_seconds override must be positive".into()));
        }
        if let Some(id) = &meta.benchmark_id {
            if !is_path_safe(id) {
                return Err(RegistryError::Invalid(format!("benchmark id {id:?} must match [A-Za-z0-9._-]+")));
            }
        }
        let mut tags = meta.algorithm_tags;
        tags.sort();
        tags.dedup();
        let model_digest = Digest::of(model);

        self.with_project_mut(project, |reg| {
            if let Some(id) = &meta.benchmark_id {
                if reg.benchmarks.contains_key(id) {
                    return Err(RegistryError::Duplicate(format!("benchmark id {id} is taken")));
                }
            }
            if let Some(existing) = reg.benchmarks.values().find(|b| {
                b.state != BenchmarkState::Retired && b.model_digest == model_digest && b.assertion == assertion
            }) {
                return Err(RegistryError::Duplicate(format!(
                    "same model and assertion as {}",
                    existing.benchmark_id
                )));
            }
            self.store_blob(&model_digest, model)?;
            let benchmark = Benchmark {
                benchmark_id: meta.benchmark_id.clone().unwrap_or_else(|| new_id("bm")),
                project_id: project.clone(),
                model_digest: model_digest.clone(),
                model_bytes: size,
                format_tag: meta.format_tag,
                assertion,
                algorithm_tags: tags,
                submitter: meta.submitter,
                publications: meta.publication.into_iter().collect(),
                schema_version: meta.schema_version,
                state: BenchmarkState::Pending,
                submitted_at: Utc::now(),
                wall_seconds: meta.wall_seconds,
            };
            reg.record(RegistryEvent::Submitted { benchmark: benchmark.clone() })?;
            Ok(benchmark)
        })
    }

    pub fn activate(&self, project: &ProjectId, benchmark_id: &str) -> Result<Benchmark, RegistryError> {
        self.with_project_mut(project, |reg| {
            let b = reg.get(benchmark_id)?;
            if b.state == BenchmarkState::Pending {
                reg.record(RegistryEvent::Activated { benchmark_id: benchmark_id.to_string(), at: Utc::now() })?;
            }
            reg.get(benchmark_id).cloned()
        })
    }

    /// Retires a benchmark. A second call returns the original tombstone
    /// without writing another.
    pub fn retire(&self, project: &ProjectId, benchmark_id: &str, reason: &str, actor: &str) -> Result<Tombstone, RegistryError> {
        self.with_project_mut(project, |reg| {
            if reg.get(benchmark_id)?.state == BenchmarkState::Retired {
                return reg
                    .tombstones
                    .iter()
                    .find(|t| t.benchmark_id == benchmark_id)
                    .cloned()
                    .ok_or_else(|| RegistryError::Storage(format!("retired {benchmark_id} has no tombstone")));
            }
            let tombstone = Tombstone {
                benchmark_id: benchmark_id.to_string(),
                reason: reason.to_string(),
                actor: actor.to_string(),
                retired_at: Utc::now(),
            };
            reg.record(RegistryEvent::Retired { tombstone: tombstone.clone() })?;
            Ok(tombstone)
        })
    }

    pub fn link_benchmark(&self, project: &ProjectId, benchmark_id: &str, link: PublicationLink) -> Result<Benchmark, RegistryError> {
        link.validate().map_err(RegistryError::BadDoi)?;
        self.with_project_mut(project, |reg| {
            reg.get(benchmark_id)?;
            reg.record(RegistryEvent::BenchmarkLinked {
                benchmark_id: benchmark_id.to_string(),
                publication: link,
                at: Utc::now(),
            })?;
            reg.get(benchmark_id).cloned()
        })
    }

    pub fn link_project(&self, project: &ProjectId, link: PublicationLink) -> Result<Vec<PublicationLink>, RegistryError> {
        link.validate().map_err(RegistryError::BadDoi)?;
        self.with_project_mut(project, |reg| {
            reg.record(RegistryEvent::ProjectLinked { publication: link, at: Utc::now() })?;
            Ok(reg.project_links.clone())
        })
    }

    pub fn project_links(&self, project: &ProjectId) -> Vec<PublicationLink> {
        self.lock().get(project).map(|r| r.project_links.clone()).unwrap_or_default()
    }

    pub fn get(&self, project: &ProjectId, benchmark_id: &str) -> Option<Benchmark> {
        self.lock().get(project)?.benchmarks.get(benchmark_id).cloned()
    }

    /// Every benchmark of the project in submission order.
    pub fn list(&self, project: &ProjectId) -> Vec<Benchmark> {
        let projects = self.lock();
        let Some(reg) = projects.get(project) else { return Vec::new() };
        reg.order.iter().map(|id| reg.benchmarks[id].clone()).collect()
    }

    /// ACTIVE benchmarks, by id.
    pub fn active(&self, project: &ProjectId) -> Vec<Benchmark> {
        let projects = self.lock();
        let Some(reg) = projects.get(project) else { return Vec::new() };
        reg.benchmarks.values().filter(|b| b.state == BenchmarkState::Active).cloned().collect()
    }

    pub fn tombstones(&self, project: &ProjectId) -> Vec<Tombstone> {
        self.lock().get(project).map(|r| r.tombstones.clone()).unwrap_or_default()
    }

    pub fn blob_path(&self, digest: &Digest) -> PathBuf {
        self.root.join("blobs").join(&digest.as_str()[..2]).join(digest.as_str())
    }

    pub fn model(&self, benchmark: &Benchmark) -> std::io::Result<Vec<u8>> {
        std::fs::read(self.blob_path(&benchmark.model_digest))
    }

    pub fn case(&self, benchmark: &Benchmark) -> BenchmarkCase {
        BenchmarkCase {
            benchmark_id: benchmark.benchmark_id.clone(),
            assertion: benchmark.assertion.clone(),
            algorithm_tags: benchmark.algorithm_tags.clone(),
            wall_seconds: benchmark.wall_seconds,
            model_path: self.blob_path(&benchmark.model_digest),
        }
    }

    fn store_blob(&self, digest: &Digest, bytes: &[u8]) -> Result<(), RegistryError> {
        let path = self.blob_path(digest);
        if path.is_file() && Digest::of(&std::fs::read(&path).unwrap_or_default()) == *digest {
            return Ok(());
        }
        let parent = path.parent().expect("blob path has a parent");
        let write = || -> std::io::Result<()> {
            std::fs::create_dir_all(parent)?;
            let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
            std::io::Write::write_all(&mut tmp, bytes)?;
            tmp.as_file().sync_all()?;
            tmp.persist(&path).map_err(|e| e.error)?;
            Ok(())
        };
        write().map_err(|e| RegistryError::Storage(format!("{}: {e}", path.display())))
    }
}

fn open_project(path: &Path) -> Result<ProjectRegistry, RegistryError> {
    let opened = JsonlLog::<RegistryEvent>::open(path).map_err(|e| RegistryError::Storage(e.to_string()))?;
    let mut reg = ProjectRegistry {
        log: opened.log,
        benchmarks: BTreeMap::new(),
        order: Vec::new(),
        tombstones: Vec::new(),
        project_links: Vec::new(),
    };
    for event in opened.records {
        reg.apply(event);
    }
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(expect: &str) -> SubmissionMeta {
        SubmissionMeta::new("modeller@example.org", Assertion::key_equals([("result", expect)]))
    }

    fn registry(dir: &Path) -> Registry {
        Registry::open(dir, 64).unwrap()
    }

    #[test]
    fn submit_activate_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProjectId::new("p");
        let reg = registry(dir.path());
        let b = reg.submit(&p, meta("STABLE"), b"node a 1\n").unwrap();
        assert_eq!(b.state, BenchmarkState::Pending);
        assert_eq!(b.model_digest, Digest::of(b"node a 1\n"));
        assert_eq!(reg.model(&b).unwrap(), b"node a 1\n");
        assert!(reg.active(&p).is_empty());
        reg.activate(&p, &b.benchmark_id).unwrap();
        drop(reg);
        let reg = registry(dir.path());
        assert_eq!(reg.active(&p).len(), 1);
        assert_eq!(reg.get(&p, &b.benchmark_id).unwrap().state, BenchmarkState::Active);
    }

    #[test]
    fn duplicates_and_limits_store_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProjectId::new("p");
        let reg = registry(dir.path());
        reg.submit(&p, meta("STABLE"), b"m").unwrap();
        assert!(matches!(reg.submit(&p, meta("STABLE"), b"m"), Err(RegistryError::Duplicate(_))));
        // a different assertion on the same model is a different benchmark
        reg.submit(&p, meta("UNSTABLE"), b"m").unwrap();
        let big = vec![b'x'; 65];
        assert!(matches!(reg.submit(&p, meta("S"), &big), Err(RegistryError::TooLarge { size: 65, max: 64 })));
        let mut named = meta("S");
        named.benchmark_id = Some("b1".into());
        reg.submit(&p, named.clone(), b"n1").unwrap();
        assert!(matches!(reg.submit(&p, named, b"n2"), Err(RegistryError::Duplicate(_))));
        assert_eq!(reg.list(&p).len(), 3);
    }

    #[test]
    fn retired_benchmarks_free_their_slot_and_retire_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProjectId::new("p");
        let reg = registry(dir.path());
        let b = reg.submit(&p, meta("STABLE"), b"m").unwrap();
        reg.activate(&p, &b.benchmark_id).unwrap();
        let t1 = reg.retire(&p, &b.benchmark_id, "semantics change v2", "curator").unwrap();
        let t2 = reg.retire(&p, &b.benchmark_id, "again", "someone").unwrap();
        assert_eq!(t1, t2);
        assert_eq!(reg.tombstones(&p).len(), 1);
        assert!(reg.active(&p).is_empty());
        assert_eq!(reg.list(&p).len(), 1);
        assert!(matches!(reg.retire(&p, "ghost", "", ""), Err(RegistryError::NotFound(_))));
        reg.submit(&p, meta("STABLE"), b"m").unwrap();
    }

    #[test]
    fn publication_links_append_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProjectId::new("p");
        let reg = registry(dir.path());
        let b = reg.submit(&p, meta("STABLE"), b"m").unwrap();
        reg.link_benchmark(&p, &b.benchmark_id, PublicationLink::new("10.1000/x1", "first")).unwrap();
        let b = reg.link_benchmark(&p, &b.benchmark_id, PublicationLink::new("10.1000/x2", "fix")).unwrap();
        let dois: Vec<_> = b.publications.iter().map(|l| l.doi.as_str()).collect();
        assert_eq!(dois, ["10.1000/x1", "10.1000/x2"]);
        assert!(matches!(
            reg.link_benchmark(&p, &b.benchmark_id, PublicationLink::new("", "")),
            Err(RegistryError::BadDoi(_))
        ));
        reg.link_project(&p, PublicationLink::new("10.1000/article", "article")).unwrap();
        drop(reg);
        let reg = registry(dir.path());
        assert_eq!(reg.project_links(&p).len(), 1);
        assert_eq!(reg.get(&p, &b.benchmark_id).unwrap().publications.len(), 2);
    }

    #[test]
    fn malformed_submissions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProjectId::new("p");
        let reg = registry(dir.path());
        let mut m = meta("S");
        m.publication = Some(PublicationLink::new("doi:nope", ""));
        assert!(matches!(reg.submit(&p, m, b"m"), Err(RegistryError::BadDoi(_))));
        let m = SubmissionMeta::new("x", Assertion::KeyEquals { expectations: vec![] });
        assert!(matches!(reg.submit(&p, m, b"m"), Err(RegistryError::Invalid(_))));
        let mut m = meta("S");
        m.benchmark_id = Some("../escape".into());
        assert!(matches!(reg.submit(&p, m, b"m"), Err(RegistryError::Invalid(_))));
        assert!(reg.list(&p).is_empty());
    }
}
