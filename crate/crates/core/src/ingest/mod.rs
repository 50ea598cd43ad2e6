// SPDX-License-Identifier: Apache-2.0

//! Intake of run triggers and per-project job serialization.

mod queue;

pub use queue::{DependencyIndex, Ingest, PushEvent};

use serde::{Deserialize, Serialize};

use crate::ids::{CommitId, ProjectId, Timestamp};
use crate::registry::PublicationLink;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("project {0} is not registered")]
    NotRegistered(String),
    #[error("bad event: {0}")]
    BadEvent(String),
    #[error("source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("job journal: {0}")]
    Journal(String),
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::NotRegistered(_) => "NOT_REGISTERED",
            IngestError::BadEvent(_) => "BAD_EVENT",
            IngestError::SourceUnavailable(_) => "SOURCE_UNAVAILABLE",
            IngestError::Journal(_) => "INTERNAL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub project_id: ProjectId,
    pub name: String,
    /// Local path or fetchable repository URL.
    pub source: String,
    /// Relative path of the manifest inside the source tree.
    pub manifest_path: String,
    /// Venue whose policy applies to this project.
    pub policy: String,
    #[serde(default)]
    pub publications: Vec<PublicationLink>,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRef {
    pub project_id: ProjectId,
    pub commit_id: CommitId,
    pub observed_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TriggerKind {
    Push,
    DependencyUpdate,
    Manual,
    SubmissionValidation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyBump {
    pub name: String,
    pub new_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub kind: TriggerKind,
    pub project_id: ProjectId,
    pub commit: Option<CommitRef>,
    pub dependency: Option<DependencyBump>,
    pub received_at: Timestamp,
    pub event_id: String,
}

impl TriggerEvent {
    /// `PUSH`/`MANUAL` carry a commit, `DEPENDENCY_UPDATE` a dependency.
    pub fn is_well_formed(&self) -> bool {
        match self.kind {
            TriggerKind::Push | TriggerKind::Manual => self.commit.is_some(),
            TriggerKind::DependencyUpdate => self.dependency.is_some(),
            TriggerKind::SubmissionValidation => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Queued,
    Running,
    Done,
    FailedInternal,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::FailedInternal)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub trigger: TriggerEvent,
    pub state: JobState,
    pub enqueued_at: Timestamp,
    pub started_at: Option<Timestamp>,
    pub finished_at: Option<Timestamp>,
    /// Run produced by this job, once DONE.
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}

impl Job {
    pub fn project_id(&self) -> &ProjectId {
        &self.trigger.project_id
    }

    pub fn commit(&self) -> Option<&CommitRef> {
        self.trigger.commit.as_ref()
    }
}
