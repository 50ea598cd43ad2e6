// SPDX-License-Identifier: Apache-2.0

//! Registered projects and venue policies, persisted as an event log.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use chrono::{SubsecRound, Utc};
use serde::{Deserialize, Serialize};

use crate::ids::{ProjectId, Timestamp};
use crate::ingest::Project;
use crate::ledger::is_path_safe;
use crate::ledger::log::JsonlLog;
use crate::pipeline::fetch::SourceLocator;
use crate::pipeline::manifest::MANIFEST_FILE_NAME;
use crate::report::{PolicyError, PolicyMode, VenuePolicy};

pub const CATALOG_LOG_NAME: &str = "catalog.jsonl";
/// Venue assigned when a registration names none.
pub const DEFAULT_VENUE: &str = "default";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Registration {
    pub name: String,
    pub source: String,
    #[serde(default)]
    pub manifest_path: Option<String>,
    /// Venue id.
    #[serde(default)]
    pub policy: Option<String>,
    /// Derived from the name when absent.
    #[serde(default)]
    pub project_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error("a project named {0:?} already exists")]
    DuplicateName(String),
    #[error("source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("catalog storage: {0}")]
    Storage(String),
}

impl CatalogError {
    pub fn code(&self) -> &'static str {
        match self {
            CatalogError::DuplicateName(_) => "DUPLICATE_NAME",
            CatalogError::SourceUnavailable(_) => "SOURCE_UNAVAILABLE",
            CatalogError::Invalid(_) => "BAD_REQUEST",
            CatalogError::NotFound(_) => "NOT_FOUND",
            CatalogError::Policy(e) => e.code(),
            CatalogError::Storage(_) => "INTERNAL",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
enum CatalogEvent {
    ProjectRegistered { project: Project },
    VenueSet { policy: VenuePolicy, at: Timestamp },
}

struct State {
    log: JsonlLog<CatalogEvent>,
    projects: BTreeMap<ProjectId, Project>,
    venues: BTreeMap<String, VenuePolicy>,
}

impl State {
    fn apply(&mut self, event: CatalogEvent) {
        match event {
            CatalogEvent::ProjectRegistered { project } => {
                self.projects.insert(project.project_id.clone(), project);
            }
            CatalogEvent::VenueSet { policy, .. } => {
                self.venues.insert(policy.venue_id.clone(), policy);
            }
        }
    }

    fn record(&mut self, event: CatalogEvent) -> Result<(), CatalogError> {
        self.log.append(&event).map_err(|e| CatalogError::Storage(e.to_string()))?;
        self.apply(event);
        Ok(())
    }
}

pub struct Catalog {
    state: Mutex<State>,
}

impl Catalog {
    pub fn open(path: &Path) -> Result<Self, CatalogError> {
        let opened = JsonlLog::open(path).map_err(|e| CatalogError::Storage(e.to_string()))?;
        if let Some(torn) = &opened.torn {
            tracing::warn!(path = %path.display(), line = torn.line, "discarded torn catalog entry");
        }
        let mut state = State { log: opened.log, projects: BTreeMap::new(), venues: BTreeMap::new() };
        for event in opened.records {
            state.apply(event);
        }
        Ok(Self { state: Mutex::new(state) })
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Persists a new project. An unknown venue is created in OPTIONAL mode.
    pub fn register(&self, req: Registration) -> Result<Project, CatalogError> {
        let name = req.name.trim().to_string();
        if name.is_empty() {
            return Err(CatalogError::Invalid("name must not be empty".into()));
        }
        let project_id = match &req.project_id {
            Some(id) if is_path_safe(id) => ProjectId::new(id.clone()),
            Some(id) => return Err(CatalogError::Invalid(format!("project id {id:?} must match [A-Za-z0-9._-]+"))),
            None => ProjectId::slugify(&name)
                .ok_or_else(|| CatalogError::Invalid(format!("cannot derive a project id from {name:?}")))?,
        };
        let manifest_path = req.manifest_path.unwrap_or_else(|| MANIFEST_FILE_NAME.to_string());
        let rel = Path::new(&manifest_path);
        if manifest_path.is_empty()
            || rel.is_absolute()
            || rel.components().any(|c| !matches!(c, std::path::Component::Normal(_) | std::path::Component::CurDir))
        {
            return Err(CatalogError::Invalid(format!("manifest_path {manifest_path:?} must stay inside the source tree")));
        }
        let locator = SourceLocator::parse(&req.source);
        if !locator.is_reachable() {
            return Err(CatalogError::SourceUnavailable(req.source));
        }
        let venue = req.policy.unwrap_or_else(|| DEFAULT_VENUE.to_string());

        let mut state = self.lock();
        if state.projects.values().any(|p| p.name == name) {
            return Err(CatalogError::DuplicateName(name));
        }
        if state.projects.contains_key(&project_id) {
            return Err(CatalogError::DuplicateName(project_id.to_string()));
        }
        let now = Utc::now().trunc_subsecs(0);
        if !state.venues.contains_key(&venue) {
            let policy = VenuePolicy::new(venue.clone(), PolicyMode::Optional, venue.clone());
            state.record(CatalogEvent::VenueSet { policy, at: now })?;
        }
        let project = Project {
            project_id,
            name,
            source: req.source,
            manifest_path,
            policy: venue,
            publications: Vec::new(),
            created_at: now,
        };
        state.record(CatalogEvent::ProjectRegistered { project: project.clone() })?;
        Ok(project)
    }

    pub fn project(&self, id: &ProjectId) -> Option<Project> {
        self.lock().projects.get(id).cloned()
    }

    pub fn projects(&self) -> Vec<Project> {
        self.lock().projects.values().cloned().collect()
    }

    pub fn contains(&self, id: &ProjectId) -> bool {
        self.lock().projects.contains_key(id)
    }

    pub fn venue(&self, venue_id: &str) -> Option<VenuePolicy> {
        self.lock().venues.get(venue_id).cloned()
    }

    /// Creates a venue or moves its mandate forward.
    pub fn set_venue(&self, venue_id: &str, mode: PolicyMode, label: Option<String>) -> Result<VenuePolicy, CatalogError> {
        if venue_id.is_empty() {
            return Err(CatalogError::Invalid("venue id must not be empty".into()));
        }
        let mut state = self.lock();
        let policy = match state.venues.get(venue_id) {
            Some(existing) => {
                let mut next = existing.clone();
                next.advance(mode)?;
                if let Some(label) = label {
                    next.label = label;
                }
                next
            }
            None => VenuePolicy::new(venue_id, mode, label.unwrap_or_else(|| venue_id.to_string())),
        };
        if state.venues.get(venue_id) != Some(&policy) {
            state.record(CatalogEvent::VenueSet { policy: policy.clone(), at: Utc::now() })?;
        }
        Ok(policy)
    }

    pub fn projects_in_venue(&self, venue_id: &str) -> Vec<Project> {
        self.lock().projects.values().filter(|p| p.policy == venue_id).cloned().collect()
    }
}
