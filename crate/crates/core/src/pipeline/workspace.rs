// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ingest::CommitRef;

/// Fixed search path handed to every sandboxed command.
pub const BASE_PATH: &str = "/usr/local/bin:/usr/bin:/bin";
/// Token substituted for the workspace root in recorded environments.
pub const WORKSPACE_TOKEN: &str = "$WORKSPACE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Created,
    Fetched,
    DepsResolved,
    Built,
    Destroyed,
}

/// A fresh directory owned by exactly one run.
///
/// Layout under `root`: `src/` (the source tree), `deps/` (one subdirectory
/// per declared dependency), `home/`, `tmp/` and `cells/` (benchmark
/// scratch space).
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    phase: Phase,
    env_capture: Vec<(String, String)>,
    commit: CommitRef,
}

impl Workspace {
    /// Creates a new, empty workspace below `parent`. The directory name is
    /// random, so no earlier run's root can be reused.
    pub fn create(parent: &Path, commit: CommitRef) -> io::Result<Self> {
        std::fs::create_dir_all(parent)?;
        let root = parent.join(crate::ids::new_id("ws"));
        std::fs::create_dir(&root)?;
        for sub in ["src", "deps", "home", "tmp", "cells"] {
            std::fs::create_dir(root.join(sub))?;
        }
        Ok(Self { root, phase: Phase::Created, env_capture: Vec::new(), commit })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
    pub fn src_dir(&self) -> PathBuf {
        self.root.join("src")
    }
    pub fn deps_dir(&self) -> PathBuf {
        self.root.join("deps")
    }
    pub fn cells_dir(&self) -> PathBuf {
        self.root.join("cells")
    }
    pub fn phase(&self) -> Phase {
        self.phase
    }
    pub fn commit(&self) -> &CommitRef {
        &self.commit
    }
    pub fn env_capture(&self) -> &[(String, String)] {
        &self.env_capture
    }

    /// Moves to a later phase. Phases never go backwards.
    pub fn advance(&mut self, next: Phase) {
        assert!(next > self.phase, "workspace phase {:?} -> {:?} goes backwards", self.phase, next);
        self.phase = next;
    }

    /// Builds the sandbox environment: the fixed base plus whitelisted
    /// variables taken from the service's own environment. The recorded
    /// capture replaces the workspace root with [`WORKSPACE_TOKEN`] so it
    /// depends only on the whitelist and the service environment.
    pub fn environment(&mut self, whitelist: &[String], service_env: &BTreeMap<String, String>) -> Vec<(String, String)> {
        let root = self.root.display().to_string();
        let mut env = BTreeMap::new();
        for name in whitelist {
            if let Some(value) = service_env.get(name) {
                env.insert(name.clone(), value.clone());
            }
        }
        env.insert("PATH".to_string(), BASE_PATH.to_string());
        env.insert("LC_ALL".to_string(), "C".to_string());
        env.insert("HOME".to_string(), format!("{root}/home"));
        env.insert("TMPDIR".to_string(), format!("{root}/tmp"));
        env.insert("REPRO_SRC".to_string(), format!("{root}/src"));
        env.insert("REPRO_DEPS".to_string(), format!("{root}/deps"));

        let env: Vec<(String, String)> = env.into_iter().collect();
        self.env_capture = env
            .iter()
            .map(|(k, v)| (k.clone(), v.replace(&root, WORKSPACE_TOKEN)))
            .collect();
        env
    }

    pub fn destroy(&mut self) {
        if self.phase == Phase::Destroyed {
            return;
        }
        if let Err(e) = std::fs::remove_dir_all(&self.root) {
            if e.kind() != io::ErrorKind::NotFound {
                tracing::warn!(root = %self.root.display(), error = %e, "failed to remove workspace");
            }
        }
        self.phase = Phase::Destroyed;
    }
}
