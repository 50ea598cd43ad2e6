// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::harness::timing::HostFingerprint;
use crate::harness::{CellOutcome, TestOutcome};
use crate::ids::{Digest, Timestamp};
use crate::ingest::{CommitRef, TriggerEvent};
use crate::pipeline::{Stage, StageOutcome};

const STAGE_ORDER: [Stage; 3] = [Stage::Fetch, Stage::Deps, Stage::Build];

/// The complete outcome of one pipeline execution at one commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub trigger: TriggerEvent,
    pub commit: CommitRef,
    /// Absent when the manifest could not be read.
    pub manifest_digest: Option<Digest>,
    pub stages: Vec<StageOutcome>,
    pub test: Option<TestOutcome>,
    pub cells: Vec<CellOutcome>,
    pub env_fingerprint: HostFingerprint,
    /// Sandbox environment with the workspace root replaced by a token.
    #[serde(default)]
    pub sandbox_env: BTreeMap<String, String>,
    pub started_at: Timestamp,
    pub finished_at: Timestamp,
}

impl RunRecord {
    /// Checks the stage-prefix rule and cell ordering.
    pub fn validate(&self) -> Result<(), String> {
        if self.run_id.is_empty() {
            return Err("run_id must not be empty".into());
        }
        if self.commit.project_id != self.trigger.project_id {
            return Err("commit and trigger name different projects".into());
        }
        if self.stages.len() > STAGE_ORDER.len() {
            return Err(format!("{} stage outcomes, at most 3 allowed", self.stages.len()));
        }
        for (i, outcome) in self.stages.iter().enumerate() {
            if outcome.stage != STAGE_ORDER[i] {
                return Err(format!("stage {} is {:?}, expected {:?}", i, outcome.stage, STAGE_ORDER[i]));
            }
            let last = i + 1 == self.stages.len();
            if !last && !outcome.status.is_ok() {
                return Err(format!("stage {:?} did not succeed but later stages are present", outcome.stage));
            }
        }
        let built = self.stages.len() == STAGE_ORDER.len() && self.stages.iter().all(|s| s.status.is_ok());
        if self.test.is_some() && !built {
            return Err("test outcome present without a successful build".into());
        }
        let tested = self.test.as_ref().is_some_and(|t| t.status.is_ok());
        if !self.cells.is_empty() && !tested {
            return Err("cell outcomes present without passing sanity tests".into());
        }
        for pair in self.cells.windows(2) {
            if pair[0].key() >= pair[1].key() {
                return Err(format!(
                    "cells not strictly sorted at {}/{}",
                    pair[1].benchmark_id, pair[1].algorithm
                ));
            }
        }
        if let Some(c) = self.cells.iter().find(|c| c.attempt_count == 0) {
            return Err(format!("cell {}/{} has attempt_count 0", c.benchmark_id, c.algorithm));
        }
        if self.finished_at < self.started_at {
            return Err("finished_at precedes started_at".into());
        }
        Ok(())
    }

    /// BUILD and TEST both succeeded.
    pub fn is_successful_build(&self) -> bool {
        self.stages.len() == STAGE_ORDER.len()
            && self.stages.iter().all(|s| s.status.is_ok())
            && self.test.as_ref().is_some_and(|t| t.status.is_ok())
    }

    pub fn fetched(&self) -> bool {
        self.stages.first().is_some_and(|s| s.status.is_ok())
    }
}
