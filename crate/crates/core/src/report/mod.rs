// SPDX-License-Identifier: Apache-2.0

//! Traffic-light grading, ranking, badges and venue policy.
//!
//! Everything here is a pure function of run records. Timings and host
//! fingerprints are never consulted.

mod policy;

pub use policy::{apply_policy, PolicyError, PolicyMode, ReviewAnnotation, VenuePolicy};

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::harness::CellStatus;
use crate::ids::{CommitId, ProjectId, Timestamp};
use crate::ledger::query::{latest_for_commit, QueryError};
use crate::ledger::RunRecord;
use crate::pipeline::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Color {
    Green,
    Amber,
    Red,
}

impl Color {
    pub fn label(self) -> &'static str {
        match self {
            Color::Green => "GREEN",
            Color::Amber => "AMBER",
            Color::Red => "RED",
        }
    }

    /// Exit code of the one-shot evaluation mode.
    pub fn exit_code(self) -> i32 {
        match self {
            Color::Green => 0,
            Color::Amber => 1,
            Color::Red => 2,
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonPassCell {
    pub benchmark_id: String,
    pub algorithm: String,
    pub status: CellStatus,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub pass: u64,
    pub fail: u64,
    pub timeout: u64,
    pub error: u64,
}

impl CellCounts {
    pub fn total(&self) -> u64 {
        self.pass + self.fail + self.timeout + self.error
    }
}

/// Why a run got its color.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decided_by", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Derivation {
    /// A pipeline stage or the sanity tests did not succeed.
    Stage { stage: String, status: String },
    /// Tests passed; lists every non-PASS cell.
    Cells { counts: CellCounts, non_pass: Vec<NonPassCell> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub color: Color,
    pub derivation: Derivation,
}

pub fn cell_counts(record: &RunRecord) -> CellCounts {
    let mut counts = CellCounts::default();
    for c in &record.cells {
        match c.status {
            CellStatus::Pass => counts.pass += 1,
            CellStatus::Fail => counts.fail += 1,
            CellStatus::Timeout => counts.timeout += 1,
            CellStatus::Error => counts.error += 1,
        }
    }
    counts
}

pub fn grade(record: &RunRecord) -> TrafficLight {
    let red = |stage: &str, status: &str| TrafficLight {
        color: Color::Red,
        derivation: Derivation::Stage { stage: stage.to_string(), status: status.to_string() },
    };
    for s in &record.stages {
        if !s.status.is_ok() {
            return red(s.stage.label(), s.status.label());
        }
    }
    if record.stages.len() < 3 {
        let missing = [Stage::Fetch, Stage::Deps, Stage::Build][record.stages.len()];
        return red(missing.label(), "MISSING");
    }
    match &record.test {
        None => return red("TEST", "MISSING"),
        Some(t) if !t.status.is_ok() => return red("TEST", t.status.label()),
        Some(_) => {}
    }
    let mut non_pass: Vec<NonPassCell> = record
        .cells
        .iter()
        .filter(|c| !c.status.is_pass())
        .map(|c| NonPassCell { benchmark_id: c.benchmark_id.clone(), algorithm: c.algorithm.clone(), status: c.status })
        .collect();
    non_pass.sort_by(|a, b| (&a.benchmark_id, &a.algorithm).cmp(&(&b.benchmark_id, &b.algorithm)));
    let color = if non_pass.is_empty() { Color::Green } else { Color::Amber };
    TrafficLight { color, derivation: Derivation::Cells { counts: cell_counts(record), non_pass } }
}

/// PASS cells over all cells; zero when there are no cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PassFraction {
    pub passed: u64,
    pub total: u64,
}

impl PassFraction {
    pub fn of(record: &RunRecord) -> Self {
        let total = record.cells.len() as u64;
        let passed = record.cells.iter().filter(|c| c.status.is_pass()).count() as u64;
        Self { passed, total }
    }

    /// Compares the rational values exactly; an empty matrix counts as 0.
    pub fn cmp_value(&self, other: &PassFraction) -> Ordering {
        let lhs = (self.passed as u128) * (other.total.max(1) as u128);
        let rhs = (other.passed as u128) * (self.total.max(1) as u128);
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for PassFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.total == 0 {
            f.write_str("0")
        } else {
            write!(f, "{}/{}", self.passed, self.total)
        }
    }
}

impl Serialize for PassFraction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PassFraction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        if raw == "0" {
            return Ok(Self { passed: 0, total: 0 });
        }
        let parsed = raw
            .split_once('/')
            .and_then(|(p, t)| Some(Self { passed: p.parse().ok()?, total: t.parse().ok()? }))
            .filter(|f| f.total > 0 && f.passed <= f.total);
        parsed.ok_or_else(|| serde::de::Error::custom(format!("bad pass fraction {raw:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub submission_id: String,
    pub run_id: String,
    pub commit_id: CommitId,
    pub color: Color,
    pub pass_fraction: PassFraction,
    pub cell_count: u64,
    /// Final key making the order total when a submission appears twice.
    pub tiebreak_key: String,
}

/// Orders entries by color, pass fraction (desc), cell count (desc),
/// submission id, then run id.
pub fn rank_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    a.color
        .cmp(&b.color)
        .then_with(|| b.pass_fraction.cmp_value(&a.pass_fraction))
        .then_with(|| b.cell_count.cmp(&a.cell_count))
        .then_with(|| a.submission_id.cmp(&b.submission_id))
        .then_with(|| a.tiebreak_key.cmp(&b.tiebreak_key))
}

pub fn ranked_entry(record: &RunRecord) -> RankedEntry {
    RankedEntry {
        submission_id: record.commit.project_id.to_string(),
        run_id: record.run_id.clone(),
        commit_id: record.commit.commit_id.clone(),
        color: grade(record).color,
        pass_fraction: PassFraction::of(record),
        cell_count: record.cells.len() as u64,
        tiebreak_key: record.run_id.clone(),
    }
}

pub fn rank(records: &[RunRecord]) -> Vec<RankedEntry> {
    let mut entries: Vec<RankedEntry> = records.iter().map(ranked_entry).collect();
    entries.sort_by(rank_order);
    entries
}

/// Machine-readable badge. Carries no timing fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Badge {
    pub project: ProjectId,
    pub commit: CommitId,
    pub color: Color,
    pub pass_fraction: PassFraction,
    pub generated_at: Timestamp,
    pub run_id: String,
}

pub fn badge_for(record: &RunRecord, generated_at: Timestamp) -> Badge {
    Badge {
        project: record.commit.project_id.clone(),
        commit: record.commit.commit_id.clone(),
        color: grade(record).color,
        pass_fraction: PassFraction::of(record),
        generated_at,
        run_id: record.run_id.clone(),
    }
}

/// Badge of the newest run at `commit`.
pub fn render_badge(records: &[RunRecord], commit: &CommitId, generated_at: Timestamp) -> Result<Badge, QueryError> {
    latest_for_commit(records, commit)
        .map(|r| badge_for(r, generated_at))
        .ok_or_else(|| QueryError::NoRun(commit.to_string()))
}
