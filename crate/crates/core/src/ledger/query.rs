// SPDX-License-Identifier: Apache-2.0

//! Read-only analyses over a project's run records. Every function here is
//! a pure function of the record slice.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RunRecord;
use crate::harness::CellStatus;
use crate::ids::{CommitId, Digest, Timestamp};
use crate::ingest::CommitRef;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("no run recorded for commit {0}")]
    NoRun(String),
    #[error("no runs recorded")]
    NoData,
}

impl QueryError {
    pub fn code(&self) -> &'static str {
        match self {
            QueryError::NoRun(_) => "NO_RUN",
            QueryError::NoData => "NO_DATA",
        }
    }
}

/// Records in run order: start time, then append order.
pub fn in_run_order(records: &[RunRecord]) -> Vec<&RunRecord> {
    let mut ordered: Vec<&RunRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.started_at);
    ordered
}

/// Newest run at `commit`.
pub fn latest_for_commit<'a>(records: &'a [RunRecord], commit: &CommitId) -> Option<&'a RunRecord> {
    in_run_order(records).into_iter().rev().find(|r| &r.commit.commit_id == commit)
}

pub fn latest(records: &[RunRecord]) -> Option<&RunRecord> {
    in_run_order(records).into_iter().next_back()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub run_id: String,
    pub commit_id: CommitId,
    pub started_at: Timestamp,
    pub status: CellStatus,
    pub output_digest: Option<Digest>,
    /// Advisory only.
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub benchmark_id: String,
    pub algorithm: String,
    pub entries: Vec<HistoryEntry>,
    /// The entries' timings were taken on differing hosts.
    pub non_comparable: bool,
}

pub fn history(records: &[RunRecord], benchmark_id: &str, algorithm: &str) -> History {
    let mut entries = Vec::new();
    let mut fingerprints = Vec::new();
    for r in in_run_order(records) {
        if let Some(c) = r.cells.iter().find(|c| c.benchmark_id == benchmark_id && c.algorithm == algorithm) {
            entries.push(HistoryEntry {
                run_id: r.run_id.clone(),
                commit_id: r.commit.commit_id.clone(),
                started_at: r.started_at,
                status: c.status,
                output_digest: c.output_digest.clone(),
                wall_ms: c.wall_ms,
            });
            if !fingerprints.contains(&&r.env_fingerprint) {
                fingerprints.push(&r.env_fingerprint);
            }
        }
    }
    History {
        benchmark_id: benchmark_id.to_string(),
        algorithm: algorithm.to_string(),
        entries,
        non_comparable: fingerprints.len() > 1,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub benchmark_id: String,
    pub algorithm: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellChange {
    pub benchmark_id: String,
    pub algorithm: String,
    pub old_status: CellStatus,
    pub new_status: CellStatus,
    pub old_digest: Option<Digest>,
    pub new_digest: Option<Digest>,
}

impl CellChange {
    pub fn reversed(&self) -> CellChange {
        CellChange {
            benchmark_id: self.benchmark_id.clone(),
            algorithm: self.algorithm.clone(),
            old_status: self.new_status,
            new_status: self.old_status,
            old_digest: self.new_digest.clone(),
            new_digest: self.old_digest.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorDiff {
    pub from_commit: CommitRef,
    pub to_commit: CommitRef,
    pub from_run: String,
    pub to_run: String,
    /// Cells in both runs whose (status, output digest) differ, by key.
    pub changes: Vec<CellChange>,
    /// Cells only in the later run.
    pub added_cells: Vec<CellKey>,
    /// Cells only in the earlier run.
    pub removed_cells: Vec<CellKey>,
}

/// Compares the latest run at each commit.
pub fn diff_commits(records: &[RunRecord], from: &CommitId, to: &CommitId) -> Result<BehaviorDiff, QueryError> {
    let a = latest_for_commit(records, from).ok_or_else(|| QueryError::NoRun(from.to_string()))?;
    let b = latest_for_commit(records, to).ok_or_else(|| QueryError::NoRun(to.to_string()))?;
    Ok(diff_runs(a, b))
}

pub fn diff_runs(a: &RunRecord, b: &RunRecord) -> BehaviorDiff {
    let index = |r: &RunRecord| -> BTreeMap<CellKey, (CellStatus, Option<Digest>)> {
        r.cells
            .iter()
            .map(|c| {
                let key = CellKey { benchmark_id: c.benchmark_id.clone(), algorithm: c.algorithm.clone() };
                (key, (c.status, c.output_digest.clone()))
            })
            .collect()
    };
    let old = index(a);
    let new = index(b);
    let mut changes = Vec::new();
    let mut removed_cells = Vec::new();
    for (key, (old_status, old_digest)) in &old {
        match new.get(key) {
            None => removed_cells.push(key.clone()),
            Some((new_status, new_digest)) if (old_status, old_digest) != (new_status, new_digest) => {
                changes.push(CellChange {
                    benchmark_id: key.benchmark_id.clone(),
                    algorithm: key.algorithm.clone(),
                    old_status: *old_status,
                    new_status: *new_status,
                    old_digest: old_digest.clone(),
                    new_digest: new_digest.clone(),
                })
            }
            Some(_) => {}
        }
    }
    let added_cells = new.keys().filter(|k| !old.contains_key(*k)).cloned().collect();
    BehaviorDiff {
        from_commit: a.commit.clone(),
        to_commit: b.commit.clone(),
        from_run: a.run_id.clone(),
        to_run: b.run_id.clone(),
        changes,
        added_cells,
        removed_cells,
    }
}

/// Earliest commit whose status left PASS, looking only at runs that
/// contain the cell.
pub fn first_regression(records: &[RunRecord], benchmark_id: &str, algorithm: &str) -> Option<CommitId> {
    let entries = history(records, benchmark_id, algorithm).entries;
    entries
        .windows(2)
        .find(|w| w[0].status.is_pass() && !w[1].status.is_pass())
        .map(|w| w[1].commit_id.clone())
}

/// Distinct commits in order of their first run.
pub fn commits_in_order(records: &[RunRecord]) -> Vec<CommitId> {
    let mut seen = Vec::new();
    for r in in_run_order(records) {
        if !seen.contains(&r.commit.commit_id) {
            seen.push(r.commit.commit_id.clone());
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::records::{cell, record};
    use CellStatus::*;

    fn run(commit: &str, seq: i64, cells: &[(&str, CellStatus)]) -> RunRecord {
        let cells: Vec<_> = cells.iter().map(|(b, s)| cell(b, "alg", *s)).collect();
        record("p", commit, seq, &cells)
    }

    fn c(s: &str) -> CommitId {
        CommitId::parse(s).unwrap()
    }

    #[test]
    fn history_counts_runs_containing_the_cell() {
        let rs = vec![
            run("c1", 0, &[("b1", Pass)]),
            run("c2", 1, &[("b1", Pass), ("b2", Pass)]),
            run("c3", 2, &[("b1", Pass), ("b2", Pass)]),
        ];
        assert_eq!(history(&rs, "b1", "alg").entries.len(), 3);
        let h2 = history(&rs, "b2", "alg");
        assert_eq!(h2.entries.len(), 2);
        assert_eq!(h2.entries[0].commit_id, c("c2"));
        assert!(!h2.non_comparable);
        assert!(history(&rs, "nope", "alg").entries.is_empty());
    }

    #[test]
    fn differing_hosts_are_flagged() {
        let mut rs = vec![run("c1", 0, &[("b1", Pass)]), run("c2", 1, &[("b1", Pass)])];
        rs[1].env_fingerprint.concurrency = 8;
        assert!(history(&rs, "b1", "alg").non_comparable);
    }

    #[test]
    fn history_is_ordered_by_start_time() {
        let rs = vec![run("c2", 5, &[("b1", Fail)]), run("c1", 1, &[("b1", Pass)])];
        let h = history(&rs, "b1", "alg");
        assert_eq!(h.entries[0].commit_id, c("c1"));
        assert_eq!(first_regression(&rs, "b1", "alg"), Some(c("c2")));
    }

    #[test]
    fn diff_partitions_changes_and_added_cells() {
        let rs = vec![
            run("c1", 0, &[("b1", Pass), ("b2", Pass)]),
            run("c2", 1, &[("b1", Pass), ("b2", Fail), ("b3", Pass)]),
        ];
        let d = diff_commits(&rs, &c("c1"), &c("c2")).unwrap();
        assert_eq!(d.changes.len(), 1);
        assert_eq!((d.changes[0].benchmark_id.as_str(), d.changes[0].old_status, d.changes[0].new_status), ("b2", Pass, Fail));
        assert_eq!(d.added_cells, vec![CellKey { benchmark_id: "b3".into(), algorithm: "alg".into() }]);
        assert!(d.removed_cells.is_empty());

        let back = diff_commits(&rs, &c("c2"), &c("c1")).unwrap();
        assert_eq!(back.changes, d.changes.iter().map(CellChange::reversed).collect::<Vec<_>>());
        assert_eq!(back.removed_cells, d.added_cells);

        let same = diff_commits(&rs, &c("c1"), &c("c1")).unwrap();
        assert!(same.changes.is_empty() && same.added_cells.is_empty() && same.removed_cells.is_empty());
        assert_eq!(diff_commits(&rs, &c("c1"), &c("c9")), Err(QueryError::NoRun("c9".into())));
    }

    #[test]
    fn latest_run_per_commit_wins() {
        let rs = vec![
            run("c1", 0, &[("b1", Fail)]),
            run("c2", 1, &[("b1", Pass)]),
            run("c1", 2, &[("b1", Pass)]),
        ];
        assert!(diff_commits(&rs, &c("c1"), &c("c2")).unwrap().changes.is_empty());
    }

    #[test]
    fn first_regression_examples() {
        let seq = |statuses: &[CellStatus]| -> Vec<RunRecord> {
            statuses.iter().enumerate().map(|(i, s)| run(&format!("c{}", i + 1), i as i64, &[("b", *s)])).collect()
        };
        assert_eq!(first_regression(&seq(&[Pass, Pass, Fail, Fail]), "b", "alg"), Some(c("c3")));
        assert_eq!(first_regression(&seq(&[Fail, Pass, Pass]), "b", "alg"), None);
        assert_eq!(first_regression(&seq(&[Pass, Timeout, Pass, Fail]), "b", "alg"), Some(c("c2")));
        assert_eq!(first_regression(&seq(&[Pass, Error]), "b", "alg"), Some(c("c2")));
        assert_eq!(first_regression(&[], "b", "alg"), None);
    }
}
