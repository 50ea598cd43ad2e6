// SPDX-License-Identifier: Apache-2.0

//! Brute-force reference implementations of the ledger and registry
//! queries and of the grading rule. Written from the definitions, with
//! linear scans and no shared helpers, for equivalence tests.

use crate::harness::CellStatus;
use crate::ids::CommitId;
use crate::ledger::RunRecord;
use crate::pipeline::StageStatus;
use crate::report::Color;

/// The run at `commit` with the greatest (start time, append position).
pub fn latest_at<'a>(records: &'a [RunRecord], commit: Option<&CommitId>) -> Option<&'a RunRecord> {
    let mut best: Option<(usize, &RunRecord)> = None;
    for (i, r) in records.iter().enumerate() {
        if commit.is_some_and(|c| &r.commit.commit_id != c) {
            continue;
        }
        let newer = match best {
            None => true,
            Some((j, b)) => (r.started_at, i) > (b.started_at, j),
        };
        if newer {
            best = Some((i, r));
        }
    }
    best.map(|(_, r)| r)
}

fn status_of(run: &RunRecord, benchmark: &str, algorithm: &str) -> Option<(CellStatus, Option<String>)> {
    for c in &run.cells {
        if c.benchmark_id == benchmark && c.algorithm == algorithm {
            return Some((c.status, c.output_digest.as_ref().map(|d| d.to_string())));
        }
    }
    None
}

/// Every (benchmark, algorithm) pair appearing anywhere in `records`, sorted.
pub fn universe(records: &[RunRecord]) -> Vec<(String, String)> {
    let mut keys = Vec::new();
    for r in records {
        for c in &r.cells {
            let k = (c.benchmark_id.clone(), c.algorithm.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    keys.sort();
    keys
}

/// What the diff of the latest runs at two commits must contain.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DiffOracle {
    /// (benchmark, algorithm, old, new)
    pub changed: Vec<(String, String, CellStatus, CellStatus)>,
    pub added: Vec<(String, String)>,
    pub removed: Vec<(String, String)>,
}

pub fn diff(records: &[RunRecord], from: &CommitId, to: &CommitId) -> Option<DiffOracle> {
    let a = latest_at(records, Some(from))?;
    let b = latest_at(records, Some(to))?;
    let mut out = DiffOracle::default();
    for (bench, alg) in universe(records) {
        match (status_of(a, &bench, &alg), status_of(b, &bench, &alg)) {
            (Some(old), Some(new)) if old != new => out.changed.push((bench, alg, old.0, new.0)),
            (Some(_), None) => out.removed.push((bench, alg)),
            (None, Some(_)) => out.added.push((bench, alg)),
            _ => {}
        }
    }
    Some(out)
}

/// First commit at which the cell was observed non-PASS right after being
/// observed PASS.
pub fn first_regression(records: &[RunRecord], benchmark: &str, algorithm: &str) -> Option<CommitId> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    // Insertion sort keeps equal start times in append order.
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && records[order[j - 1]].started_at > records[order[j]].started_at {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut previous_was_pass = false;
    let mut seen_any = false;
    for i in order {
        let Some((status, _)) = status_of(&records[i], benchmark, algorithm) else { continue };
        if seen_any && previous_was_pass && status != CellStatus::Pass {
            return Some(records[i].commit.commit_id.clone());
        }
        seen_any = true;
        previous_was_pass = status == CellStatus::Pass;
    }
    None
}

/// (benchmark, timeout algorithms, passing algorithms) with both non-empty.
pub fn hard_models(run: &RunRecord) -> Vec<(String, Vec<String>, Vec<String>)> {
    let mut out = Vec::new();
    let benchmarks: Vec<String> = {
        let mut b: Vec<String> = run.cells.iter().map(|c| c.benchmark_id.clone()).collect();
        b.sort();
        b.dedup();
        b
    };
    for bench in benchmarks {
        let mut timeouts = Vec::new();
        let mut passes = Vec::new();
        for c in run.cells.iter().filter(|c| c.benchmark_id == bench) {
            if c.status == CellStatus::Timeout {
                timeouts.push(c.algorithm.clone());
            } else if c.status == CellStatus::Pass {
                passes.push(c.algorithm.clone());
            }
        }
        if !timeouts.is_empty() && !passes.is_empty() {
            timeouts.sort();
            passes.sort();
            out.push((bench, timeouts, passes));
        }
    }
    out
}

/// The traffic-light rule from its definition.
pub fn color(record: &RunRecord) -> Color {
    let built = record.stages.len() == 3 && record.stages.iter().all(|s| s.status == StageStatus::Ok);
    let tested = record.test.as_ref().is_some_and(|t| t.status == StageStatus::Ok);
    if !built || !tested {
        Color::Red
    } else if record.cells.iter().any(|c| c.status != CellStatus::Pass) {
        Color::Amber
    } else {
        Color::Green
    }
}

/// GREEN < AMBER < RED.
pub fn severity(color: Color) -> u8 {
    match color {
        Color::Green => 0,
        Color::Amber => 1,
        Color::Red => 2,
    }
}
