// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::harness::CellStatus;
use crate::ids::CommitId;
use crate::ledger::query::{latest, latest_for_commit, QueryError};
use crate::ledger::RunRecord;

/// A benchmark that times out under some algorithm and passes under another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardModel {
    pub benchmark_id: String,
    pub timeout_algorithms: Vec<String>,
    pub passing_algorithms: Vec<String>,
}

/// Hard models of the latest run at `commit`, or of the latest run overall.
pub fn hard_models(records: &[RunRecord], commit: Option<&CommitId>) -> Result<Vec<HardModel>, QueryError> {
    let run = match commit {
        Some(c) => latest_for_commit(records, c).ok_or_else(|| QueryError::NoRun(c.to_string()))?,
        None => latest(records).ok_or(QueryError::NoData)?,
    };
    Ok(hard_models_in(run))
}

pub fn hard_models_in(run: &RunRecord) -> Vec<HardModel> {
    let mut by_benchmark: BTreeMap<&str, (Vec<String>, Vec<String>)> = BTreeMap::new();
    for cell in &run.cells {
        let entry = by_benchmark.entry(&cell.benchmark_id).or_default();
        match cell.status {
            CellStatus::Timeout => entry.0.push(cell.algorithm.clone()),
            CellStatus::Pass => entry.1.push(cell.algorithm.clone()),
            CellStatus::Fail | CellStatus::Error => {}
        }
    }
    by_benchmark
        .into_iter()
        .filter(|(_, (timeouts, passes))| !timeouts.is_empty() && !passes.is_empty())
        .map(|(id, (mut timeout_algorithms, mut passing_algorithms))| {
            timeout_algorithms.sort();
            passing_algorithms.sort();
            HardModel { benchmark_id: id.to_string(), timeout_algorithms, passing_algorithms }
        })
        .collect()
}
