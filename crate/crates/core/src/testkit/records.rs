// SPDX-License-Identifier: Apache-2.0

//! Synthetic run records.

use chrono::{TimeZone, Utc};
use rand::Rng;

use crate::harness::timing::HostFingerprint;
use crate::harness::{CellOutcome, CellStatus, TestOutcome};
use crate::ids::{CommitId, Digest, ProjectId, Timestamp};
use crate::ingest::{CommitRef, TriggerEvent, TriggerKind};
use crate::ledger::RunRecord;
use crate::pipeline::{Stage, StageOutcome, StageStatus};

pub fn base_time() -> Timestamp {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid date")
}

fn log_for(label: &str) -> (Digest, String) {
    let digest = Digest::of(label.as_bytes());
    let path = format!("transcripts/{}/{}", &digest.as_str()[..2], digest.as_str());
    (digest, path)
}

pub fn stage(stage: Stage, status: StageStatus) -> StageOutcome {
    let (log_digest, log_path) = log_for(&format!("{stage:?}/{status:?}"));
    StageOutcome { stage, status, log_digest, log_path, wall_ms: 10 }
}

pub fn test_outcome(status: StageStatus) -> TestOutcome {
    let (log_digest, log_path) = log_for(&format!("test/{status:?}"));
    TestOutcome { status, log_digest, log_path, wall_ms: 10 }
}

/// A cell whose output digest is a function of its status (none for
/// TIMEOUT and ERROR).
pub fn cell(benchmark_id: &str, algorithm: &str, status: CellStatus) -> CellOutcome {
    cell_with_variant(benchmark_id, algorithm, status, 0)
}

/// As [`cell`], with `variant` perturbing the output digest of PASS/FAIL
/// cells.
pub fn cell_with_variant(benchmark_id: &str, algorithm: &str, status: CellStatus, variant: u32) -> CellOutcome {
    let output_digest = match status {
        CellStatus::Pass | CellStatus::Fail => Some(Digest::of(format!("{}-{variant}", status.label()).as_bytes())),
        CellStatus::Timeout | CellStatus::Error => None,
    };
    let (log_digest, log_path) = log_for(&format!("{benchmark_id}/{algorithm}/{}", status.label()));
    CellOutcome {
        benchmark_id: benchmark_id.to_string(),
        algorithm: algorithm.to_string(),
        status,
        output_digest,
        wall_ms: 5,
        attempt_count: 1,
        log_digest,
        log_path,
    }
}

/// A complete record with all stages and tests OK. `seq` orders runs: it
/// becomes the start minute. Cells are sorted here.
pub fn record(project: &str, commit: &str, seq: i64, cells: &[CellOutcome]) -> RunRecord {
    let project_id = ProjectId::new(project);
    let commit_id = CommitId::parse(commit).expect("synthetic commit ids are hex");
    let started_at = base_time() + chrono::Duration::minutes(seq);
    let commit_ref = CommitRef { project_id: project_id.clone(), commit_id, observed_at: started_at };
    let mut cells = cells.to_vec();
    cells.sort_by(|a, b| a.key().cmp(&b.key()));
    RunRecord {
        run_id: format!("run-{project}-{commit}-{seq}"),
        trigger: TriggerEvent {
            kind: TriggerKind::Push,
            project_id,
            commit: Some(commit_ref.clone()),
            dependency: None,
            received_at: started_at,
            event_id: format!("evt-{project}-{commit}-{seq}"),
        },
        commit: commit_ref,
        manifest_digest: Some(Digest::of(b"manifest")),
        stages: vec![
            stage(Stage::Fetch, StageStatus::Ok),
            stage(Stage::Deps, StageStatus::Ok),
            stage(Stage::Build, StageStatus::Ok),
        ],
        test: Some(test_outcome(StageStatus::Ok)),
        cells,
        env_fingerprint: HostFingerprint {
            os: "linux".into(),
            arch: "x86_64".into(),
            cpu_model: "synthetic".into(),
            concurrency: 1,
        },
        sandbox_env: Default::default(),
        started_at,
        finished_at: started_at + chrono::Duration::seconds(30),
    }
}

pub const STATUSES: [CellStatus; 4] = [CellStatus::Pass, CellStatus::Fail, CellStatus::Timeout, CellStatus::Error];

pub fn random_status<R: Rng>(rng: &mut R) -> CellStatus {
    // PASS-heavy, like real matrices.
    match rng.gen_range(0..8) {
        0..=3 => CellStatus::Pass,
        4 | 5 => CellStatus::Fail,
        6 => CellStatus::Timeout,
        _ => CellStatus::Error,
    }
}

pub fn benchmark_name(i: usize) -> String {
    format!("b{i}")
}

pub fn algorithm_name(i: usize) -> String {
    format!("alg{i}")
}

/// A valid record at `commit`. About one in six ends at a failed stage or
/// failed sanity tests; the rest carry a random subset of the
/// `benchmarks × algorithms` matrix.
pub fn random_record<R: Rng>(
    rng: &mut R,
    project: &str,
    commit: &str,
    seq: i64,
    benchmarks: usize,
    algorithms: usize,
) -> RunRecord {
    let mut r = record(project, commit, seq, &[]);
    if rng.gen_ratio(1, 6) {
        let bad = if rng.gen_bool(0.5) { StageStatus::Failed } else { StageStatus::Timeout };
        match rng.gen_range(0..4) {
            at @ 0..=2 => {
                r.stages.truncate(at + 1);
                r.stages[at].status = bad;
                r.test = None;
            }
            _ => r.test.as_mut().expect("complete record").status = bad,
        }
        return r;
    }
    let mut cells = Vec::new();
    for b in 0..benchmarks {
        if !rng.gen_bool(0.85) {
            continue;
        }
        for a in 0..algorithms {
            if rng.gen_bool(0.9) {
                let status = random_status(rng);
                cells.push(cell_with_variant(&benchmark_name(b), &algorithm_name(a), status, rng.gen_range(0..2)));
            }
        }
    }
    cells.sort_by(|a, b| a.key().cmp(&b.key()));
    r.cells = cells;
    r
}

/// Up to `commits` commits, each run once or twice (re-runs model MANUAL
/// triggers), in run order.
pub fn random_history<R: Rng>(
    rng: &mut R,
    project: &str,
    commits: usize,
    benchmarks: usize,
    algorithms: usize,
) -> Vec<RunRecord> {
    let mut records = Vec::new();
    let mut seq = 0;
    for c in 0..commits {
        let commit = format!("c{c:x}");
        let runs = if rng.gen_ratio(1, 5) { 2 } else { 1 };
        for _ in 0..runs {
            records.push(random_record(rng, project, &commit, seq, benchmarks, algorithms));
            seq += 1;
        }
    }
    records
}
