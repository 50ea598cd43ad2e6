// SPDX-License-Identifier: Apache-2.0

//! The two testing stages on a built workspace: developer sanity tests,
//! then the (algorithm × benchmark) matrix.

pub mod assertion;
pub mod timing;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ids::Digest;
use crate::pipeline::manifest::Manifest;
use crate::pipeline::sandbox::{self, ExitStatus, StepRequest};
use crate::pipeline::workspace::{Phase, Workspace};
use crate::pipeline::{network_label, run_step, PipelineContext, StageStatus};
use assertion::{Assertion, Verdict};

/// Name of the structured output document a benchmark tool writes into its
/// scratch directory.
pub const RESULT_FILE_NAME: &str = "result.json";
const MAX_RESULT_BYTES: u64 = 16 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub status: StageStatus,
    pub log_digest: Digest,
    pub log_path: String,
    /// Advisory only.
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CellStatus {
    Pass,
    Fail,
    Timeout,
    Error,
}

impl CellStatus {
    pub fn is_pass(self) -> bool {
        self == CellStatus::Pass
    }

    pub fn label(self) -> &'static str {
        match self {
            CellStatus::Pass => "PASS",
            CellStatus::Fail => "FAIL",
            CellStatus::Timeout => "TIMEOUT",
            CellStatus::Error => "ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub benchmark_id: String,
    pub algorithm: String,
    pub status: CellStatus,
    /// Canonical digest of the output document; absent when none parsed.
    pub output_digest: Option<Digest>,
    /// Advisory only.
    pub wall_ms: u64,
    pub attempt_count: u32,
    pub log_digest: Digest,
    pub log_path: String,
}

impl CellOutcome {
    pub fn key(&self) -> (&str, &str) {
        (&self.benchmark_id, &self.algorithm)
    }
}

/// A benchmark as the harness sees it: the model is a file on disk.
#[derive(Debug, Clone)]
pub struct BenchmarkCase {
    pub benchmark_id: String,
    pub assertion: Assertion,
    /// Empty means every algorithm.
    pub algorithm_tags: Vec<String>,
    pub wall_seconds: Option<u64>,
    pub model_path: PathBuf,
}

impl BenchmarkCase {
    pub fn applies_to(&self, algorithm: &str) -> bool {
        self.algorithm_tags.is_empty() || self.algorithm_tags.iter().any(|t| t == algorithm)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixOptions {
    /// Extra attempts for a cell that ended in ERROR. FAIL is never retried.
    #[serde(default)]
    pub retry_on_error: u32,
    /// Cells executed at once.
    #[serde(default = "MatrixOptions::default_parallelism")]
    pub parallelism: u32,
}

impl MatrixOptions {
    fn default_parallelism() -> u32 {
        1
    }
}

impl Default for MatrixOptions {
    fn default() -> Self {
        Self { retry_on_error: 0, parallelism: 1 }
    }
}

/// Runs `test_command` with network denied.
pub fn run_sanity_tests(ctx: &PipelineContext<'_>, ws: &mut Workspace, m: &Manifest) -> TestOutcome {
    assert_eq!(ws.phase(), Phase::Built, "sanity tests need a built workspace");
    let env = ws.environment(&m.env_whitelist, ctx.service_env);
    let mut log = Vec::new();
    let _ = writeln!(log, "== [test] {} ({})", m.test_command.display(), network_label(false));
    let result = run_step(&m.test_command, ws, &env, &m.limits, false);
    log.extend_from_slice(&result.transcript);
    if !log.ends_with(b"\n") {
        log.push(b'\n');
    }
    let _ = writeln!(log, "== [test] {}", result.exit.describe());
    let status = match result.exit {
        ExitStatus::Code(0) => StageStatus::Ok,
        ExitStatus::Timeout => StageStatus::Timeout,
        _ => StageStatus::Failed,
    };
    let (log_digest, log_path) = ctx.transcripts.store(&log);
    TestOutcome { status, log_digest, log_path, wall_ms: result.wall_ms }
}

/// The cells a manifest and benchmark set expand to, in storage order.
pub fn applicable_cells<'a>(m: &'a Manifest, cases: &'a [BenchmarkCase]) -> Vec<(&'a BenchmarkCase, &'a str)> {
    let mut cells: Vec<(&BenchmarkCase, &str)> = cases
        .iter()
        .flat_map(|case| {
            m.algorithms
                .iter()
                .filter(|alg| case.applies_to(alg))
                .map(move |alg| (case, alg.as_str()))
        })
        .collect();
    cells.sort_by(|a, b| (a.0.benchmark_id.as_str(), a.1).cmp(&(b.0.benchmark_id.as_str(), b.1)));
    cells.dedup_by(|a, b| a.0.benchmark_id == b.0.benchmark_id && a.1 == b.1);
    cells
}

/// Executes every applicable cell. Cells are independent; the result is
/// sorted by (benchmark_id, algorithm) whatever the execution order.
pub fn run_matrix(
    ctx: &PipelineContext<'_>,
    ws: &mut Workspace,
    m: &Manifest,
    cases: &[BenchmarkCase],
    opts: &MatrixOptions,
) -> Vec<CellOutcome> {
    assert_eq!(ws.phase(), Phase::Built, "the matrix needs a built workspace");
    let env = ws.environment(&m.env_whitelist, ctx.service_env);
    let ws: &Workspace = ws;
    let cells = applicable_cells(m, cases);
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(cells.len()));
    let width = (opts.parallelism.max(1) as usize).min(cells.len().max(1));

    std::thread::scope(|s| {
        for _ in 0..width {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((case, alg)) = cells.get(i) else { break };
                let outcome = run_cell(ctx, ws, m, &env, case, alg, opts.retry_on_error);
                results.lock().unwrap_or_else(|p| p.into_inner()).push(outcome);
            });
        }
    });

    let mut results = results.into_inner().unwrap_or_else(|p| p.into_inner());
    results.sort_by(|a, b| a.key().cmp(&b.key()));
    results
}

struct Attempt {
    status: CellStatus,
    output_digest: Option<Digest>,
    wall_ms: u64,
}

fn run_cell(
    ctx: &PipelineContext<'_>,
    ws: &Workspace,
    m: &Manifest,
    env: &[(String, String)],
    case: &BenchmarkCase,
    algorithm: &str,
    retry_on_error: u32,
) -> CellOutcome {
    let limits = m.limits.with_wall_seconds(case.wall_seconds.unwrap_or(m.limits.wall_seconds));
    let mut log = Vec::new();
    let mut attempt_count = 0;
    let mut last;
    loop {
        attempt_count += 1;
        let _ = writeln!(
            log,
            "== [cell] {}/{} attempt {} (wall limit {}s, {})",
            case.benchmark_id,
            algorithm,
            attempt_count,
            limits.wall_seconds,
            network_label(false)
        );
        last = attempt(ws, m, env, case, algorithm, &limits, &mut log);
        let _ = writeln!(log, "== [cell] {}", last.status.label());
        if last.status != CellStatus::Error || attempt_count > retry_on_error {
            break;
        }
    }
    let (log_digest, log_path) = ctx.transcripts.store(&log);
    CellOutcome {
        benchmark_id: case.benchmark_id.clone(),
        algorithm: algorithm.to_string(),
        status: last.status,
        output_digest: last.output_digest,
        wall_ms: last.wall_ms,
        attempt_count,
        log_digest,
        log_path,
    }
}

fn attempt(
    ws: &Workspace,
    m: &Manifest,
    env: &[(String, String)],
    case: &BenchmarkCase,
    algorithm: &str,
    limits: &crate::pipeline::manifest::ResourceLimits,
    log: &mut Vec<u8>,
) -> Attempt {
    let error = |log: &mut Vec<u8>, msg: String| {
        let _ = writeln!(log, "== [cell] {msg}");
        Attempt { status: CellStatus::Error, output_digest: None, wall_ms: 0 }
    };
    let scratch = match std::fs::create_dir_all(ws.cells_dir())
        .and_then(|_| tempfile::Builder::new().prefix("cell-").tempdir_in(ws.cells_dir()))
    {
        Ok(dir) => dir,
        Err(e) => return error(log, format!("cannot create scratch directory: {e}")),
    };
    let model = scratch.path().join("model");
    if let Err(e) = std::fs::copy(&case.model_path, &model) {
        return error(log, format!("cannot stage model {}: {e}", case.model_path.display()));
    }
    let argv = m.benchmark_argv(algorithm, &model);
    let _ = writeln!(log, "== [cell] {}", argv.join(" "));
    let mut cell_env = env.to_vec();
    cell_env.push(("REPRO_SCRATCH".into(), scratch.path().display().to_string()));
    cell_env.sort();

    let src = ws.src_dir();
    let result = sandbox::execute(&StepRequest {
        argv: &argv,
        program_root: &src,
        cwd: scratch.path(),
        env: &cell_env,
        limits,
        network_allowed: false,
    });
    log.extend_from_slice(&result.transcript);
    if !result.transcript.is_empty() && !result.transcript.ends_with(b"\n") {
        log.push(b'\n');
    }
    let _ = writeln!(log, "== [cell] {}", result.exit.describe());

    let output = read_output(scratch.path(), log);
    let output_digest = output.as_ref().map(Digest::of_canonical_json);
    let status = match result.exit {
        ExitStatus::Timeout => CellStatus::Timeout,
        ExitStatus::SpawnError(_) => CellStatus::Error,
        ref exit => match assertion::evaluate(&case.assertion, exit, output.as_ref()) {
            Verdict::Pass => CellStatus::Pass,
            Verdict::Fail => CellStatus::Fail,
            Verdict::Error => CellStatus::Error,
        },
    };
    // A structured document may exist alongside a timeout; it is not trusted.
    let output_digest = if status == CellStatus::Timeout { None } else { output_digest };
    Attempt { status, output_digest, wall_ms: result.wall_ms }
}

fn read_output(scratch: &Path, log: &mut Vec<u8>) -> Option<Value> {
    let path = scratch.join(RESULT_FILE_NAME);
    let meta = std::fs::symlink_metadata(&path).ok()?;
    if !meta.is_file() {
        let _ = writeln!(log, "== [cell] {RESULT_FILE_NAME} is not a regular file");
        return None;
    }
    if meta.len() > MAX_RESULT_BYTES {
        let _ = writeln!(log, "== [cell] {RESULT_FILE_NAME} exceeds {MAX_RESULT_BYTES} bytes");
        return None;
    }
    let bytes = std::fs::read(&path).ok()?;
    match serde_json::from_slice(&bytes) {
        Ok(v) => Some(v),
        Err(e) => {
            let _ = writeln!(log, "== [cell] unparseable {RESULT_FILE_NAME}: {e}");
            None
        }
    }
}
