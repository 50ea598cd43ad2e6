// SPDX-License-Identifier: Apache-2.0

//! Artifact evaluation mode: the whole pipeline once, in-process, against a
//! local directory, with no server and no ledger.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::runner::{self, LoadedManifest, ManifestSource, RunRequest};
use crate::harness::assertion::Assertion;
use crate::harness::{BenchmarkCase, MatrixOptions};
use crate::ids::{new_id, CommitId, ProjectId};
use crate::ingest::{CommitRef, TriggerEvent, TriggerKind};
use crate::ledger::RunRecord;
use crate::pipeline::fetch::tree_digest;
use crate::pipeline::{PipelineContext, SourceInput, TranscriptStore};
use crate::report::{grade, Color, Derivation, PassFraction, TrafficLight};

/// Exit code for anything that prevented a grade.
pub const EXIT_INTERNAL: i32 = 3;

/// One benchmark metadata document in the benchmarks directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkDocument {
    pub benchmark_id: String,
    /// Model file, relative to the document.
    pub model: String,
    #[serde(default)]
    pub format_tag: String,
    pub assertion: Assertion,
    #[serde(default)]
    pub algorithm_tags: Vec<String>,
    #[serde(default)]
    pub wall_seconds: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvaluateError {
    #[error("{0}")]
    Manifest(String),
    #[error("benchmarks: {0}")]
    Benchmarks(String),
    #[error("{0}")]
    Io(String),
}

pub struct EvaluateOptions {
    pub source: PathBuf,
    pub manifest: PathBuf,
    pub benchmarks: PathBuf,
    /// Workspaces and transcripts go here.
    pub work_dir: PathBuf,
    pub matrix: MatrixOptions,
    pub service_env: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub color: Color,
    pub exit_code: i32,
    pub pass_fraction: PassFraction,
    pub grade: TrafficLight,
    pub record: RunRecord,
    /// Base directory of the record's transcript paths.
    pub transcripts: PathBuf,
}

/// Reads every `*.json` document under `dir`, sorted by file name.
pub fn load_benchmarks(dir: &Path) -> Result<Vec<BenchmarkCase>, EvaluateError> {
    let err = |e: String| EvaluateError::Benchmarks(e);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| err(format!("{}: {e}", dir.display())))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.is_file())
        .collect();
    paths.sort();
    let mut cases: Vec<BenchmarkCase> = Vec::new();
    for path in paths {
        let bytes = std::fs::read(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        let doc: BenchmarkDocument =
            serde_json::from_slice(&bytes).map_err(|e| err(format!("{}: {e}", path.display())))?;
        let assertion = doc.assertion.normalized();
        assertion.validate().map_err(|e| err(format!("{}: {e}", path.display())))?;
        if cases.iter().any(|c| c.benchmark_id == doc.benchmark_id) {
            return Err(err(format!("benchmark id {} appears twice", doc.benchmark_id)));
        }
        let model_path = path.parent().unwrap_or(dir).join(&doc.model);
        if !model_path.is_file() {
            return Err(err(format!("{}: model {} not found", path.display(), model_path.display())));
        }
        cases.push(BenchmarkCase {
            benchmark_id: doc.benchmark_id,
            assertion,
            algorithm_tags: doc.algorithm_tags,
            wall_seconds: doc.wall_seconds,
            model_path,
        });
    }
    Ok(cases)
}

/// Validates inputs, runs fetch (a local copy), dependencies, build, tests
/// and the matrix, and grades the result.
pub fn evaluate(opts: &EvaluateOptions) -> Result<EvaluationReport, EvaluateError> {
    let bytes = std::fs::read(&opts.manifest)
        .map_err(|e| EvaluateError::Manifest(format!("manifest {}: {e}", opts.manifest.display())))?;
    let manifest = LoadedManifest::parse(bytes)
        .map_err(|e| EvaluateError::Manifest(format!("manifest {}: {e}", opts.manifest.display())))?;
    let cases = load_benchmarks(&opts.benchmarks)?;
    if !opts.source.is_dir() {
        return Err(EvaluateError::Io(format!("source {} is not a directory", opts.source.display())));
    }
    let digest = tree_digest(&opts.source).map_err(|e| EvaluateError::Io(format!("{}: {e}", opts.source.display())))?;
    let commit_id = CommitId::parse(digest.as_str()).expect("a digest is a valid commit id");
    let project_id = opts
        .source
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().and_then(|n| ProjectId::slugify(&n.to_string_lossy())))
        .unwrap_or_else(|| ProjectId::new("artifact"));

    let io = |e: std::io::Error| EvaluateError::Io(format!("{}: {e}", opts.work_dir.display()));
    std::fs::create_dir_all(&opts.work_dir).map_err(io)?;
    let work_dir = opts.work_dir.canonicalize().map_err(io)?;
    let transcripts = TranscriptStore::new(&work_dir);
    let ctx = PipelineContext { transcripts: &transcripts, service_env: &opts.service_env, cache: None };
    let now = Utc::now();
    let commit = CommitRef { project_id: project_id.clone(), commit_id, observed_at: now };
    let product = runner::execute(
        &ctx,
        RunRequest {
            run_id: new_id("eval"),
            trigger: TriggerEvent {
                kind: TriggerKind::Manual,
                project_id,
                commit: Some(commit.clone()),
                dependency: None,
                received_at: now,
                event_id: new_id("evaluate"),
            },
            commit,
            source: SourceInput::Directory(&opts.source),
            manifest: ManifestSource::Provided(&manifest),
            workspaces: &work_dir.join("workspaces"),
            benchmarks: &cases,
            matrix: &opts.matrix,
        },
    );
    if let Some(mut ws) = product.workspace {
        ws.destroy();
    }
    let record = product.record;
    let light = grade(&record);
    Ok(EvaluationReport {
        color: light.color,
        exit_code: light.color.exit_code(),
        pass_fraction: PassFraction::of(&record),
        grade: light,
        record,
        transcripts: work_dir,
    })
}

/// Human-readable summary.
pub fn render_text(report: &EvaluationReport) -> String {
    let r = &report.record;
    let mut out = String::new();
    let _ = writeln!(out, "project  {}", r.commit.project_id);
    let _ = writeln!(out, "tree     {}", r.commit.commit_id);
    for s in &r.stages {
        let _ = writeln!(out, "{:<8} {}", s.stage.label().to_lowercase(), s.status.label());
    }
    if let Some(t) = &r.test {
        let _ = writeln!(out, "test     {}", t.status.label());
    }
    if r.test.as_ref().is_some_and(|t| t.status.is_ok()) {
        let _ = writeln!(out, "cells    {} passing ({} total)", report.pass_fraction, r.cells.len());
        for c in &r.cells {
            let _ = writeln!(out, "  {:<8} {}/{}", c.status.label(), c.benchmark_id, c.algorithm);
        }
    }
    let why = match &report.grade.derivation {
        Derivation::Stage { stage, status } => format!("{stage} {status}"),
        Derivation::Cells { non_pass, .. } if non_pass.is_empty() => "every cell passed".to_string(),
        Derivation::Cells { non_pass, .. } => format!("{} cell(s) not passing", non_pass.len()),
    };
    let _ = writeln!(out, "grade    {} ({why})", report.color);
    out
}
