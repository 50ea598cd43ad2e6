// SPDX-License-Identifier: Apache-2.0

//! One pipeline execution from fetch to matrix, shared by the service
//! workers and the one-shot evaluation mode.

use std::path::Path;

use chrono::Utc;

use crate::harness::timing::HostFingerprint;
use crate::harness::{run_matrix, run_sanity_tests, BenchmarkCase, MatrixOptions};
use crate::ids::Digest;
use crate::ingest::{CommitRef, TriggerEvent};
use crate::ledger::RunRecord;
use crate::pipeline::manifest::Manifest;
use crate::pipeline::workspace::Workspace;
use crate::pipeline::{compile, fetch_failure, locate_manifest, prepare_workspace, resolve_dependencies};
use crate::pipeline::{PipelineContext, SourceInput};

/// A manifest together with the exact bytes it was parsed from.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub digest: Digest,
    pub bytes: Vec<u8>,
}

impl LoadedManifest {
    pub fn parse(bytes: Vec<u8>) -> Result<Self, crate::pipeline::manifest::ManifestError> {
        let manifest = Manifest::parse(&bytes)?;
        Ok(Self { manifest, digest: Digest::of(&bytes), bytes })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ManifestSource<'a> {
    /// Read from the fetched tree at this relative path.
    InTree(&'a str),
    Provided(&'a LoadedManifest),
}

pub struct RunRequest<'a> {
    pub run_id: String,
    pub trigger: TriggerEvent,
    pub commit: CommitRef,
    pub source: SourceInput<'a>,
    pub manifest: ManifestSource<'a>,
    /// Parent directory for the fresh workspace.
    pub workspaces: &'a Path,
    pub benchmarks: &'a [BenchmarkCase],
    pub matrix: &'a MatrixOptions,
}

pub struct RunProduct {
    pub record: RunRecord,
    pub manifest: Option<LoadedManifest>,
    /// The workspace, unless the fetch failed. Callers decide whether to
    /// retain or destroy it.
    pub workspace: Option<Workspace>,
}

/// Runs every stage until the first non-OK one and assembles the record.
pub fn execute(ctx: &PipelineContext<'_>, req: RunRequest<'_>) -> RunProduct {
    let started_at = Utc::now();
    let mut stages = Vec::new();
    let mut test = None;
    let mut cells = Vec::new();
    let mut loaded = None;

    let (ws, fetched) = prepare_workspace(ctx, req.workspaces, req.source, req.commit.clone());
    let mut workspace = ws;
    if let Some(ws) = workspace.as_mut() {
        let manifest = match req.manifest {
            ManifestSource::Provided(m) => Ok(m.clone()),
            ManifestSource::InTree(rel) => locate_manifest(ws, rel).and_then(|path| {
                let bytes = std::fs::read(&path).map_err(|e| format!("manifest {rel}: {e}"))?;
                LoadedManifest::parse(bytes).map_err(|e| format!("manifest {rel}: {e}"))
            }),
        };
        match manifest {
            Err(reason) => {
                stages.push(fetch_failure(ctx, fetched, &reason));
                ws.destroy();
            }
            Ok(m) => {
                stages.push(fetched);
                let deps = resolve_dependencies(ctx, ws, &m.manifest);
                let deps_ok = deps.status.is_ok();
                stages.push(deps);
                if deps_ok {
                    let build = compile(ctx, ws, &m.manifest);
                    let build_ok = build.status.is_ok();
                    stages.push(build);
                    if build_ok {
                        let outcome = run_sanity_tests(ctx, ws, &m.manifest);
                        let tested = outcome.status.is_ok();
                        test = Some(outcome);
                        if tested {
                            cells = run_matrix(ctx, ws, &m.manifest, req.benchmarks, req.matrix);
                        }
                    }
                }
                loaded = Some(m);
            }
        }
    } else {
        stages.push(fetched);
    }
    if workspace.as_ref().is_some_and(|ws| ws.phase() == crate::pipeline::workspace::Phase::Destroyed) {
        workspace = None;
    }

    let sandbox_env = workspace
        .as_ref()
        .map(|ws| ws.env_capture().iter().cloned().collect())
        .unwrap_or_default();
    let record = RunRecord {
        run_id: req.run_id,
        trigger: req.trigger,
        commit: req.commit,
        manifest_digest: loaded.as_ref().map(|m| m.digest.clone()),
        stages,
        test,
        cells,
        env_fingerprint: HostFingerprint::current(req.matrix.parallelism.max(1)),
        sandbox_env,
        started_at,
        finished_at: Utc::now().max(started_at),
    };
    RunProduct { record, manifest: loaded, workspace }
}
