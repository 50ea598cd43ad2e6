// SPDX-License-Identifier: Apache-2.0

//! De novo build: fresh workspace, source export at a commit, dependency
//! acquisition and compilation, all under the process sandbox.
//!
//! Stage failures are data, not errors: every operation here returns a
//! [`StageOutcome`] and the caller stops at the first non-OK stage.

pub mod deps;
pub mod fetch;
pub mod manifest;
pub mod sandbox;
pub mod workspace;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ids::Digest;
use crate::ingest::CommitRef;
use deps::DependencyCache;
use fetch::SourceLocator;
use manifest::{CommandSpec, Manifest, ResourceLimits};
use sandbox::{ExitStatus, StepRequest, StepResult};
use workspace::{Phase, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Fetch,
    Deps,
    Build,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StageStatus {
    Ok,
    Failed,
    Timeout,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Fetch => "FETCH",
            Stage::Deps => "DEPS",
            Stage::Build => "BUILD",
        }
    }
}

impl StageStatus {
    pub fn is_ok(self) -> bool {
        self == StageStatus::Ok
    }

    pub fn label(self) -> &'static str {
        match self {
            StageStatus::Ok => "OK",
            StageStatus::Failed => "FAILED",
            StageStatus::Timeout => "TIMEOUT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: StageStatus,
    pub log_digest: Digest,
    pub log_path: String,
    /// Advisory only.
    pub wall_ms: u64,
}

/// Content-addressed transcript storage. Paths handed out are relative to
/// the store's base directory.
#[derive(Debug, Clone)]
pub struct TranscriptStore {
    base: PathBuf,
}

impl TranscriptStore {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Self { base: base.into() }
    }

    pub fn store(&self, bytes: &[u8]) -> (Digest, String) {
        let digest = Digest::of(bytes);
        let rel = format!("transcripts/{}/{}", &digest.as_str()[..2], digest.as_str());
        let path = self.base.join(&rel);
        if !path.exists() {
            let written = path
                .parent()
                .map(std::fs::create_dir_all)
                .transpose()
                .and_then(|_| std::fs::write(&path, bytes));
            if let Err(e) = written {
                tracing::error!(path = %path.display(), error = %e, "failed to store transcript");
            }
        }
        (digest, rel)
    }

    pub fn load(&self, log_path: &str) -> std::io::Result<Vec<u8>> {
        if log_path.split('/').any(|part| part == "..") {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "path escapes store"));
        }
        std::fs::read(self.base.join(log_path))
    }
}

/// Shared inputs for the pipeline operations.
#[derive(Debug, Clone)]
pub struct PipelineContext<'a> {
    pub transcripts: &'a TranscriptStore,
    /// The service's own environment; whitelisted names are read from here.
    pub service_env: &'a BTreeMap<String, String>,
    pub cache: Option<&'a DependencyCache>,
}

/// Transcript accumulator for one stage.
#[derive(Debug)]
struct StageLog {
    stage: Stage,
    bytes: Vec<u8>,
    wall_ms: u64,
    status: StageStatus,
}

impl StageLog {
    fn new(stage: Stage) -> Self {
        Self { stage, bytes: Vec::new(), wall_ms: 0, status: StageStatus::Ok }
    }

    fn line(&mut self, text: impl AsRef<str>) {
        let _ = writeln!(self.bytes, "== [{}] {}", stage_label(self.stage), text.as_ref());
    }

    /// Appends a step's transcript and folds its exit into the stage status.
    fn step(&mut self, result: &StepResult) -> bool {
        self.bytes.extend_from_slice(&result.transcript);
        if !result.transcript.is_empty() && !result.transcript.ends_with(b"\n") {
            self.bytes.push(b'\n');
        }
        self.line(result.exit.describe());
        self.wall_ms += result.wall_ms;
        match result.exit {
            ExitStatus::Code(0) => true,
            ExitStatus::Timeout => {
                self.status = StageStatus::Timeout;
                false
            }
            _ => {
                self.status = StageStatus::Failed;
                false
            }
        }
    }

    fn fail(&mut self, text: impl AsRef<str>) {
        self.line(text);
        self.status = StageStatus::Failed;
    }

    fn finish(self, store: &TranscriptStore) -> StageOutcome {
        let (log_digest, log_path) = store.store(&self.bytes);
        StageOutcome { stage: self.stage, status: self.status, log_digest, log_path, wall_ms: self.wall_ms }
    }
}

fn stage_label(stage: Stage) -> &'static str {
    match stage {
        Stage::Fetch => "fetch",
        Stage::Deps => "deps",
        Stage::Build => "build",
    }
}

pub(crate) fn network_label(allowed: bool) -> &'static str {
    if allowed {
        "network: allowed"
    } else if sandbox::network_isolation_available() {
        "network: denied"
    } else {
        "network: denied (no namespace isolation on this host)"
    }
}

/// Runs one command with `cwd` = the workspace source tree.
pub fn run_step(
    cmd: &CommandSpec,
    ws: &Workspace,
    env: &[(String, String)],
    limits: &ResourceLimits,
    network_allowed: bool,
) -> StepResult {
    assert_ne!(ws.phase(), Phase::Destroyed, "run_step on a destroyed workspace");
    let src = ws.src_dir();
    sandbox::execute(&StepRequest {
        argv: &cmd.argv,
        program_root: &src,
        cwd: &src,
        env,
        limits,
        network_allowed,
    })
}

/// Where the source tree for a run comes from.
#[derive(Debug, Clone)]
pub enum SourceInput<'a> {
    /// A repository (local path or URL) exported at `commit`; remote
    /// repositories are synchronized into `mirror` first.
    Repository { source: &'a SourceLocator, mirror: &'a Path },
    /// A plain directory copied as-is (one-shot evaluation).
    Directory(&'a Path),
}

/// Creates a fresh workspace and populates `src/` with the tree at the
/// commit. On failure the workspace is destroyed and `None` returned.
pub fn prepare_workspace(
    ctx: &PipelineContext<'_>,
    parent: &Path,
    input: SourceInput<'_>,
    commit: CommitRef,
) -> (Option<Workspace>, StageOutcome) {
    let mut log = StageLog::new(Stage::Fetch);
    let started = std::time::Instant::now();
    log.line(format!("commit {}", commit.commit_id));
    let mut ws = match Workspace::create(parent, commit) {
        Ok(ws) => ws,
        Err(e) => {
            log.fail(format!("cannot create workspace: {e}"));
            return (None, log.finish(ctx.transcripts));
        }
    };
    let result = match input {
        SourceInput::Repository { source, mirror } => {
            let mut out = Vec::new();
            let r = source.export(&ws.commit().commit_id, &ws.src_dir(), mirror, &mut out);
            log.bytes.extend_from_slice(&out);
            r.map_err(|e| e.to_string())
        }
        SourceInput::Directory(dir) => {
            if dir.is_dir() {
                fetch::copy_tree(dir, &ws.src_dir()).map_err(|e| format!("copying {}: {e}", dir.display()))
            } else {
                Err(format!("source unavailable: {} is not a directory", dir.display()))
            }
        }
    };
    log.wall_ms = started.elapsed().as_millis() as u64;
    match result {
        Ok(()) => {
            ws.advance(Phase::Fetched);
            log.line("source tree exported");
            (Some(ws), log.finish(ctx.transcripts))
        }
        Err(e) => {
            log.fail(e);
            ws.destroy();
            (None, log.finish(ctx.transcripts))
        }
    }
}

/// Checks a manifest shipped in the fetched tree. Path must stay inside the
/// source tree.
pub fn locate_manifest(ws: &Workspace, manifest_path: &str) -> Result<PathBuf, String> {
    let rel = Path::new(manifest_path);
    let escapes = rel.is_absolute()
        || rel.components().any(|c| !matches!(c, std::path::Component::Normal(_) | std::path::Component::CurDir));
    if escapes {
        return Err(format!("manifest path {manifest_path:?} escapes the source tree"));
    }
    let path = ws.src_dir().join(rel);
    if path.is_dir() {
        Ok(path.join(manifest::MANIFEST_FILE_NAME))
    } else {
        Ok(path)
    }
}

/// Records a manifest problem discovered after export as a failed fetch.
pub fn fetch_failure(ctx: &PipelineContext<'_>, mut preceding: StageOutcome, reason: &str) -> StageOutcome {
    let mut bytes = ctx.transcripts.load(&preceding.log_path).unwrap_or_default();
    let _ = writeln!(bytes, "== [fetch] {reason}");
    let (log_digest, log_path) = ctx.transcripts.store(&bytes);
    preceding.status = StageStatus::Failed;
    preceding.log_digest = log_digest;
    preceding.log_path = log_path;
    preceding
}

/// Materializes every declared dependency, in order, with network access.
/// Stops at the first failure.
pub fn resolve_dependencies(ctx: &PipelineContext<'_>, ws: &mut Workspace, m: &Manifest) -> StageOutcome {
    assert_eq!(ws.phase(), Phase::Fetched, "resolve_dependencies needs a fetched workspace");
    let mut log = StageLog::new(Stage::Deps);
    let env = ws.environment(&m.env_whitelist, ctx.service_env);
    if m.dependencies.is_empty() {
        log.line("no dependencies declared");
    }
    for dep in &m.dependencies {
        let dep_dir = ws.deps_dir().join(&dep.name);
        if let Err(e) = std::fs::create_dir_all(&dep_dir) {
            log.fail(format!("dependency {}@{}: cannot create {}: {e}", dep.name, dep.version, dep_dir.display()));
            break;
        }
        if let Some(digest) = ctx.cache.and_then(|c| c.restore(dep, &dep_dir)) {
            log.line(format!("{}@{}: restored from cache (tree {})", dep.name, dep.version, digest));
            continue;
        }
        log.line(format!("{}@{}: {} ({})", dep.name, dep.version, dep.acquisition.display(), network_label(true)));
        let mut dep_env = env.clone();
        dep_env.push(("REPRO_DEP_NAME".into(), dep.name.clone()));
        dep_env.push(("REPRO_DEP_VERSION".into(), dep.version.clone()));
        dep_env.push(("REPRO_DEP_DIR".into(), dep_dir.display().to_string()));
        let result = run_step(&dep.acquisition, ws, &dep_env, &m.limits, true);
        if !log.step(&result) {
            log.line(format!("dependency {}@{} failed: {}", dep.name, dep.version, result.exit.describe()));
            break;
        }
        if let Some(cache) = ctx.cache {
            if let Err(e) = cache.store(dep, &dep_dir) {
                tracing::warn!(dependency = %dep.name, error = %e, "could not cache dependency");
            }
        }
    }
    if log.status.is_ok() {
        ws.advance(Phase::DepsResolved);
    }
    log.finish(ctx.transcripts)
}

/// Runs the build steps in order with network access denied.
pub fn compile(ctx: &PipelineContext<'_>, ws: &mut Workspace, m: &Manifest) -> StageOutcome {
    assert_eq!(ws.phase(), Phase::DepsResolved, "compile needs resolved dependencies");
    let mut log = StageLog::new(Stage::Build);
    let env = ws.environment(&m.env_whitelist, ctx.service_env);
    let total = m.build_steps.len();
    for (i, step) in m.build_steps.iter().enumerate() {
        log.line(format!("step {}/{}: {} ({})", i + 1, total, step.display(), network_label(false)));
        let result = run_step(step, ws, &env, &m.limits, false);
        if !log.step(&result) {
            break;
        }
    }
    if log.status.is_ok() {
        ws.advance(Phase::Built);
    }
    log.finish(ctx.transcripts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{CommitId, ProjectId};
    use manifest::DependencyDecl;

    struct Fixture {
        _dir: tempfile::TempDir,
        parent: PathBuf,
        src: PathBuf,
        transcripts: TranscriptStore,
        env: BTreeMap<String, String>,
    }

    impl Fixture {
        fn new() -> Self {
            let dir = tempfile::tempdir().unwrap();
            let src = dir.path().join("tree");
            std::fs::create_dir(&src).unwrap();
            Self {
                parent: dir.path().join("ws"),
                transcripts: TranscriptStore::new(dir.path().join("data")),
                src,
                env: BTreeMap::new(),
                _dir: dir,
            }
        }

        fn ctx(&self) -> PipelineContext<'_> {
            PipelineContext { transcripts: &self.transcripts, service_env: &self.env, cache: None }
        }

        fn fetched(&self) -> Workspace {
            let commit = CommitRef {
                project_id: ProjectId::new("p"),
                commit_id: CommitId::parse("c1").unwrap(),
                observed_at: chrono::Utc::now(),
            };
            let (ws, outcome) = prepare_workspace(&self.ctx(), &self.parent, SourceInput::Directory(&self.src), commit);
            assert_eq!(outcome.status, StageStatus::Ok);
            ws.unwrap()
        }

        fn log(&self, outcome: &StageOutcome) -> String {
            String::from_utf8(self.transcripts.load(&outcome.log_path).unwrap()).unwrap()
        }
    }

    fn manifest(deps: Vec<DependencyDecl>, build: Vec<CommandSpec>, wall: u64) -> Manifest {
        Manifest {
            schema_version: 1,
            dependencies: deps,
            build_steps: build,
            test_command: CommandSpec::new(["true"]),
            benchmark_command: CommandSpec::new(["tool", "{algorithm}", "{model_path}"]),
            algorithms: vec!["a".into()],
            env_whitelist: vec![],
            limits: ResourceLimits::default().with_wall_seconds(wall),
        }
    }

    fn sh(script: &str) -> CommandSpec {
        CommandSpec::new(["sh", "-c", script])
    }

    #[test]
    fn empty_dependency_list_is_ok() {
        let fx = Fixture::new();
        let mut ws = fx.fetched();
        let out = resolve_dependencies(&fx.ctx(), &mut ws, &manifest(vec![], vec![], 5));
        assert_eq!(out.status, StageStatus::Ok);
        assert_eq!(ws.phase(), Phase::DepsResolved);
    }

    #[test]
    fn failing_dependency_stops_and_is_named() {
        let fx = Fixture::new();
        let mut ws = fx.fetched();
        let deps = vec![
            DependencyDecl { name: "first".into(), version: "1".into(), acquisition: sh("touch \"$REPRO_DEP_DIR/ok\"") },
            DependencyDecl { name: "second".into(), version: "2".into(), acquisition: sh("exit 1") },
            DependencyDecl { name: "third".into(), version: "3".into(), acquisition: sh("touch \"$REPRO_DEP_DIR/ran\"") },
        ];
        let out = resolve_dependencies(&fx.ctx(), &mut ws, &manifest(deps, vec![], 5));
        assert_eq!(out.status, StageStatus::Failed);
        assert!(fx.log(&out).contains("dependency second@2 failed"));
        assert!(ws.deps_dir().join("first/ok").exists());
        assert!(!ws.deps_dir().join("third/ran").exists());
        assert_eq!(ws.phase(), Phase::Fetched);
    }

    #[test]
    fn slow_dependency_times_out() {
        let fx = Fixture::new();
        let mut ws = fx.fetched();
        let deps = vec![DependencyDecl { name: "slow".into(), version: "1".into(), acquisition: sh("sleep 5") }];
        let out = resolve_dependencies(&fx.ctx(), &mut ws, &manifest(deps, vec![], 2));
        assert_eq!(out.status, StageStatus::Timeout);
        assert!(out.wall_ms >= 2_000);
    }

    #[test]
    fn build_writes_artifact_and_reports_failure() {
        let fx = Fixture::new();
        let mut ws = fx.fetched();
        let m = manifest(vec![], vec![sh("mkdir -p bin && printf '#!/bin/sh\\n' > bin/tool && chmod +x bin/tool")], 5);
        resolve_dependencies(&fx.ctx(), &mut ws, &m);
        let out = compile(&fx.ctx(), &mut ws, &m);
        assert_eq!(out.status, StageStatus::Ok, "{}", fx.log(&out));
        assert!(ws.src_dir().join("bin/tool").exists());
        assert_eq!(ws.phase(), Phase::Built);

        let mut ws = fx.fetched();
        let m = manifest(vec![], vec![sh("echo boom; exit 2"), sh("touch never")], 5);
        resolve_dependencies(&fx.ctx(), &mut ws, &m);
        let out = compile(&fx.ctx(), &mut ws, &m);
        assert_eq!(out.status, StageStatus::Failed);
        assert!(!ws.src_dir().join("never").exists());
        let log = fx.log(&out);
        assert!(log.contains("boom") && log.contains("exit 2") && log.contains("network: denied"), "{log}");
    }

    #[test]
    fn unlisted_setup_variable_fails_the_build() {
        let mut fx = Fixture::new();
        fx.env.insert("SECRET_SETUP".into(), "done".into());
        let mut ws = fx.fetched();
        let m = manifest(vec![], vec![sh("test -n \"$SECRET_SETUP\" || { echo 'SECRET_SETUP unset' >&2; exit 1; }")], 5);
        resolve_dependencies(&fx.ctx(), &mut ws, &m);
        assert_eq!(compile(&fx.ctx(), &mut ws, &m).status, StageStatus::Failed);

        let mut ws = fx.fetched();
        let mut m = m;
        m.env_whitelist = vec!["SECRET_SETUP".into()];
        resolve_dependencies(&fx.ctx(), &mut ws, &m);
        assert_eq!(compile(&fx.ctx(), &mut ws, &m).status, StageStatus::Ok);
    }

    #[test]
    fn missing_directory_fails_fetch() {
        let fx = Fixture::new();
        let commit = CommitRef {
            project_id: ProjectId::new("p"),
            commit_id: CommitId::parse("c1").unwrap(),
            observed_at: chrono::Utc::now(),
        };
        let missing = fx.src.join("absent");
        let (ws, out) = prepare_workspace(&fx.ctx(), &fx.parent, SourceInput::Directory(&missing), commit);
        assert!(ws.is_none());
        assert_eq!(out.status, StageStatus::Failed);
        // the failed workspace is gone
        assert_eq!(std::fs::read_dir(&fx.parent).unwrap().count(), 0);
    }

    #[test]
    fn manifest_paths_cannot_escape() {
        let fx = Fixture::new();
        let ws = fx.fetched();
        assert!(locate_manifest(&ws, "../x.json").is_err());
        assert!(locate_manifest(&ws, "/etc/passwd").is_err());
        assert_eq!(locate_manifest(&ws, ".").unwrap(), ws.src_dir().join(".").join("repro.manifest.json"));
        assert_eq!(locate_manifest(&ws, "sub/m.json").unwrap(), ws.src_dir().join("sub/m.json"));
    }

    #[test]
    fn transcript_store_is_content_addressed() {
        let fx = Fixture::new();
        let (d1, p1) = fx.transcripts.store(b"hello");
        let (d2, p2) = fx.transcripts.store(b"hello");
        assert_eq!((d1.clone(), p1.clone()), (d2, p2));
        assert_eq!(fx.transcripts.load(&p1).unwrap(), b"hello");
        assert_eq!(d1, Digest::of(b"hello"));
        assert!(fx.transcripts.load("../../etc/passwd").is_err());
    }
}
