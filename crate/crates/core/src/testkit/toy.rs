// SPDX-License-Identifier: Apache-2.0

//! The bundled toy-solver project: a deterministic fixpoint solver for small
//! boolean networks with the algorithms "direct" and "iterative".

use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::harness::assertion::Assertion;
use crate::ids::CommitId;
use crate::registry::SubmissionMeta;

const MANIFEST: &str = include_str!("../../fixtures/toy-solver/repro.manifest.json");
const BUILD: &str = include_str!("../../fixtures/toy-solver/build.sh");
const TEST: &str = include_str!("../../fixtures/toy-solver/test.sh");
const SOLVER: &str = include_str!("../../fixtures/toy-solver/src/solver.awk");
const FETCH: &str = include_str!("../../fixtures/toy-solver/scripts/fetch-libsolve.sh");
const LIBSOLVE: &str = include_str!("../../fixtures/toy-solver/vendor/libsolve-2.1.awk");
const SIMPLE_MODEL: &str = include_str!("../../fixtures/toy-solver/tests/simple.model");
const SIMPLE_EXPECTED: &str = include_str!("../../fixtures/toy-solver/tests/simple.expected");

/// Environment variable the needs-setup variant's build depends on.
pub const SETUP_VAR: &str = "SOLVER_SETUP";

/// Source-tree variants of the toy solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Nodes without inputs default to 0.
    Correct,
    /// Nodes without inputs default to 1: changes b2's fixpoint.
    DefaultOne,
    /// Correct solver, but the sanity test expects the wrong fixpoint.
    BrokenTest,
    /// Correct solver whose build needs an undeclared setup variable.
    NeedsSetup,
}

/// Writes the source tree of `variant` into `dest`.
pub fn write_tree(dest: &Path, variant: Variant) -> io::Result<()> {
    let solver = match variant {
        Variant::DefaultOne => SOLVER.replacen("DEFAULT_VALUE = 0", "DEFAULT_VALUE = 1", 1),
        _ => SOLVER.to_string(),
    };
    let expected = match variant {
        Variant::BrokenTest => "a=1 b=0 c=0\n",
        _ => SIMPLE_EXPECTED,
    };
    let build = match variant {
        Variant::NeedsSetup => BUILD.replacen(
            "set -eu\n",
            &format!(
                "set -eu\ntest -n \"${{{SETUP_VAR}:-}}\" || {{ echo \"build: {SETUP_VAR} is not set (run ./setup.sh first)\" >&2; exit 1; }}\n"
            ),
            1,
        ),
        _ => BUILD.to_string(),
    };
    let files: [(&str, &str); 8] = [
        ("repro.manifest.json", MANIFEST),
        ("build.sh", &build),
        ("test.sh", TEST),
        ("src/solver.awk", &solver),
        ("scripts/fetch-libsolve.sh", FETCH),
        ("vendor/libsolve-2.1.awk", LIBSOLVE),
        ("tests/simple.model", SIMPLE_MODEL),
        ("tests/simple.expected", expected),
    ];
    for (rel, body) in files {
        let path = dest.join(rel);
        std::fs::create_dir_all(path.parent().expect("relative paths have parents"))?;
        std::fs::write(path, body)?;
    }
    Ok(())
}

fn git(repo: &Path, args: &[&str]) -> io::Result<String> {
    let out = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(["-c", "user.name=Toy Developer", "-c", "user.email=dev@toy-solver.invalid", "-c", "commit.gpgsign=false"])
        .args(args)
        .env("GIT_AUTHOR_DATE", "2024-01-01T00:00:00Z")
        .env("GIT_COMMITTER_DATE", "2024-01-01T00:00:00Z")
        .output()?;
    if !out.status.success() {
        return Err(io::Error::other(format!(
            "git {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )));
    }
    Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn commit_tree(repo: &Path, variant: Variant, message: &str) -> io::Result<CommitId> {
    for entry in std::fs::read_dir(repo)? {
        let entry = entry?;
        if entry.file_name() != ".git" {
            let p = entry.path();
            if p.is_dir() {
                std::fs::remove_dir_all(p)?;
            } else {
                std::fs::remove_file(p)?;
            }
        }
    }
    write_tree(repo, variant)?;
    git(repo, &["add", "-A"])?;
    git(repo, &["commit", "-q", "--allow-empty", "-m", message])?;
    let head = git(repo, &["rev-parse", "HEAD"])?;
    CommitId::parse(&head).map_err(|e| io::Error::other(e.to_string()))
}

/// A local git repository with the scripted history.
#[derive(Debug, Clone)]
pub struct ToyRepo {
    pub path: PathBuf,
    /// Correct solver.
    pub c1: CommitId,
    /// Changed default for input-less nodes: breaks b2.
    pub c2: CommitId,
    /// Fix restoring the original default.
    pub c3: CommitId,
    /// Off-mainline commit whose sanity test fails.
    pub broken_test: CommitId,
}

impl ToyRepo {
    /// Creates the repository at `path` (which must not exist yet). The main
    /// branch ends at C3.
    pub fn create(path: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(path)?;
        git(path, &["init", "-q", "-b", "main"])?;
        let c1 = commit_tree(path, Variant::Correct, "toy-solver 1.0")?;
        git(path, &["checkout", "-q", "-b", "broken-test"])?;
        let broken_test = commit_tree(path, Variant::BrokenTest, "update expected fixpoint")?;
        git(path, &["checkout", "-q", "main"])?;
        let c2 = commit_tree(path, Variant::DefaultOne, "default input-less nodes to 1")?;
        let c3 = commit_tree(path, Variant::Correct, "revert default for input-less nodes")?;
        Ok(Self { path: path.to_path_buf(), c1, c2, c3, broken_test })
    }

    /// Adds a commit of `variant` on the main branch and returns its id.
    pub fn commit(&self, variant: Variant, message: &str) -> io::Result<CommitId> {
        commit_tree(&self.path, variant, message)
    }

    /// Writes the tree at `commit` into `dest`.
    pub fn export(&self, commit: &CommitId, dest: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dest)?;
        let archive = Command::new("git")
            .arg("-C")
            .arg(&self.path)
            .args(["archive", "--format=tar", commit.as_str()])
            .output()?;
        if !archive.status.success() {
            return Err(io::Error::other(String::from_utf8_lossy(&archive.stderr).into_owned()));
        }
        tar::Archive::new(&archive.stdout[..]).unpack(dest)
    }
}

/// A single-commit repository of `variant`.
pub fn create_variant_repo(path: &Path, variant: Variant) -> io::Result<CommitId> {
    std::fs::create_dir_all(path)?;
    git(path, &["init", "-q", "-b", "main"])?;
    commit_tree(path, variant, "toy-solver")
}

/// The bundled benchmark models.
pub fn model(name: &str) -> &'static str {
    match name {
        "b1" => include_str!("../../fixtures/models/b1.model"),
        "b2" => include_str!("../../fixtures/models/b2.model"),
        "b3" => include_str!("../../fixtures/models/b3.model"),
        "b4" => include_str!("../../fixtures/models/b4.model"),
        "hard" => include_str!("../../fixtures/models/hard.model"),
        other => panic!("no fixture model {other}"),
    }
}

/// Submission metadata and model bytes for a bundled benchmark. The hard
/// model carries a 2 s wall-limit override.
pub fn submission(name: &str) -> (SubmissionMeta, Vec<u8>) {
    let (fixpoint, wall) = match name {
        "b1" => (Some("x=1 y=0 z=1"), None),
        "b2" => (Some("seed=0 a=0 b=1"), None),
        "b3" => (Some("p=1 q=1 r=1 s=1"), None),
        "b4" => (Some("u=0 v=1 w=1"), None),
        "hard" => (None, Some(2)),
        other => panic!("no fixture benchmark {other}"),
    };
    let mut pairs = vec![("result", "STABLE")];
    if let Some(fp) = fixpoint {
        pairs.push(("fixpoint", fp));
    }
    let mut meta = SubmissionMeta::new("modeller@example.org", Assertion::key_equals(pairs));
    meta.benchmark_id = Some(name.to_string());
    meta.format_tag = "toy-network".into();
    meta.wall_seconds = wall;
    (meta, model(name).as_bytes().to_vec())
}

/// Writes benchmark metadata documents plus model files for the one-shot
/// evaluation mode.
pub fn write_benchmarks_dir(dest: &Path, names: &[&str]) -> io::Result<()> {
    std::fs::create_dir_all(dest)?;
    for name in names {
        let (meta, bytes) = submission(name);
        let model_file = format!("{name}.model");
        std::fs::write(dest.join(&model_file), bytes)?;
        let mut doc = serde_json::json!({
            "benchmark_id": name,
            "model": model_file,
            "format_tag": meta.format_tag,
            "assertion": meta.assertion,
            "algorithm_tags": meta.algorithm_tags,
        });
        if let Some(w) = meta.wall_seconds {
            doc["wall_seconds"] = w.into();
        }
        std::fs::write(dest.join(format!("{name}.json")), serde_json::to_vec_pretty(&doc)?)?;
    }
    Ok(())
}
