// SPDX-License-Identifier: Apache-2.0

//! Source acquisition: local git repositories, remote repositories through a
//! local mirror, and plain directory copies for one-shot evaluation.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use sha2::{Digest as _, Sha256};
use walkdir::WalkDir;

use crate::ids::{CommitId, Digest};

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("unknown revision {0}")]
    UnknownRevision(String),
    #[error("fetch failed: {0}")]
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceLocator {
    Local(PathBuf),
    Remote(String),
}

impl SourceLocator {
    pub fn parse(raw: &str) -> Self {
        if raw.contains("://") || raw.starts_with("git@") {
            SourceLocator::Remote(raw.to_string())
        } else {
            SourceLocator::Local(PathBuf::from(raw))
        }
    }

    /// Resolves the commit the source's `HEAD` points at.
    pub fn head_commit(&self) -> Result<CommitId, FetchError> {
        let out = match self {
            SourceLocator::Local(path) => {
                if !path.is_dir() {
                    return Err(FetchError::SourceUnavailable(format!("{} does not exist", path.display())));
                }
                git(Some(path), &["rev-parse", "HEAD"])
            }
            SourceLocator::Remote(url) => git(None, &["ls-remote", url, "HEAD"]),
        }
        .map_err(FetchError::SourceUnavailable)?;
        let token = out.split_whitespace().next().unwrap_or_default();
        CommitId::parse(token).map_err(|e| FetchError::SourceUnavailable(e.to_string()))
    }

    /// Writes exactly the tree at `commit` into `dest`. Remote sources are
    /// first synchronized into `mirror`.
    pub fn export(&self, commit: &CommitId, dest: &Path, mirror: &Path, log: &mut Vec<u8>) -> Result<(), FetchError> {
        let repo = match self {
            SourceLocator::Local(path) => {
                if !path.is_dir() {
                    return Err(FetchError::SourceUnavailable(format!("{} does not exist", path.display())));
                }
                path.clone()
            }
            SourceLocator::Remote(url) => {
                sync_mirror(url, mirror, log)?;
                mirror.to_path_buf()
            }
        };
        let spec = format!("{}^{{commit}}", commit.as_str());
        let resolved = git(Some(&repo), &["rev-parse", "--verify", "--quiet", &spec])
            .map_err(|_| FetchError::UnknownRevision(commit.to_string()))?;
        let _ = writeln!(log, "resolved {} -> {}", commit, resolved.trim());

        let mut child = Command::new("git")
            .arg("-C")
            .arg(&repo)
            .args(["archive", "--format=tar", resolved.trim()])
            .env("GIT_TERMINAL_PROMPT", "0")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| FetchError::Failed(format!("cannot run git: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let mut archive = tar::Archive::new(stdout);
        archive.set_preserve_permissions(true);
        let unpacked = archive.unpack(dest);
        let output = child.wait_with_output().map_err(|e| FetchError::Failed(e.to_string()))?;
        log.extend_from_slice(&output.stderr);
        if !output.status.success() {
            return Err(FetchError::Failed(format!("git archive exited with {}", output.status)));
        }
        unpacked.map_err(|e| FetchError::Failed(format!("unpacking source tree: {e}")))?;
        Ok(())
    }

    pub fn is_reachable(&self) -> bool {
        self.head_commit().is_ok()
    }
}

fn sync_mirror(url: &str, mirror: &Path, log: &mut Vec<u8>) -> Result<(), FetchError> {
    let result = if mirror.join("HEAD").exists() {
        git(Some(mirror), &["remote", "update", "--prune"])
    } else {
        if let Some(parent) = mirror.parent() {
            std::fs::create_dir_all(parent).map_err(|e| FetchError::Failed(e.to_string()))?;
        }
        git(None, &["clone", "--mirror", "--quiet", url, &mirror.display().to_string()])
    };
    match result {
        Ok(out) => {
            log.extend_from_slice(out.as_bytes());
            Ok(())
        }
        Err(e) => Err(FetchError::SourceUnavailable(e)),
    }
}

fn git(repo: Option<&Path>, args: &[&str]) -> Result<String, String> {
    let mut cmd = Command::new("git");
    if let Some(repo) = repo {
        cmd.arg("-C").arg(repo);
    }
    let output = cmd
        .args(args)
        .env("GIT_TERMINAL_PROMPT", "0")
        .stdin(Stdio::null())
        .output()
        .map_err(|e| format!("cannot run git: {e}"))?;
    if output.status.success() {
        Ok(String::from_utf8_lossy(&output.stdout).into_owned())
    } else {
        Err(String::from_utf8_lossy(&output.stderr).trim().to_string())
    }
}

/// Copies a directory tree, skipping a top-level `.git`.
pub fn copy_tree(src: &Path, dest: &Path) -> std::io::Result<()> {
    for entry in WalkDir::new(src).min_depth(1).into_iter().filter_entry(|e| !(e.depth() == 1 && e.file_name() == ".git")) {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(src).expect("walkdir yields children");
        let target = dest.join(rel);
        let ft = entry.file_type();
        if ft.is_dir() {
            std::fs::create_dir_all(&target)?;
        } else if ft.is_symlink() {
            let link = std::fs::read_link(entry.path())?;
            std::os::unix::fs::symlink(link, &target)?;
        } else {
            std::fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

/// Content digest of a directory tree: relative paths, executable bits and
/// file contents in sorted path order. A top-level `.git` is ignored.
pub fn tree_digest(root: &Path) -> std::io::Result<Digest> {
    use std::os::unix::fs::PermissionsExt;
    let mut hasher = Sha256::new();
    let walker = WalkDir::new(root)
        .min_depth(1)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !(e.depth() == 1 && e.file_name() == ".git"));
    for entry in walker {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(root).expect("walkdir yields children");
        let ft = entry.file_type();
        hasher.update(rel.as_os_str().as_encoded_bytes());
        hasher.update([0]);
        if ft.is_file() {
            let exec = entry.metadata().map_err(std::io::Error::other)?.permissions().mode() & 0o111 != 0;
            hasher.update(if exec { b"x" } else { b"f" });
            let bytes = std::fs::read(entry.path())?;
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        } else if ft.is_symlink() {
            hasher.update(b"l");
            hasher.update(std::fs::read_link(entry.path())?.as_os_str().as_encoded_bytes());
        } else {
            hasher.update(b"d");
        }
        hasher.update([0]);
    }
    Ok(Digest::parse(&hex::encode(hasher.finalize())).expect("sha256 hex is a digest"))
}
