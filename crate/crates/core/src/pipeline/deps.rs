// SPDX-License-Identifier: Apache-2.0

//! Cache of materialized dependencies.
//!
//! Entries are keyed by the digest of `(name, version, acquisition argv)` and
//! carry the content digest of the materialized tree, which is re-checked on
//! every restore. A dependency-update trigger drops every entry of that name.

use std::path::{Path, PathBuf};

use super::fetch::{copy_tree, tree_digest};
use super::manifest::DependencyDecl;
use crate::ids::Digest;

#[derive(Debug, Clone)]
pub struct DependencyCache {
    root: PathBuf,
}

impl DependencyCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn key(dep: &DependencyDecl) -> Digest {
        let doc = serde_json::json!({
            "name": dep.name,
            "version": dep.version,
            "argv": dep.acquisition.argv,
        });
        Digest::of_canonical_json(&doc)
    }

    fn entry_dir(&self, dep: &DependencyDecl) -> PathBuf {
        self.root.join(&dep.name).join(Self::key(dep).as_str())
    }

    /// Restores a cached entry into `dest`. Returns the tree digest on a
    /// verified hit; a corrupted entry is evicted and reported as a miss.
    pub fn restore(&self, dep: &DependencyDecl, dest: &Path) -> Option<Digest> {
        let entry = self.entry_dir(dep);
        let tree = entry.join("tree");
        let recorded = std::fs::read_to_string(entry.join("tree.digest")).ok()?;
        let recorded = Digest::parse(recorded.trim()).ok()?;
        match tree_digest(&tree) {
            Ok(actual) if actual == recorded => {}
            _ => {
                tracing::warn!(dependency = %dep.name, "evicting corrupted dependency cache entry");
                let _ = std::fs::remove_dir_all(&entry);
                return None;
            }
        }
        copy_tree(&tree, dest).ok()?;
        Some(recorded)
    }

    pub fn store(&self, dep: &DependencyDecl, materialized: &Path) -> std::io::Result<Digest> {
        let entry = self.entry_dir(dep);
        let parent = entry.parent().expect("entry has a parent");
        std::fs::create_dir_all(parent)?;
        let staging = tempfile::tempdir_in(parent)?;
        let tree = staging.path().join("tree");
        std::fs::create_dir(&tree)?;
        copy_tree(materialized, &tree)?;
        let digest = tree_digest(&tree)?;
        std::fs::write(staging.path().join("tree.digest"), digest.as_str())?;
        let staged = staging.keep();
        if std::fs::rename(&staged, &entry).is_err() {
            // Another writer got there first; its entry has the same key.
            let _ = std::fs::remove_dir_all(&staged);
        }
        Ok(digest)
    }

    pub fn invalidate(&self, name: &str) {
        let dir = self.root.join(name);
        if dir.exists() {
            if let Err(e) = std::fs::remove_dir_all(&dir) {
                tracing::warn!(dependency = name, error = %e, "failed to invalidate cache");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::manifest::CommandSpec;

    fn dep(version: &str) -> DependencyDecl {
        DependencyDecl {
            name: "libsolve".into(),
            version: version.into(),
            acquisition: CommandSpec::new(["sh", "fetch.sh"]),
        }
    }

    #[test]
    fn store_restore_invalidate() {
        let root = tempfile::tempdir().unwrap();
        let cache = DependencyCache::new(root.path());
        let src = tempfile::tempdir().unwrap();
        std::fs::write(src.path().join("lib.awk"), "function f() {}").unwrap();

        let empty = tempfile::tempdir().unwrap();
        assert!(cache.restore(&dep("2.1"), empty.path()).is_none());

        let digest = cache.store(&dep("2.1"), src.path()).unwrap();
        let dest = tempfile::tempdir().unwrap();
        assert_eq!(cache.restore(&dep("2.1"), dest.path()), Some(digest));
        assert!(dest.path().join("lib.awk").exists());
        assert!(cache.restore(&dep("2.2"), tempfile::tempdir().unwrap().path()).is_none());

        cache.invalidate("libsolve");
        assert!(cache.restore(&dep("2.1"), tempfile::tempdir().unwrap().path()).is_none());
    }

    #[test]
    fn tampered_entries_are_evicted() {
        let root = tempfile::tempdir().unwrap();
        let cache = DependencyCache::new(root.path());
        let src = tempfile::tempdir().unwrap();
        std::fs::write(src.path().join("lib.awk"), "v1").unwrap();
        cache.store(&dep("2.1"), src.path()).unwrap();
        let tree = root.path().join("libsolve").join(DependencyCache::key(&dep("2.1")).as_str()).join("tree");
        std::fs::write(tree.join("lib.awk"), "tampered").unwrap();
        assert!(cache.restore(&dep("2.1"), tempfile::tempdir().unwrap().path()).is_none());
        assert!(!tree.exists());
    }

    #[test]
    fn key_depends_on_acquisition() {
        let mut other = dep("2.1");
        other.acquisition = CommandSpec::new(["sh", "other.sh"]);
        assert_ne!(DependencyCache::key(&dep("2.1")), DependencyCache::key(&other));
        assert_eq!(DependencyCache::key(&dep("2.1")), DependencyCache::key(&dep("2.1")));
    }
}
