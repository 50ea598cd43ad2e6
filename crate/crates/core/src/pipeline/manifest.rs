// SPDX-License-Identifier: Apache-2.0

//! The declarative build recipe, `repro.manifest.json`.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ids::Digest;

pub const MANIFEST_FILE_NAME: &str = "repro.manifest.json";
pub const ALGORITHM_PLACEHOLDER: &str = "{algorithm}";
pub const MODEL_PATH_PLACEHOLDER: &str = "{model_path}";

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("malformed manifest: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

/// An argv vector executed directly, without shell interpretation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandSpec {
    pub argv: Vec<String>,
}

impl CommandSpec {
    pub fn new<I, S>(argv: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { argv: argv.into_iter().map(Into::into).collect() }
    }

    pub fn display(&self) -> String {
        self.argv.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependencyDecl {
    pub name: String,
    pub version: String,
    pub acquisition: CommandSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NetworkPolicy {
    #[default]
    DepsOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceLimits {
    #[serde(default = "ResourceLimits::default_wall_seconds")]
    pub wall_seconds: u64,
    #[serde(default = "ResourceLimits::default_cpu_seconds")]
    pub cpu_seconds: u64,
    #[serde(default = "ResourceLimits::default_memory_bytes")]
    pub memory_bytes: u64,
    #[serde(default = "ResourceLimits::default_max_processes")]
    pub max_processes: u64,
    #[serde(default)]
    pub network: NetworkPolicy,
}

impl ResourceLimits {
    fn default_wall_seconds() -> u64 {
        300
    }
    fn default_cpu_seconds() -> u64 {
        600
    }
    fn default_memory_bytes() -> u64 {
        4 << 30
    }
    fn default_max_processes() -> u64 {
        512
    }

    pub fn with_wall_seconds(&self, wall_seconds: u64) -> Self {
        Self { wall_seconds, ..self.clone() }
    }
}

impl Default for ResourceLimits {
    fn default() -> Self {
        Self {
            wall_seconds: Self::default_wall_seconds(),
            cpu_seconds: Self::default_cpu_seconds(),
            memory_bytes: Self::default_memory_bytes(),
            max_processes: Self::default_max_processes(),
            network: NetworkPolicy::DepsOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub dependencies: Vec<DependencyDecl>,
    pub build_steps: Vec<CommandSpec>,
    pub test_command: CommandSpec,
    pub benchmark_command: CommandSpec,
    pub algorithms: Vec<String>,
    pub env_whitelist: Vec<String>,
    pub limits: ResourceLimits,
}

impl Manifest {
    pub fn parse(bytes: &[u8]) -> Result<Self, ManifestError> {
        let manifest: Manifest = serde_json::from_slice(bytes)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<(Self, Digest), ManifestError> {
        let bytes = std::fs::read(path).map_err(|source| ManifestError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let manifest = Self::parse(&bytes)?;
        Ok((manifest, Digest::of(&bytes)))
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let invalid = |msg: String| Err(ManifestError::Invalid(msg));
        if self.schema_version < 1 {
            return invalid("schema_version must be >= 1".into());
        }

        let mut seen_deps = HashSet::new();
        for dep in &self.dependencies {
            if !is_dependency_name(&dep.name) {
                return invalid(format!("dependency name {:?} must match [A-Za-z0-9._+-]+", dep.name));
            }
            if dep.version.is_empty() {
                return invalid(format!("dependency {} has an empty version", dep.name));
            }
            // Each dependency materializes into deps/<name>, so names are unique.
            if !seen_deps.insert(&dep.name) {
                return invalid(format!("dependency {} declared twice", dep.name));
            }
            check_command("dependencies.acquisition", &dep.acquisition)?;
        }
        for step in &self.build_steps {
            check_command("build_steps", step)?;
        }
        check_command("test_command", &self.test_command)?;
        check_command("benchmark_command", &self.benchmark_command)?;

        for placeholder in [ALGORITHM_PLACEHOLDER, MODEL_PATH_PLACEHOLDER] {
            let count: usize = self
                .benchmark_command
                .argv
                .iter()
                .map(|arg| arg.matches(placeholder).count())
                .sum();
            if count != 1 {
                return invalid(format!(
                    "benchmark_command must contain {placeholder} exactly once (found {count})"
                ));
            }
        }

        if self.algorithms.is_empty() {
            return invalid("algorithms must not be empty".into());
        }
        let mut seen_algs = HashSet::new();
        for alg in &self.algorithms {
            if alg.is_empty() {
                return invalid("algorithm tags must be non-empty".into());
            }
            if !seen_algs.insert(alg) {
                return invalid(format!("algorithm {alg:?} listed twice"));
            }
        }

        for name in &self.env_whitelist {
            if !is_env_name(name) {
                return invalid(format!("env_whitelist entry {name:?} must match [A-Z_][A-Z0-9_]*"));
            }
        }

        let l = &self.limits;
        if l.wall_seconds == 0 || l.cpu_seconds == 0 || l.memory_bytes == 0 || l.max_processes == 0 {
            return invalid("limits must all be positive".into());
        }
        Ok(())
    }

    /// Substitutes the placeholders of `benchmark_command`.
    pub fn benchmark_argv(&self, algorithm: &str, model_path: &Path) -> Vec<String> {
        let model = model_path.display().to_string();
        self.benchmark_command
            .argv
            .iter()
            .map(|arg| arg.replace(ALGORITHM_PLACEHOLDER, algorithm).replace(MODEL_PATH_PLACEHOLDER, &model))
            .collect()
    }

    pub fn declares_dependency(&self, name: &str) -> bool {
        self.dependencies.iter().any(|d| d.name == name)
    }
}

fn check_command(field: &str, cmd: &CommandSpec) -> Result<(), ManifestError> {
    match cmd.argv.first() {
        Some(program) if !program.is_empty() => Ok(()),
        _ => Err(ManifestError::Invalid(format!("{field}: argv must start with a program"))),
    }
}

pub(crate) fn is_env_name(name: &str) -> bool {
    let mut bytes = name.bytes();
    matches!(bytes.next(), Some(b'A'..=b'Z' | b'_'))
        && bytes.all(|b| matches!(b, b'A'..=b'Z' | b'0'..=b'9' | b'_'))
}

fn is_dependency_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'+' | b'-'))
}
