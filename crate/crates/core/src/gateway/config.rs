// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::harness::MatrixOptions;
use crate::registry::DEFAULT_MAX_MODEL_BYTES;

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "REPROSVC_CONFIG";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default = "IngestConfig::default_poll_seconds")]
    pub poll_seconds: u64,
}

impl IngestConfig {
    fn default_poll_seconds() -> u64 {
        60
    }
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { poll_seconds: Self::default_poll_seconds() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    #[serde(default = "ServiceConfig::default_listen_address")]
    pub listen_address: String,
    /// Projects built at once. Defaults to the number of cores.
    #[serde(default = "ServiceConfig::default_worker_limit")]
    pub worker_limit: u32,
    #[serde(default)]
    pub ingest: IngestConfig,
    /// Workspaces kept per project after their run, newest first.
    #[serde(default = "ServiceConfig::default_retention_count")]
    pub retention_count: u32,
    #[serde(default = "ServiceConfig::default_max_model_bytes")]
    pub max_model_bytes: u64,
    #[serde(default)]
    pub matrix: MatrixOptions,
    /// API token to submitter identity. When non-empty, benchmark submission
    /// and retirement require `Authorization: Bearer <token>`.
    #[serde(default)]
    pub submitter_tokens: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("config: {0}")]
    Invalid(String),
    #[error("data_dir {path} is not writable: {source}")]
    DataDir { path: String, source: std::io::Error },
}

impl ServiceConfig {
    fn default_listen_address() -> String {
        "127.0.0.1:8080".into()
    }
    fn default_worker_limit() -> u32 {
        std::thread::available_parallelism().map_or(1, |n| n.get() as u32)
    }
    fn default_retention_count() -> u32 {
        5
    }
    fn default_max_model_bytes() -> u64 {
        DEFAULT_MAX_MODEL_BYTES
    }

    /// Defaults everywhere except `data_dir`.
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            listen_address: Self::default_listen_address(),
            worker_limit: Self::default_worker_limit(),
            ingest: IngestConfig::default(),
            retention_count: Self::default_retention_count(),
            max_model_bytes: Self::default_max_model_bytes(),
            matrix: MatrixOptions::default(),
            submitter_tokens: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        let config: Self = serde_json::from_slice(&bytes)
            .map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.worker_limit == 0 {
            return Err(ConfigError::Invalid("worker_limit must be positive".into()));
        }
        if self.ingest.poll_seconds == 0 {
            return Err(ConfigError::Invalid("ingest.poll_seconds must be positive".into()));
        }
        if self.max_model_bytes == 0 {
            return Err(ConfigError::Invalid("max_model_bytes must be positive".into()));
        }
        if self.matrix.parallelism == 0 {
            return Err(ConfigError::Invalid("matrix.parallelism must be positive".into()));
        }
        if self.listen_address.parse::<std::net::SocketAddr>().is_err() {
            return Err(ConfigError::Invalid(format!("listen_address {:?} is not host:port", self.listen_address)));
        }
        if self.submitter_tokens.iter().any(|(t, who)| t.is_empty() || who.is_empty()) {
            return Err(ConfigError::Invalid("submitter_tokens entries must be non-empty".into()));
        }
        Ok(())
    }

    /// Creates `data_dir` if needed and proves it writable.
    pub fn prepare_data_dir(&self) -> Result<(), ConfigError> {
        let dir = &self.data_dir;
        let err = |source| ConfigError::DataDir { path: dir.display().to_string(), source };
        std::fs::create_dir_all(dir).map_err(err)?;
        tempfile::NamedTempFile::new_in(dir).map(drop).map_err(err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"data_dir": "/tmp/x", "ingest": {"poll_seconds": 5}}"#).unwrap();
        let cfg = ServiceConfig::load(&path).unwrap();
        assert_eq!(cfg.ingest.poll_seconds, 5);
        assert_eq!(cfg.retention_count, 5);
        assert_eq!(cfg.max_model_bytes, 16 << 20);
        assert!(cfg.worker_limit >= 1);
    }

    #[test]
    fn signs_are_checked() {
        let mut cfg = ServiceConfig::new("/tmp/x");
        cfg.worker_limit = 0;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let mut cfg = ServiceConfig::new("/tmp/x");
        cfg.listen_address = "nowhere".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unwritable_data_dir_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        std::fs::write(&file, b"").unwrap();
        let cfg = ServiceConfig::new(file.join("data"));
        let msg = cfg.prepare_data_dir().unwrap_err().to_string();
        assert!(msg.contains("plain-file"), "{msg}");
    }
}
