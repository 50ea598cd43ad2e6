// SPDX-License-Identifier: Apache-2.0

//! Host description attached to advisory timings.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HostFingerprint {
    pub os: String,
    pub arch: String,
    pub cpu_model: String,
    /// Cells allowed to run at once when the timings were taken.
    pub concurrency: u32,
}

impl HostFingerprint {
    pub fn current(concurrency: u32) -> Self {
        Self {
            os: os_description(),
            arch: std::env::consts::ARCH.to_string(),
            cpu_model: cpu_model(),
            concurrency,
        }
    }

    /// Timings taken under different fingerprints must not be compared.
    pub fn comparable_with(&self, other: &HostFingerprint) -> bool {
        self == other
    }
}

fn os_description() -> String {
    let release = std::fs::read_to_string("/proc/sys/kernel/osrelease").unwrap_or_default();
    match release.trim() {
        "" => std::env::consts::OS.to_string(),
        r => format!("{} {r}", std::env::consts::OS),
    }
}

fn cpu_model() -> String {
    let info = std::fs::read_to_string("/proc/cpuinfo").unwrap_or_default();
    info.lines()
        .find_map(|line| {
            let (key, value) = line.split_once(':')?;
            matches!(key.trim(), "model name" | "Hardware" | "cpu model").then(|| value.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".to_string())
}
