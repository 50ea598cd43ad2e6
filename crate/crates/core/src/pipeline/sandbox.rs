// SPDX-License-Identifier: Apache-2.0

//! Process-level sandbox for build, test and benchmark commands.
//!
//! Each step runs with:
//! - the environment cleared and replaced by an explicit projection,
//! - stdin closed, stdout and stderr interleaved into one transcript,
//! - its own process group, so the whole tree is killed at the wall limit,
//! - `RLIMIT_CPU`, `RLIMIT_AS` and `RLIMIT_NPROC` from the manifest limits,
//! - a fresh, empty network namespace unless network access is allowed.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::manifest::ResourceLimits;

/// How a sandboxed step ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExitStatus {
    Code(i32),
    Signal(i32),
    Timeout,
    SpawnError(String),
}

impl ExitStatus {
    pub fn success(&self) -> bool {
        matches!(self, ExitStatus::Code(0))
    }

    pub fn code(&self) -> Option<i32> {
        match self {
            ExitStatus::Code(c) => Some(*c),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ExitStatus::Code(c) => format!("exit {c}"),
            ExitStatus::Signal(s) => format!("killed by signal {s}"),
            ExitStatus::Timeout => "TIMEOUT".to_string(),
            ExitStatus::SpawnError(e) => format!("SPAWN_ERROR: {e}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub exit: ExitStatus,
    pub transcript: Vec<u8>,
    pub wall_ms: u64,
}

/// One command invocation inside the sandbox.
#[derive(Debug, Clone)]
pub struct StepRequest<'a> {
    pub argv: &'a [String],
    /// Relative program paths containing a `/` resolve against this root.
    pub program_root: &'a Path,
    pub cwd: &'a Path,
    pub env: &'a [(String, String)],
    pub limits: &'a ResourceLimits,
    pub network_allowed: bool,
}

/// Resolves `argv[0]`: bare names go through `PATH` in the projected
/// environment, relative paths are anchored at the source tree.
pub fn resolve_program(program: &str, program_root: &Path) -> PathBuf {
    let path = Path::new(program);
    if program.contains('/') && path.is_relative() {
        program_root.join(path)
    } else {
        path.to_path_buf()
    }
}

/// True when this host can give a child process a private network
/// namespace. Probed once.
pub fn network_isolation_available() -> bool {
    static AVAILABLE: OnceLock<bool> = OnceLock::new();
    *AVAILABLE.get_or_init(|| {
        let mut cmd = Command::new("/bin/sh");
        cmd.args(["-c", "exit 0"]).stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::null());
        unsafe {
            cmd.pre_exec(|| {
                if enter_private_network() {
                    Ok(())
                } else {
                    Err(std::io::Error::last_os_error())
                }
            });
        }
        matches!(cmd.status(), Ok(s) if s.success())
    })
}

// Async-signal-safe: only raw syscalls, no allocation.
fn enter_private_network() -> bool {
    unsafe {
        libc::unshare(libc::CLONE_NEWNET) == 0
            || libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET) == 0
    }
}

fn set_limit(resource: libc::__rlimit_resource_t, value: u64) {
    let lim = libc::rlimit { rlim_cur: value as libc::rlim_t, rlim_max: value as libc::rlim_t };
    unsafe {
        libc::setrlimit(resource, &lim);
    }
}

fn kill_group(pgid: u32) {
    unsafe {
        libc::killpg(pgid as libc::pid_t, libc::SIGKILL);
    }
}

/// Executes one step and waits for it, killing the process group at the
/// wall limit. Never panics on child misbehavior: every abnormal end is an
/// [`ExitStatus`].
pub fn execute(req: &StepRequest<'_>) -> StepResult {
    let started = Instant::now();
    let spawn_error = |msg: String| StepResult {
        transcript: msg.clone().into_bytes(),
        exit: ExitStatus::SpawnError(msg),
        wall_ms: started.elapsed().as_millis() as u64,
    };

    let Some(program) = req.argv.first() else {
        return spawn_error("empty argv".into());
    };
    let mut transcript_file = match tempfile::tempfile() {
        Ok(f) => f,
        Err(e) => return spawn_error(format!("cannot create transcript: {e}")),
    };
    let (out, err) = match (transcript_file.try_clone(), transcript_file.try_clone()) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return spawn_error(format!("cannot create transcript: {e}")),
    };

    let mut cmd = Command::new(resolve_program(program, req.program_root));
    cmd.args(&req.argv[1..])
        .current_dir(req.cwd)
        .env_clear()
        .envs(req.env.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .stdin(Stdio::null())
        .stdout(Stdio::from(out))
        .stderr(Stdio::from(err));

    let cpu = req.limits.cpu_seconds;
    let memory = req.limits.memory_bytes;
    let procs = req.limits.max_processes;
    let isolate_network = !req.network_allowed;
    unsafe {
        cmd.pre_exec(move || {
            libc::setpgid(0, 0);
            set_limit(libc::RLIMIT_CORE, 0);
            set_limit(libc::RLIMIT_CPU, cpu);
            set_limit(libc::RLIMIT_AS, memory);
            set_limit(libc::RLIMIT_NPROC, procs);
            if isolate_network {
                // Best effort: hosts without namespace support still run the
                // step; the stage log states whether isolation was in force.
                enter_private_network();
            }
            Ok(())
        });
    }

    let mut child = match cmd.spawn() {
        Ok(child) => child,
        Err(e) => return spawn_error(format!("cannot spawn {program}: {e}")),
    };
    let pgid = child.id();
    let wall = Duration::from_secs(req.limits.wall_seconds);
    let deadline = started + wall;

    let mut poll = Duration::from_millis(2);
    let exit = loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                break match (status.code(), status.signal()) {
                    (Some(code), _) => ExitStatus::Code(code),
                    (None, Some(sig)) => ExitStatus::Signal(sig),
                    (None, None) => ExitStatus::Code(-1),
                };
            }
            Ok(None) if Instant::now() >= deadline => {
                kill_group(pgid);
                let _ = child.wait();
                break ExitStatus::Timeout;
            }
            Ok(None) => {
                std::thread::sleep(poll.min(deadline.saturating_duration_since(Instant::now())));
                poll = (poll * 2).min(Duration::from_millis(25));
            }
            Err(e) => {
                kill_group(pgid);
                let _ = child.wait();
                break ExitStatus::SpawnError(format!("wait failed: {e}"));
            }
        }
    };
    // Stragglers left behind by the leader die with the group.
    kill_group(pgid);
    let wall_ms = started.elapsed().as_millis() as u64;

    StepResult { exit, transcript: read_all(&mut transcript_file), wall_ms }
}

fn read_all(file: &mut File) -> Vec<u8> {
    let mut buf = Vec::new();
    if file.seek(SeekFrom::Start(0)).is_ok() {
        let _ = file.read_to_end(&mut buf);
    }
    buf
}
