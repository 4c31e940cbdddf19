//! Payload execution.
//!
//! An [`Executor`] starts a payload and hands back a [`RunningPayload`] the
//! worker polls between heartbeats. [`ProcessExecutor`] runs real commands;
//! [`SimulatedExecutor`] finishes payloads on the logical clock, which is what
//! the whole-system simulations use.

use std::fmt;
use std::io::{self, Read};
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use crate::clock::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchSpec {
    pub job_id: String,
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub work_dir: PathBuf,
    /// Directories prepended to `PATH`, in order.
    pub path_prepend: Vec<PathBuf>,
    pub env: Vec<(String, String)>,
    pub started_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok,
    Nonzero(i32),
    /// Terminated by a signal or killed.
    Crashed,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finished {
    pub exit: ExitStatus,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Usage {
    pub cpu_fraction: f64,
    pub mem_bytes: u64,
}

pub trait RunningPayload: Send {
    /// Returns the outcome once the payload has ended.
    fn poll(&mut self, now: Timestamp) -> Option<Finished>;

    /// Kills the payload and returns whatever it had written.
    fn kill(&mut self) -> Finished;

    fn usage(&mut self, now: Timestamp) -> Usage;

    /// True when the payload runs in real time rather than on the logical clock.
    fn is_external(&self) -> bool {
        false
    }
}

pub trait Executor: Send + Sync + fmt::Debug {
    fn start(&self, spec: &LaunchSpec) -> io::Result<Box<dyn RunningPayload>>;
}

/// Runs commands as child processes in their own process group, with stdin
/// closed and both streams captured byte for byte.
#[derive(Debug, Default, Clone)]
pub struct ProcessExecutor;

struct ProcessRun {
    child: Child,
    stdout: Option<JoinHandle<Vec<u8>>>,
    stderr: Option<JoinHandle<Vec<u8>>>,
    last_cpu: Option<(Instant, f64)>,
}

fn drain<R: Read + Send + 'static>(mut r: R) -> JoinHandle<Vec<u8>> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        buf
    })
}

fn search_path(spec: &LaunchSpec) -> String {
    let mut parts: Vec<String> = spec.path_prepend.iter().map(|p| p.display().to_string()).collect();
    parts.push(std::env::var("PATH").unwrap_or_else(|_| "/usr/local/bin:/usr/bin:/bin".into()));
    parts.join(":")
}

impl Executor for ProcessExecutor {
    fn start(&self, spec: &LaunchSpec) -> io::Result<Box<dyn RunningPayload>> {
        let (program, args) = spec
            .command
            .split_first()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty command"))?;
        let path = search_path(spec);
        let mut cmd = Command::new(program);
        cmd.args(args)
            .current_dir(&spec.work_dir)
            .env("PATH", &path)
            .envs(spec.env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        let mut child = cmd.spawn()?;
        let stdout = child.stdout.take().map(drain);
        let stderr = child.stderr.take().map(drain);
        Ok(Box::new(ProcessRun {
            child,
            stdout,
            stderr,
            last_cpu: None,
        }))
    }
}

impl ProcessRun {
    fn collect(&mut self, exit: ExitStatus) -> Finished {
        let join = |h: Option<JoinHandle<Vec<u8>>>| h.map(|h| h.join().unwrap_or_default()).unwrap_or_default();
        Finished {
            exit,
            stdout: join(self.stdout.take()),
            stderr: join(self.stderr.take()),
        }
    }

    /// CPU seconds and resident bytes from procfs.
    fn proc_stats(&self) -> Option<(f64, u64)> {
        let pid = self.child.id();
        let stat = std::fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
        // Fields after the parenthesised command name; utime and stime are 14 and 15.
        let rest = &stat[stat.rfind(')')? + 2..];
        let fields: Vec<&str> = rest.split_whitespace().collect();
        let ticks: f64 = fields.get(11)?.parse::<f64>().ok()? + fields.get(12)?.parse::<f64>().ok()?;
        let hz = unsafe { libc::sysconf(libc::_SC_CLK_TCK) } as f64;
        let statm = std::fs::read_to_string(format!("/proc/{pid}/statm")).ok()?;
        let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
        let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) } as u64;
        Some((ticks / hz.max(1.0), pages * page))
    }
}

fn exit_of(status: std::process::ExitStatus) -> ExitStatus {
    match status.code() {
        Some(0) => ExitStatus::Ok,
        Some(c) => ExitStatus::Nonzero(c),
        None => ExitStatus::Crashed,
    }
}

impl RunningPayload for ProcessRun {
    fn poll(&mut self, _now: Timestamp) -> Option<Finished> {
        match self.child.try_wait() {
            Ok(Some(status)) => Some(self.collect(exit_of(status))),
            Ok(None) => None,
            Err(_) => Some(self.collect(ExitStatus::Crashed)),
        }
    }

    fn kill(&mut self) -> Finished {
        let pgid = self.child.id() as libc::pid_t;
        // The whole group, so grandchildren holding the pipes die too.
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
        let _ = self.child.wait();
        self.collect(ExitStatus::Crashed)
    }

    fn usage(&mut self, _now: Timestamp) -> Usage {
        let Some((cpu, mem)) = self.proc_stats() else {
            return Usage::default();
        };
        let now = Instant::now();
        let fraction = match self.last_cpu {
            Some((then, prev)) => {
                let wall = now.duration_since(then).as_secs_f64();
                if wall > 0.0 { (cpu - prev) / wall } else { 0.0 }
            }
            None => 0.0,
        };
        self.last_cpu = Some((now, cpu));
        Usage {
            cpu_fraction: fraction.clamp(0.0, 1.0),
            mem_bytes: mem,
        }
    }

    fn is_external(&self) -> bool {
        true
    }
}

impl Drop for ProcessRun {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            self.kill();
        }
    }
}

/// How a simulated payload behaves.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRun {
    pub duration_secs: u64,
    pub exit: ExitStatus,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    /// Files written when the payload finishes, relative to the work dir
    /// unless absolute.
    pub files: Vec<(PathBuf, Vec<u8>)>,
    pub usage: Usage,
}

impl SimulatedRun {
    pub fn ok(duration_secs: u64) -> Self {
        SimulatedRun {
            duration_secs,
            exit: ExitStatus::Ok,
            stdout: Vec::new(),
            stderr: Vec::new(),
            files: Vec::new(),
            usage: Usage {
                cpu_fraction: 0.5,
                mem_bytes: 64 << 20,
            },
        }
    }

    pub fn stdout(mut self, bytes: &[u8]) -> Self {
        self.stdout = bytes.to_vec();
        self
    }

    pub fn stderr(mut self, bytes: &[u8]) -> Self {
        self.stderr = bytes.to_vec();
        self
    }

    pub fn exit(mut self, exit: ExitStatus) -> Self {
        self.exit = exit;
        self
    }

    pub fn file(mut self, path: impl Into<PathBuf>, bytes: &[u8]) -> Self {
        self.files.push((path.into(), bytes.to_vec()));
        self
    }
}

type Behaviour = dyn Fn(&LaunchSpec) -> SimulatedRun + Send + Sync;

/// Finishes payloads after a logical duration decided by a closure.
#[derive(Clone)]
pub struct SimulatedExecutor {
    behaviour: Arc<Behaviour>,
}

impl fmt::Debug for SimulatedExecutor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SimulatedExecutor")
    }
}

impl SimulatedExecutor {
    pub fn new(behaviour: impl Fn(&LaunchSpec) -> SimulatedRun + Send + Sync + 'static) -> Self {
        SimulatedExecutor {
            behaviour: Arc::new(behaviour),
        }
    }
}

struct SimRun {
    run: SimulatedRun,
    work_dir: PathBuf,
    ends_at: Timestamp,
    done: bool,
}

impl Executor for SimulatedExecutor {
    fn start(&self, spec: &LaunchSpec) -> io::Result<Box<dyn RunningPayload>> {
        let run = (self.behaviour)(spec);
        Ok(Box::new(SimRun {
            ends_at: spec.started_at.plus(run.duration_secs),
            work_dir: spec.work_dir.clone(),
            run,
            done: false,
        }))
    }
}

impl RunningPayload for SimRun {
    fn poll(&mut self, now: Timestamp) -> Option<Finished> {
        if self.done || now < self.ends_at {
            return None;
        }
        self.done = true;
        for (path, bytes) in &self.run.files {
            if let Err(e) = std::fs::write(self.work_dir.join(path), bytes) {
                tracing::warn!("simulated payload could not write {}: {e}", path.display());
            }
        }
        Some(Finished {
            exit: self.run.exit,
            stdout: self.run.stdout.clone(),
            stderr: self.run.stderr.clone(),
        })
    }

    fn kill(&mut self) -> Finished {
        self.done = true;
        Finished {
            exit: ExitStatus::Crashed,
            stdout: Vec::new(),
            stderr: Vec::new(),
        }
    }

    fn usage(&mut self, _now: Timestamp) -> Usage {
        self.run.usage
    }
}
