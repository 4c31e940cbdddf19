//! The `kotta` command line: a thin client over the REST API plus `serve`,
//! which runs a whole enclave from a site config.
//!
//! Exit status is 0 on success, 1 on any API error or failed verification,
//! and 2 for usage errors.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::audit;
use crate::broker::JobDescription;
use crate::catalog::Action;
use crate::clock::SystemClock;
use crate::deployment::{self, Enclave, SiteConfig};
use crate::gateway::{self, Client, GatewayState};
use crate::worker::ProcessExecutor;

pub const TOKEN_FILE_ENV: &str = "KOTTA_TOKEN_FILE";
pub const ENDPOINT_ENV: &str = "KOTTA_ENDPOINT";

#[derive(Debug, Parser)]
#[command(name = "kotta", version, about = "Submit jobs to and move data in and out of a kotta enclave")]
pub struct Cli {
    /// Gateway base URL.
    #[arg(long, global = true, env = ENDPOINT_ENV, default_value = "http://127.0.0.1:8080")]
    pub endpoint: String,
    /// File holding `refresh_token=<...>`; defaults to ~/.kotta/token.
    #[arg(long, global = true, env = TOKEN_FILE_ENV)]
    pub token_file: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Submit job files (or directories of *.json); prints one job id per line.
    Submit(SubmitArgs),
    /// Show a job's status record as JSON.
    Status {
        job_id: String,
        /// Poll until the job is terminal, for at most this many seconds.
        #[arg(long)]
        wait: Option<u64>,
    },
    /// Print a job's captured stdout (or another output).
    Outputs {
        job_id: String,
        #[arg(long, conflicts_with_all = ["result", "utilization"])]
        stderr: bool,
        /// The result object (manifest for script jobs, runner output for canned jobs).
        #[arg(long, conflicts_with = "utilization")]
        result: bool,
        #[arg(long)]
        utilization: bool,
    },
    /// Upload a file (or `-` for stdin) to an s3:// URI.
    Put { uri: String, file: PathBuf },
    /// Download an s3:// URI to stdout or a file.
    Get {
        uri: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print a pre-signed URL for an object.
    Sign {
        uri: String,
        #[arg(long, default_value = "read")]
        action: Action,
        #[arg(long, default_value_t = 300)]
        ttl: u64,
    },
    /// Audit log operations.
    Audit {
        #[command(subcommand)]
        command: AuditCommand,
    },
    /// Run an enclave and its gateway from a site config.
    Serve {
        #[arg(long, short)]
        config: PathBuf,
        /// Control-loop period in milliseconds.
        #[arg(long, default_value_t = 1000)]
        tick_ms: u64,
    },
}

#[derive(Debug, Args)]
pub struct SubmitArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Override the queue named in each file.
    #[arg(long)]
    pub queue: Option<String>,
    /// Override the walltime (minutes) in each file.
    #[arg(long)]
    pub walltime: Option<i64>,
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Check the hash chain, remotely or of a local JSONL export.
    Verify {
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Client(#[from] gateway::ClientError),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("{0}")]
    Other(String),
}

fn io_err(what: impl AsRef<Path>) -> impl FnOnce(std::io::Error) -> CliError {
    let what = what.as_ref().display().to_string();
    move |e| CliError::Io(what, e)
}

fn default_token_file() -> PathBuf {
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    home.join(".kotta").join("token")
}

/// Parses `std::env::args` and runs; returns the process exit status.
pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn client(cli: &Cli) -> Result<Client, CliError> {
    let path = cli.token_file.clone().unwrap_or_else(default_token_file);
    Ok(Client::from_token_file(&cli.endpoint, &path)?)
}

/// Expands directories to their `*.json` files, sorted.
fn job_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn load_job(path: &Path, args: &SubmitArgs) -> Result<JobDescription, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut desc: JobDescription =
        serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    if let Some(q) = &args.queue {
        desc.queue = q.clone();
    }
    if let Some(w) = args.walltime {
        desc.walltime_minutes = w;
    }
    Ok(desc)
}

fn write_out(out: &mut dyn Write, bytes: &[u8]) -> Result<(), CliError> {
    out.write_all(bytes).map_err(io_err("stdout"))
}

fn json_line(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    writeln!(out, "{text}").map_err(io_err("stdout"))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    match &cli.command {
        Command::Submit(args) => {
            // Parse everything first so a typo in file 40 does not leave 39 jobs behind.
            let jobs: Vec<JobDescription> =
                job_files(&args.files)?.iter().map(|f| load_job(f, args)).collect::<Result<_, _>>()?;
            let c = client(&cli)?;
            for job in &jobs {
                let id = c.submit(job)?;
                writeln!(out, "{id}").map_err(io_err("stdout"))?;
            }
            Ok(0)
        }
        Command::Status { job_id, wait } => {
            let c = client(&cli)?;
            let view = match wait {
                Some(secs) => c.wait(job_id, Duration::from_secs(*secs))?,
                None => c.status(job_id)?,
            };
            json_line(out, &view)?;
            Ok(0)
        }
        Command::Outputs { job_id, stderr, result, utilization } => {
            let c = client(&cli)?;
            if *utilization {
                json_line(out, &c.utilization(job_id)?)?;
            } else {
                let bytes = if *stderr {
                    c.stderr(job_id)?
                } else if *result {
                    c.result(job_id)?
                } else {
                    c.stdout(job_id)?
                };
                write_out(out, &bytes)?;
            }
            Ok(0)
        }
        Command::Put { uri, file } => {
            let bytes = if file.as_os_str() == "-" {
                let mut buf = Vec::new();
                std::io::stdin().read_to_end(&mut buf).map_err(io_err("stdin"))?;
                buf
            } else {
                std::fs::read(file).map_err(io_err(file))?
            };
            let stored = client(&cli)?.put(uri, bytes)?;
            json_line(out, &stored)?;
            Ok(0)
        }
        Command::Get { uri, output } => {
            let bytes = client(&cli)?.get(uri)?;
            match output {
                Some(path) => std::fs::write(path, bytes).map_err(io_err(path))?,
                None => write_out(out, &bytes)?,
            }
            Ok(0)
        }
        Command::Sign { uri, action, ttl } => {
            let signed = client(&cli)?.sign(uri, *action, *ttl)?;
            writeln!(out, "{}", signed.url).map_err(io_err("stdout"))?;
            Ok(0)
        }
        Command::Audit { command: AuditCommand::Verify { file } } => match file {
            Some(path) => match audit::verify_file(path).map_err(io_err(path))? {
                Ok(n) => {
                    writeln!(out, "ok: {n} events").map_err(io_err("stdout"))?;
                    Ok(0)
                }
                Err(brk) => {
                    writeln!(out, "tampered: {brk}").map_err(io_err("stdout"))?;
                    Ok(1)
                }
            },
            None => {
                let report = client(&cli)?.audit_verify()?;
                json_line(out, &report)?;
                Ok(if report["ok"] == true { 0 } else { 1 })
            }
        },
        Command::Serve { config, tick_ms } => serve(config, Duration::from_millis(*tick_ms), out),
    }
}

fn serve(config: &Path, period: Duration, out: &mut dyn Write) -> Result<i32, CliError> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .try_init();
    let site = SiteConfig::load(config).map_err(|e| CliError::Other(e.to_string()))?;
    let mut enclave_config = site.enclave_config().map_err(|e| CliError::Other(e.to_string()))?;
    if site.signing_key.is_none() {
        let key: [u8; 32] = rand::random();
        enclave_config.catalog = enclave_config.catalog.signing_key(&key);
    }
    let enclave = Enclave::new(enclave_config, Arc::new(SystemClock), Arc::new(ProcessExecutor))
        .map_err(|e| CliError::Other(e.to_string()))?;
    let written = site.bootstrap(enclave.services()).map_err(|e| CliError::Other(e.to_string()))?;
    let state = GatewayState::new(enclave.services().clone(), site.egress);
    let handle = gateway::spawn(&site.listen, state).map_err(io_err(&site.listen))?;
    for path in written {
        writeln!(out, "token file {}", path.display()).map_err(io_err("stdout"))?;
    }
    // Last line of startup output; scripts wait for it.
    writeln!(out, "listening on {}", handle.endpoint()).map_err(io_err("stdout"))?;
    out.flush().map_err(io_err("stdout"))?;
    tracing::info!(addr = %handle.addr(), "gateway up");
    let shutdown = Arc::new(AtomicBool::new(false));
    let ticker = deployment::serve(Arc::new(Mutex::new(enclave)), period, shutdown);
    handle.wait().map_err(io_err("gateway"))?;
    let _ = ticker.join();
    Ok(0)
}
