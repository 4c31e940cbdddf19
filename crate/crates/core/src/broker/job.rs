use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::auth::RoleId;
use crate::catalog::ObjectUri;
use crate::clock::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueueTier {
    Test,
    Production,
}

impl QueueTier {
    pub const ALL: [QueueTier; 2] = [QueueTier::Test, QueueTier::Production];

    pub fn as_str(self) -> &'static str {
        match self {
            QueueTier::Test => "Test",
            QueueTier::Production => "Production",
        }
    }
}

impl fmt::Display for QueueTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueueTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "Test" => Ok(QueueTier::Test),
            "Production" => Ok(QueueTier::Production),
            other => Err(other.to_owned()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobType {
    Script,
    CannedFunction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Queued,
    Staging,
    Running,
    Completed,
    Failed,
    Cancelled,
    WalltimeExceeded,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            JobStatus::Completed | JobStatus::Failed | JobStatus::Cancelled | JobStatus::WalltimeExceeded
        )
    }

    /// The legal transition relation, including redelivery back to `queued`.
    pub fn can_become(self, next: JobStatus) -> bool {
        use JobStatus::*;
        matches!(
            (self, next),
            (Pending, Queued)
                | (Queued, Staging)
                | (Queued, Cancelled)
                | (Staging, Running)
                | (Staging, Failed)
                | (Staging, Queued)
                | (Running, Completed)
                | (Running, Failed)
                | (Running, WalltimeExceeded)
                | (Running, Queued)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Pending => "pending",
            JobStatus::Queued => "queued",
            JobStatus::Staging => "staging",
            JobStatus::Running => "running",
            JobStatus::Completed => "completed",
            JobStatus::Failed => "failed",
            JobStatus::Cancelled => "cancelled",
            JobStatus::WalltimeExceeded => "walltime_exceeded",
        }
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// True iff `history` is a word of the status automaton starting at `pending`.
pub fn is_legal_history(history: &[StatusChange]) -> bool {
    let Some(first) = history.first() else {
        return false;
    };
    first.status == JobStatus::Pending
        && history.windows(2).all(|w| w[0].status.can_become(w[1].status))
}

/// Wire format accepted by `POST /jobs` and the CLI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobDescription {
    pub jobtype: JobType,
    pub jobname: String,
    pub queue: String,
    pub walltime_minutes: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_b64: Option<String>,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub requirements: String,
}

impl JobDescription {
    /// A script job: write `script` to `script_name`, run `executable`.
    pub fn script(name: &str, queue: QueueTier, walltime_minutes: i64, executable: &str, script_name: &str, script: &str) -> Self {
        JobDescription {
            jobtype: JobType::Script,
            jobname: name.to_owned(),
            queue: queue.as_str().to_owned(),
            walltime_minutes,
            executable: Some(executable.to_owned()),
            script_name: Some(script_name.to_owned()),
            script: Some(script.to_owned()),
            payload_b64: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            requirements: String::new(),
        }
    }

    pub fn with_inputs(mut self, inputs: &[&str]) -> Self {
        self.inputs = inputs.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_outputs(mut self, outputs: &[&str]) -> Self {
        self.outputs = outputs.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_requirements(mut self, requirements: &str) -> Self {
        self.requirements = requirements.to_owned();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusChange {
    pub status: JobStatus,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationSample {
    pub job_id: String,
    pub t_offset_seconds: u64,
    pub cpu_fraction: f64,
    pub mem_bytes: u64,
}

/// What a worker needs to run a job. Script jobs carry the script text;
/// canned jobs carry opaque bytes for the runner named by `executable`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Script {
        executable: String,
        script_name: String,
        script: String,
    },
    Canned {
        runner: String,
        #[serde(with = "crate::b64")]
        bytes: Vec<u8>,
    },
}

/// Payload kind used for canned jobs that do not name one.
pub const DEFAULT_RUNNER_KIND: &str = "python";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub owner: String,
    pub owner_role: RoleId,
    pub queue: QueueTier,
    pub jobtype: JobType,
    pub jobname: String,
    pub payload: Payload,
    pub inputs: Vec<ObjectUri>,
    pub outputs: Vec<ObjectUri>,
    pub requirements: String,
    pub walltime_minutes: u64,
    pub status: JobStatus,
    pub status_history: Vec<StatusChange>,
    #[serde(with = "crate::b64")]
    pub stdout: Vec<u8>,
    #[serde(with = "crate::b64")]
    pub stderr: Vec<u8>,
    pub utilization: Vec<UtilizationSample>,
    pub result_uri: Option<ObjectUri>,
    pub error: Option<String>,
    /// Deliveries made so far.
    pub attempts: u32,
    /// Attempt whose report produced the terminal status, if a worker's.
    pub terminal_attempt: Option<u32>,
    pub started_running_at: Option<Timestamp>,
    pub submitted_at: Timestamp,
    /// Submission order; redelivered jobs keep their place.
    pub seq: u64,
}

impl JobRecord {
    pub fn walltime_secs(&self) -> u64 {
        self.walltime_minutes * 60
    }

    pub fn running_secs(&self, now: Timestamp) -> Option<u64> {
        self.started_running_at.map(|t| now.since(t))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub job_id: String,
    pub instance_id: String,
    pub delivered_at: Timestamp,
    pub visibility_deadline: Timestamp,
    pub attempt: u32,
}

impl Delivery {
    pub fn is_live(&self, now: Timestamp) -> bool {
        now < self.visibility_deadline
    }
}
