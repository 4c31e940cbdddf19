//! Canned-function jobs go to an external runner invoked as
//! `<runner> <payload-file> <args-file> <result-file>`.

mod common;

use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use kotta::broker::JobStatus;
use serde_json::json;

const RUNNERS: &str = r#"
[worker.runners]
upper = ["/bin/sh", "-c", "cat \"$2\"; tr a-z A-Z < \"$1\" > \"$3\"", "runner"]
broken = ["/bin/sh", "-c", "echo 'cannot unpickle envelope' >&2; exit 4", "runner"]
lazy = ["/bin/true"]
"#;

fn canned(runner: &str, payload: &[u8]) -> serde_json::Value {
    json!({
        "jobtype": "canned_function",
        "jobname": "f",
        "queue": "Test",
        "walltime_minutes": 5,
        "executable": runner,
        "payload_b64": STANDARD.encode(payload),
        "inputs": ["s3://klab-jobs/1m_shuffled.txt"],
    })
}

#[test]
fn payload_in_result_out() {
    let s = common::serve(RUNNERS);
    let alice = s.client("alice");
    let id = alice.submit_raw(&canned("upper", b"opaque envelope bytes")).unwrap();
    let view = alice.wait(&id, Duration::from_secs(20)).unwrap();
    assert_eq!(view.status, JobStatus::Completed, "{:?}", view.error);
    assert_eq!(alice.result(&id).unwrap(), b"OPAQUE ENVELOPE BYTES");
    let args: serde_json::Value = serde_json::from_slice(&alice.stdout(&id).unwrap()).unwrap();
    assert_eq!(args["job_id"], id.as_str());
    assert_eq!(args["inputs"], json!(["1m_shuffled.txt"]));
    assert_eq!(view.result_uri.unwrap(), format!("s3://results-klab/{id}/result"));
}

#[test]
fn runner_errors_fail_the_job() {
    let s = common::serve(RUNNERS);
    let alice = s.client("alice");
    let broken = alice.submit_raw(&canned("broken", b"x")).unwrap();
    let lazy = alice.submit_raw(&canned("lazy", b"x")).unwrap();
    let missing = alice.submit_raw(&canned("julia", b"x")).unwrap();
    let view = alice.wait(&broken, Duration::from_secs(20)).unwrap();
    assert_eq!(view.status, JobStatus::Failed);
    assert_eq!(alice.stderr(&broken).unwrap(), b"cannot unpickle envelope\n");
    let view = alice.wait(&lazy, Duration::from_secs(20)).unwrap();
    assert_eq!((view.status, view.error.as_deref()), (JobStatus::Failed, Some("MissingResult")));
    let view = alice.wait(&missing, Duration::from_secs(20)).unwrap();
    assert_eq!((view.status, view.error.as_deref()), (JobStatus::Failed, Some("RunnerMissing")));
}
