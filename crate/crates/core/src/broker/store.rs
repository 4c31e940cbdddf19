//! Append-only job journal.
//!
//! Each line is a full JSON snapshot of one record; replay keeps the last
//! snapshot per job id. Each line goes to the OS in a single unbuffered
//! write, so a process crash loses at most a torn final line, which replay
//! skips.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::job::JobRecord;

#[derive(Debug)]
pub struct JobJournal {
    path: PathBuf,
    file: File,
}

impl JobJournal {
    /// Opens (creating if needed) and replays the journal.
    pub fn open(path: &Path) -> io::Result<(Self, Vec<JobRecord>)> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut latest: HashMap<String, JobRecord> = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<JobRecord>(&line) {
                    Ok(rec) => {
                        latest.insert(rec.job_id.clone(), rec);
                    }
                    Err(e) => tracing::warn!("skipping unreadable journal line: {e}"),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        // Terminate a torn tail so the next snapshot starts on its own line.
        let len = file.metadata()?.len();
        if len > 0 && std::fs::read(path)?.last() != Some(&b'\n') {
            file.write_all(b"\n")?;
        }
        let mut records: Vec<JobRecord> = latest.into_values().collect();
        records.sort_by_key(|r| r.seq);
        Ok((
            JobJournal {
                path: path.to_owned(),
                file,
            },
            records,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &JobRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)
    }
}
