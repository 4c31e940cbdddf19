//! Per-job working directories.
//!
//! `work/` is the payload's cwd: staged inputs by basename, the script file,
//! and whatever the payload produces. `meta/` holds runner hand-off files so
//! they do not show up in the payload's directory listing.

use std::collections::HashSet;
use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct Sandbox {
    pub job_id: String,
    root: PathBuf,
    pub staged_inputs: Vec<(String, String)>,
    keep: bool,
}

impl Sandbox {
    pub fn create(base: &Path, instance_id: &str, job_id: &str, keep: bool) -> io::Result<Self> {
        let root = base.join(instance_id).join(job_id);
        if root.exists() {
            std::fs::remove_dir_all(&root)?;
        }
        std::fs::create_dir_all(root.join("work"))?;
        std::fs::create_dir_all(root.join("meta"))?;
        Ok(Sandbox {
            job_id: job_id.to_owned(),
            root,
            staged_inputs: Vec::new(),
            keep,
        })
    }

    pub fn work_dir(&self) -> PathBuf {
        self.root.join("work")
    }

    pub fn meta_dir(&self) -> PathBuf {
        self.root.join("meta")
    }

    /// Basenames that appear more than once among `names`.
    pub fn collisions<'a>(names: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut dup = Vec::new();
        for n in names {
            if !seen.insert(n) && !dup.iter().any(|d: &String| d == n) {
                dup.push(n.to_owned());
            }
        }
        dup
    }

    pub fn write_input(&mut self, uri: &str, basename: &str, bytes: &[u8]) -> io::Result<PathBuf> {
        let path = self.work_dir().join(basename);
        std::fs::write(&path, bytes)?;
        self.staged_inputs.push((uri.to_owned(), basename.to_owned()));
        Ok(path)
    }

    pub fn produced(&self, basename: &str) -> Option<PathBuf> {
        let path = self.work_dir().join(basename);
        path.is_file().then_some(path)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl Drop for Sandbox {
    fn drop(&mut self) {
        if !self.keep {
            let _ = std::fs::remove_dir_all(&self.root);
        }
    }
}
