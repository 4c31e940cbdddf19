//! Requirement resolution against an offline package mirror.
//!
//! The mirror is a directory tree `<root>/<name>/<version>/`. Activating a
//! package prepends its `bin/` to `PATH` and its own directory to
//! `PYTHONPATH`. A bare name picks the highest version present.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown requirement `{0}`")]
pub struct UnknownRequirement(pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedPackage {
    pub name: String,
    pub version: String,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Activation {
    pub packages: Vec<ResolvedPackage>,
}

impl Activation {
    pub fn path_prepend(&self) -> Vec<PathBuf> {
        self.packages
            .iter()
            .map(|p| p.dir.join("bin"))
            .filter(|d| d.is_dir())
            .collect()
    }

    pub fn env(&self) -> Vec<(String, String)> {
        if self.packages.is_empty() {
            return Vec::new();
        }
        let dirs: Vec<String> = self.packages.iter().map(|p| p.dir.display().to_string()).collect();
        vec![("PYTHONPATH".into(), dirs.join(":"))]
    }
}

/// Dotted versions compare numerically component by component, falling back
/// to text for non-numeric parts.
fn compare_versions(a: &str, b: &str) -> Ordering {
    let mut xs = a.split('.');
    let mut ys = b.split('.');
    loop {
        match (xs.next(), ys.next()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) => {
                let ord = match (x.parse::<u64>(), y.parse::<u64>()) {
                    (Ok(x), Ok(y)) => x.cmp(&y),
                    _ => x.cmp(y),
                };
                if ord != Ordering::Equal {
                    return ord;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PackageMirror {
    root: Option<PathBuf>,
}

impl PackageMirror {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        PackageMirror { root: Some(root.into()) }
    }

    /// A mirror with nothing in it; only empty requirements resolve.
    pub fn empty() -> Self {
        PackageMirror { root: None }
    }

    fn versions(root: &Path, name: &str) -> Vec<String> {
        let Ok(entries) = std::fs::read_dir(root.join(name)) else {
            return Vec::new();
        };
        entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect()
    }

    /// Resolves newline-separated `name[==version]` lines. Blank lines are skipped.
    pub fn resolve(&self, requirements: &str) -> Result<Activation, UnknownRequirement> {
        let mut packages = Vec::new();
        for line in requirements.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let unknown = || UnknownRequirement(line.to_owned());
            let (name, pinned) = match line.split_once("==") {
                Some((n, v)) => (n.trim(), Some(v.trim())),
                None => (line, None),
            };
            if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
                return Err(unknown());
            }
            let root = self.root.as_deref().ok_or_else(unknown)?;
            let versions = Self::versions(root, name);
            let version = match pinned {
                Some(v) => versions.iter().find(|x| x.as_str() == v).cloned(),
                None => versions.into_iter().max_by(|a, b| compare_versions(a, b)),
            }
            .ok_or_else(unknown)?;
            packages.push(ResolvedPackage {
                dir: root.join(name).join(&version),
                name: name.to_owned(),
                version,
            });
        }
        Ok(Activation { packages })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mirror() -> (tempfile::TempDir, PackageMirror) {
        let dir = tempfile::tempdir().unwrap();
        for p in ["numpy/1.13/bin", "numpy/1.9", "numpy/1.13.1", "pandas/0.20"] {
            std::fs::create_dir_all(dir.path().join(p)).unwrap();
        }
        let m = PackageMirror::new(dir.path());
        (dir, m)
    }

    #[test]
    fn empty_is_noop() {
        assert_eq!(PackageMirror::empty().resolve("").unwrap(), Activation::default());
        assert_eq!(PackageMirror::empty().resolve("\n  \n").unwrap(), Activation::default());
    }

    #[test]
    fn pinned_version_resolves() {
        let (dir, m) = mirror();
        let a = m.resolve("numpy==1.13").unwrap();
        assert_eq!(a.packages[0].version, "1.13");
        assert_eq!(a.path_prepend(), vec![dir.path().join("numpy/1.13/bin")]);
        assert_eq!(a.env()[0].0, "PYTHONPATH");
    }

    #[test]
    fn bare_name_takes_highest_version() {
        let (_dir, m) = mirror();
        let a = m.resolve("numpy\npandas").unwrap();
        assert_eq!(a.packages[0].version, "1.13.1");
        assert_eq!(a.packages[1].name, "pandas");
    }

    #[test]
    fn missing_packages_rejected() {
        let (_dir, m) = mirror();
        assert_eq!(m.resolve("nosuchpkg"), Err(UnknownRequirement("nosuchpkg".into())));
        assert!(m.resolve("numpy==2.0").is_err());
        assert!(m.resolve("../etc").is_err());
        assert!(PackageMirror::empty().resolve("numpy").is_err());
    }

    #[test]
    fn version_order() {
        assert_eq!(compare_versions("1.9", "1.13"), Ordering::Less);
        assert_eq!(compare_versions("1.13", "1.13.1"), Ordering::Less);
        assert_eq!(compare_versions("2.0", "2.0"), Ordering::Equal);
    }
}
