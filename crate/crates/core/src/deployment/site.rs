//! Site description for a served enclave, read from TOML.
//!
//! ```toml
//! data_dir = "state"
//! listen = "127.0.0.1:8080"
//! egress = "enclave_only"
//!
//! [[roles]]
//! id = "klab"
//!
//! [[principals]]
//! id = "alice"
//! name = "Alice"
//! roles = ["klab"]
//! token_file = "alice.token"
//!
//! [[grants]]
//! target = "s3://klab-jobs"
//! role = "klab"
//! actions = ["read", "write"]
//!
//! [worker.runners]
//! python = ["python3", "-m", "kotta_runner"]
//! ```
//!
//! Relative paths are taken from the config file's directory. Auth state is
//! not persisted, so every start re-registers the listed principals and
//! rewrites their token files.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{EnclaveConfig, Services};
use crate::auth::{AuthError, Role, RoleId, TokenFile, TokenFileError};
use crate::autoscaler::AutoscalerConfig;
use crate::catalog::{Action, CatalogError, Checksum};
use crate::gateway::Egress;

#[derive(Debug, thiserror::Error)]
pub enum SiteError {
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("invalid site config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid site config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    TokenFile(#[from] TokenFileError),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleEntry {
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub auditor: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalEntry {
    pub id: String,
    #[serde(default)]
    pub name: String,
    pub roles: Vec<String>,
    /// Where to write this principal's refresh token at startup.
    #[serde(default)]
    pub token_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrantEntry {
    pub target: String,
    pub role: String,
    pub actions: Vec<Action>,
}

/// A local file loaded into the catalog at startup, owned by `owner_role`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub uri: String,
    pub path: PathBuf,
    pub owner_role: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkerSection {
    pub runners: HashMap<String, Vec<String>>,
    pub mirror: Option<PathBuf>,
    pub keep_sandboxes: bool,
    pub sample_interval_secs: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub data_dir: PathBuf,
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default)]
    pub egress: Egress,
    /// Keep the job journal and audit chain on disk.
    #[serde(default = "yes")]
    pub durable: bool,
    /// Hex; random per start when absent.
    #[serde(default)]
    pub signing_key: Option<String>,
    /// Hex, 32 bytes; enables at-rest encryption of stored objects.
    #[serde(default)]
    pub at_rest_key: Option<String>,
    #[serde(default)]
    pub hot_capacity_bytes: Option<u64>,
    #[serde(default)]
    pub roles: Vec<RoleEntry>,
    #[serde(default)]
    pub principals: Vec<PrincipalEntry>,
    #[serde(default)]
    pub grants: Vec<GrantEntry>,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub worker: WorkerSection,
    #[serde(default)]
    pub autoscaler: AutoscalerConfig,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn yes() -> bool {
    true
}

impl SiteConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, SiteError> {
        let mut site: SiteConfig = toml::from_str(text)?;
        site.autoscaler.validate().map_err(|e| SiteError::Invalid(e.to_string()))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        rebase(&mut site.data_dir);
        for p in &mut site.principals {
            if let Some(t) = p.token_file.as_mut() {
                rebase(t);
            }
        }
        for d in &mut site.datasets {
            rebase(&mut d.path);
        }
        if let Some(m) = site.worker.mirror.as_mut() {
            rebase(m);
        }
        Ok(site)
    }

    pub fn load(path: &Path) -> Result<Self, SiteError> {
        let text = std::fs::read_to_string(path).map_err(|e| SiteError::Io(path.to_owned(), e))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn hex_key(name: &str, text: &str) -> Result<Vec<u8>, SiteError> {
        hex::decode(text.trim()).map_err(|_| SiteError::Invalid(format!("{name} is not hex")))
    }

    pub fn enclave_config(&self) -> Result<EnclaveConfig, SiteError> {
        let mut config = EnclaveConfig::new(&self.data_dir);
        if self.durable {
            config = config.durable(&self.data_dir);
        }
        if let Some(k) = &self.signing_key {
            config.catalog = config.catalog.signing_key(&Self::hex_key("signing_key", k)?);
        }
        if let Some(k) = &self.at_rest_key {
            let key: [u8; 32] = Self::hex_key("at_rest_key", k)?
                .try_into()
                .map_err(|_| SiteError::Invalid("at_rest_key must be 32 bytes".into()))?;
            config.catalog = config.catalog.encrypt_at_rest(key);
        }
        if let Some(cap) = self.hot_capacity_bytes {
            config.catalog = config.catalog.hot_capacity(cap);
        }
        config.autoscaler = self.autoscaler.clone();
        let w = &mut config.worker;
        w.runners = self.worker.runners.clone();
        if let Some(m) = &self.worker.mirror {
            w.mirror = crate::worker::PackageMirror::new(m);
        }
        w.keep_sandboxes = self.worker.keep_sandboxes;
        if let Some(s) = self.worker.sample_interval_secs {
            w.sample_interval_secs = s;
        }
        Ok(config)
    }

    /// Loads roles, principals, grants and datasets into a fresh enclave
    /// and writes token files. Returns the token files written.
    pub fn bootstrap(&self, services: &Services) -> Result<Vec<PathBuf>, SiteError> {
        let auth = &services.auth;
        for r in &self.roles {
            let mut role = Role::new(&r.id, &r.description);
            if r.auditor {
                role = role.auditor();
            }
            auth.add_role(role)?;
        }
        for p in &self.principals {
            let roles: Vec<&str> = p.roles.iter().map(String::as_str).collect();
            auth.add_principal(&p.id, &p.name, &roles)?;
        }
        for g in &self.grants {
            services.catalog.grant(&g.target, &RoleId::new(&g.role), &g.actions);
        }
        for d in &self.datasets {
            let bytes = std::fs::read(&d.path).map_err(|e| SiteError::Io(d.path.clone(), e))?;
            let unchanged = services.catalog.object(&d.uri).is_some_and(|o| o.checksum == Checksum::of(&bytes));
            if !unchanged {
                services.catalog.ingest(&d.uri, &bytes, &RoleId::new(&d.owner_role))?;
            }
        }
        let mut written = Vec::new();
        for p in &self.principals {
            let Some(path) = &p.token_file else { continue };
            let approval = auth.approve_registration(&p.id)?;
            let refresh = auth.register_client(&p.id, &approval)?;
            TokenFile::new(&refresh.bearer).save(path)?;
            written.push(path.clone());
        }
        Ok(written)
    }
}
