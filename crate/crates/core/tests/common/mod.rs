//! A served enclave on the system clock with instant on-demand instances,
//! bootstrapped from a site file the way `kotta serve` does it.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use kotta::clock::SystemClock;
use kotta::deployment::{self, Enclave, SiteConfig};
use kotta::gateway::{self, Client, GatewayHandle, GatewayState};
use kotta::worker::ProcessExecutor;

pub const SITE: &str = r#"
data_dir = "state"
listen = "127.0.0.1:0"

[[roles]]
id = "klab"

[[roles]]
id = "visitors"

[[roles]]
id = "auditors"
auditor = true

[[principals]]
id = "alice"
roles = ["klab"]
token_file = "alice.token"

[[principals]]
id = "bob"
roles = ["visitors"]
token_file = "bob.token"

[[principals]]
id = "carol"
roles = ["auditors"]
token_file = "carol.token"

[[datasets]]
uri = "s3://klab-jobs/1m_shuffled.txt"
path = "shuffled.txt"
owner_role = "klab"

[autoscaler]
evaluation_interval_secs = 1

[[autoscaler.specs]]
name = "local"
vcpus = 1
ram_gb = 1
market = "on_demand"
provision_delay_seconds = 0
price_per_hour = 0.01

[autoscaler.pools.test]
spec = "local"
min_instances = 1

[autoscaler.pools.production]
spec = "local"
min_instances = 1
"#;

/// Writes `site.toml` (SITE plus `extra`) and the dataset into `dir`.
pub fn write_site(dir: &Path, extra: &str) -> PathBuf {
    std::fs::write(dir.join("shuffled.txt"), b"3\n1\n2\n").unwrap();
    let path = dir.join("site.toml");
    std::fs::write(&path, format!("{SITE}\n{extra}")).unwrap();
    path
}

pub struct Served {
    pub dir: tempfile::TempDir,
    pub gateway: GatewayHandle,
    pub enclave: Arc<Mutex<Enclave>>,
    shutdown: Arc<AtomicBool>,
    ticker: Option<JoinHandle<()>>,
}

impl Served {
    pub fn endpoint(&self) -> String {
        self.gateway.endpoint()
    }

    pub fn token_file(&self, who: &str) -> PathBuf {
        self.dir.path().join(format!("{who}.token"))
    }

    pub fn client(&self, who: &str) -> Client {
        Client::from_token_file(&self.endpoint(), &self.token_file(who)).unwrap()
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        if let Some(t) = self.ticker.take() {
            let _ = t.join();
        }
    }
}

pub fn serve(extra: &str) -> Served {
    let dir = tempfile::tempdir().unwrap();
    let site = SiteConfig::load(&write_site(dir.path(), extra)).unwrap();
    let mut config = site.enclave_config().unwrap();
    config.catalog = config.catalog.signing_key(b"integration");
    let enclave = Enclave::new(config, Arc::new(SystemClock), Arc::new(ProcessExecutor)).unwrap();
    site.bootstrap(enclave.services()).unwrap();
    let state = GatewayState::new(enclave.services().clone(), site.egress);
    let gateway = gateway::spawn(&site.listen, state).unwrap();
    let enclave = Arc::new(Mutex::new(enclave));
    let shutdown = Arc::new(AtomicBool::new(false));
    let ticker = deployment::serve(enclave.clone(), Duration::from_millis(10), shutdown.clone());
    Served { dir, gateway, enclave, shutdown, ticker: Some(ticker) }
}
