//! On-disk tiers.
//!
//! Cold objects live under `cold/` named by the hex SHA-256 of their
//! plaintext, so identical content is stored once. Hot copies live under
//! `hot/`, named by the hex SHA-256 of the object URI. When an at-rest key is
//! configured, file bytes are XORed with a ChaCha20 keystream whose nonce is
//! taken from the content digest.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chacha20::cipher::{KeyIvInit, StreamCipher};
use chacha20::ChaCha20;
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub struct BlobStore {
    cold_dir: PathBuf,
    hot_dir: PathBuf,
    at_rest_key: Option<[u8; 32]>,
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().expect("blob paths have a parent");
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_data()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

impl BlobStore {
    pub fn open(root: &Path, at_rest_key: Option<[u8; 32]>) -> io::Result<Self> {
        let store = BlobStore {
            cold_dir: root.join("cold"),
            hot_dir: root.join("hot"),
            at_rest_key,
        };
        fs::create_dir_all(&store.cold_dir)?;
        fs::create_dir_all(&store.hot_dir)?;
        Ok(store)
    }

    fn index_path(&self) -> PathBuf {
        self.cold_dir.parent().expect("cold dir has a parent").join("index.json")
    }

    pub fn save_index(&self, bytes: &[u8]) -> io::Result<()> {
        write_atomic(&self.index_path(), bytes)
    }

    pub fn load_index(&self) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.index_path()) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Empties the hot tier, e.g. after a restart when residency is unknown.
    pub fn clear_hot(&self) -> io::Result<()> {
        for entry in fs::read_dir(&self.hot_dir)? {
            fs::remove_file(entry?.path())?;
        }
        Ok(())
    }

    fn transform(&self, checksum: &[u8; 32], bytes: &mut [u8]) {
        if let Some(key) = &self.at_rest_key {
            let nonce: [u8; 12] = checksum[..12].try_into().expect("12-byte nonce");
            ChaCha20::new(key.into(), &nonce.into()).apply_keystream(bytes);
        }
    }

    fn cold_path(&self, checksum: &[u8; 32]) -> PathBuf {
        self.cold_dir.join(hex::encode(checksum))
    }

    fn hot_path(&self, uri: &str) -> PathBuf {
        self.hot_dir.join(hex::encode(sha256(uri.as_bytes())))
    }

    pub fn put_cold(&self, checksum: &[u8; 32], plaintext: &[u8]) -> io::Result<()> {
        let path = self.cold_path(checksum);
        if path.exists() {
            return Ok(());
        }
        let mut bytes = plaintext.to_vec();
        self.transform(checksum, &mut bytes);
        write_atomic(&path, &bytes)
    }

    pub fn read_cold(&self, checksum: &[u8; 32]) -> io::Result<Vec<u8>> {
        let mut bytes = fs::read(self.cold_path(checksum))?;
        self.transform(checksum, &mut bytes);
        Ok(bytes)
    }

    /// Raw stored bytes, as they sit on disk.
    #[cfg(test)]
    pub fn raw_cold(&self, checksum: &[u8; 32]) -> io::Result<Vec<u8>> {
        fs::read(self.cold_path(checksum))
    }

    pub fn remove_cold(&self, checksum: &[u8; 32]) -> io::Result<()> {
        match fs::remove_file(self.cold_path(checksum)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }

    pub fn promote(&self, uri: &str, checksum: &[u8; 32]) -> io::Result<()> {
        let raw = fs::read(self.cold_path(checksum))?;
        write_atomic(&self.hot_path(uri), &raw)
    }

    pub fn read_hot(&self, uri: &str, checksum: &[u8; 32]) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.hot_path(uri)) {
            Ok(mut bytes) => {
                self.transform(checksum, &mut bytes);
                Ok(Some(bytes))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn demote(&self, uri: &str) -> io::Result<()> {
        match fs::remove_file(self.hot_path(uri)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }

    pub fn hot_file_count(&self) -> io::Result<usize> {
        Ok(fs::read_dir(&self.hot_dir)?.count())
    }
}
