use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{parse_chain, CertError, CertRecord, ChainSource};

#[derive(Debug, Error)]
pub enum TrustStoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: CertError },
    #[error("{path}: certificate {subject} is not self-signed")]
    NotSelfSigned { path: PathBuf, subject: String },
}

/// Self-signed trust anchors indexed by `(subject, SPKI digest)`.
#[derive(Debug, Clone, Default)]
pub struct TrustStore {
    keys: BTreeSet<(Vec<u8>, [u8; 32])>,
    roots: Vec<CertRecord>,
}

impl TrustStore {
    /// Loads every `.pem` and `.crt` file in `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<TrustStore, TrustStoreError> {
        let dir = dir.as_ref();
        let io = |source| TrustStoreError::Io { path: dir.to_path_buf(), source };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pem" | "crt")))
            .collect();
        paths.sort();
        let mut store = TrustStore::default();
        for path in paths {
            let blob = std::fs::read(&path).map_err(|source| TrustStoreError::Io { path: path.clone(), source })?;
            store.add_pem(&blob, &path)?;
        }
        Ok(store)
    }

    pub fn add_pem(&mut self, blob: &[u8], origin: &Path) -> Result<(), TrustStoreError> {
        let chain = parse_chain(blob, "", ChainSource::File)
            .map_err(|source| TrustStoreError::Parse { path: origin.to_path_buf(), source })?;
        for cert in chain.certs {
            self.add(cert).map_err(|subject| TrustStoreError::NotSelfSigned { path: origin.to_path_buf(), subject })?;
        }
        Ok(())
    }

    /// Adds a root; returns its subject when it is not self-signed.
    pub fn add(&mut self, cert: CertRecord) -> Result<(), String> {
        if !cert.self_signed {
            return Err(cert.subject_string());
        }
        if self.keys.insert((cert.subject.clone(), cert.spki_digest)) {
            self.roots.push(cert);
        }
        Ok(())
    }

    pub fn contains(&self, subject: &[u8], spki_digest: &[u8; 32]) -> bool {
        self.keys.contains(&(subject.to_vec(), *spki_digest))
    }

    pub fn roots(&self) -> &[CertRecord] {
        &self.roots
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}
