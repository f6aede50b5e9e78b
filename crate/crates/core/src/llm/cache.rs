//! Content-addressed response cache: one JSON record per request hash.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::QueryRecord;

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResponseCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, hash: &str) -> PathBuf {
        let shard = hash.get(..2).unwrap_or("xx");
        self.root.join(shard).join(format!("{hash}.json"))
    }

    pub fn get(&self, hash: &str) -> Option<QueryRecord> {
        let bytes = std::fs::read(self.path_for(hash)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Writes to a temp file in the target directory, then renames it into place.
    pub fn put(&self, record: &QueryRecord) -> std::io::Result<()> {
        let path = self.path_for(&record.request_hash);
        let dir = path.parent().expect("cache path has a parent");
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&serde_json::to_vec_pretty(record).map_err(std::io::Error::other)?)?;
        tmp.flush()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}
