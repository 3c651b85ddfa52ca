//! Content-addressed cache for ω-stream segments. Entries are keyed by
//! (driving kind, seed, ω-id, segment length, format version) and carry a
//! checksum; corrupted or truncated files are regenerated with a warning.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::omega::{MdsKind, ShiftMds, STREAM_FORMAT_VERSION};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct CacheKey {
    kind: MdsKind,
    seed: u64,
    omega_id: u64,
    from: i64,
    len: usize,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: CacheKey,
    values: Vec<f64>,
    checksum: String,
}

fn checksum(key: &CacheKey, values: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(key).expect("key serializes"));
    for v in values {
        h.update(v.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

/// Outcome of a lookup, so tests and reports can tell hits from rebuilds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
    /// entry existed but failed validation and was regenerated
    Regenerated,
}

pub struct StreamCache {
    dir: PathBuf,
}

impl StreamCache {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(StreamCache {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(key).expect("key serializes"));
        self.dir.join(format!("omega-{:x}.json", h.finalize()))
    }

    /// Fetch the segment `values(from, len)` of stream `omega_id`, reusing
    /// a cached copy when its key and checksum both match.
    pub fn stream_segment(
        &self,
        mds: &ShiftMds,
        omega_id: u64,
        from: i64,
        len: usize,
    ) -> Result<(Vec<f64>, CacheStatus)> {
        let key = CacheKey {
            kind: mds.kind().clone(),
            seed: mds.seed(),
            omega_id,
            from,
            len,
            version: STREAM_FORMAT_VERSION,
        };
        let path = self.path_for(&key);
        let mut status = CacheStatus::Miss;
        if path.exists() {
            match std::fs::read_to_string(&path)
                .map_err(Error::from)
                .and_then(|text| {
                    serde_json::from_str::<CacheEntry>(&text)
                        .map_err(|e| Error::Serde(e.to_string()))
                }) {
                Ok(entry)
                    if entry.key == key && entry.checksum == checksum(&key, &entry.values) =>
                {
                    return Ok((entry.values, CacheStatus::Hit));
                }
                _ => {
                    eprintln!(
                        "warning: cache entry {} failed validation, regenerating",
                        path.display()
                    );
                    status = CacheStatus::Regenerated;
                }
            }
        }
        let values = mds.sample(omega_id).values(from, len);
        let entry = CacheEntry {
            checksum: checksum(&key, &values),
            key,
            values: values.clone(),
        };
        std::fs::write(
            &path,
            serde_json::to_vec(&entry).map_err(|e| Error::Serde(e.to_string()))?,
        )?;
        Ok((values, status))
    }
}
