//! Sidecar cache of similarity matrices, one record per dataset.
//!
//! The file is pretty-printed JSON so that changes diff cleanly. Floats are
//! written in shortest round-trip form and reload bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CorrStats, Metric};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub metric: Metric,
    pub channels: usize,
    pub source_rows: usize,
    /// Raw metric matrix, row-major.
    pub r: Vec<f64>,
    pub split_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrCache {
    pub records: BTreeMap<String, CacheRecord>,
}

/// SHA-256 over the shape and little-endian bytes of a split.
pub fn split_hash(split: &Matrix) -> String {
    let mut hasher = Sha256::new();
    hasher.update((split.rows() as u64).to_le_bytes());
    hasher.update((split.cols() as u64).to_le_bytes());
    for v in split.as_slice() {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

impl CorrCache {
    pub fn load(path: &Path) -> Result<CorrCache> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Loads the cache, or starts an empty one when the file does not exist.
    pub fn load_or_default(path: &Path) -> Result<CorrCache> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(CorrCache::default())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Returns the cached statistics if the record matches both metric and
    /// split hash.
    pub fn get(&self, dataset: &str, metric: Metric, hash: &str) -> Result<Option<CorrStats>> {
        let Some(rec) = self.records.get(dataset) else {
            return Ok(None);
        };
        if rec.metric != metric || rec.split_hash != hash {
            return Ok(None);
        }
        if rec.r.len() != rec.channels * rec.channels {
            return Err(Error::format(
                "correlation cache",
                format!("record `{dataset}` has {} values for C={}", rec.r.len(), rec.channels),
            ));
        }
        let raw = Matrix::from_vec(rec.channels, rec.channels, rec.r.clone())?;
        CorrStats::from_raw(metric, raw, rec.source_rows).map(Some)
    }

    pub fn insert(&mut self, dataset: &str, stats: &CorrStats, hash: &str) {
        self.records.insert(
            dataset.to_string(),
            CacheRecord {
                metric: stats.metric,
                channels: stats.channel_count,
                source_rows: stats.source_rows,
                r: stats.raw.as_slice().to_vec(),
                split_hash: hash.to_string(),
            },
        );
    }

    /// Looks up `dataset`, computing and storing the statistics of `train`
    /// on a miss. The flag reports whether the cache was hit.
    pub fn get_or_compute(
        &mut self,
        dataset: &str,
        metric: Metric,
        train: &Matrix,
    ) -> Result<(CorrStats, bool)> {
        let hash = split_hash(train);
        if let Some(stats) = self.get(dataset, metric, &hash)? {
            return Ok((stats, true));
        }
        let stats = CorrStats::compute(metric, train)?;
        self.insert(dataset, &stats, &hash);
        Ok((stats, false))
    }
}
