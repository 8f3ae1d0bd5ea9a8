//! Channel-similarity matrices and the channel-dependence ratio.
//!
//! Every metric produces a raw C×C matrix `R` and a similarity `|R|` in
//! `[0, 1]` with unit diagonal. The mask is built from the centered matrix
//! `R̄ = |R| - mean(|R|)`, where the mean runs over all C² entries.

mod cache;
mod dtw;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use cache::{split_hash, CacheRecord, CorrCache};
pub use dtw::dtw;

/// Upper bound on channel count for DTW similarity (quadratic in T per pair).
pub const DTW_MAX_CHANNELS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Pearson,
    Cosine,
    Euclidean,
    Dtw,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Pearson => "pearson",
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
            Metric::Dtw => "dtw",
        }
    }

    /// Distance metrics are min-max normalized and flipped into similarities.
    pub fn is_distance(self) -> bool {
        matches!(self, Metric::Euclidean | Metric::Dtw)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" | "corr" => Ok(Metric::Pearson),
            "cosine" | "cos" => Ok(Metric::Cosine),
            "euclidean" | "euclid" | "euc" => Ok(Metric::Euclidean),
            "dtw" => Ok(Metric::Dtw),
            other => Err(Error::contract(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrStats {
    pub metric: Metric,
    /// Raw metric: signed correlation, signed cosine, or pairwise distance.
    pub raw: Matrix,
    /// Similarity in `[0, 1]`, unit diagonal.
    pub abs: Matrix,
    /// `abs` minus the mean of all its entries.
    pub centered: Matrix,
    pub channel_count: usize,
    pub source_rows: usize,
    pub warnings: Vec<String>,
}

impl CorrStats {
    /// Computes the similarity matrix of the columns of `data` (T×C).
    pub fn compute(metric: Metric, data: &Matrix) -> Result<CorrStats> {
        match metric {
            Metric::Pearson => pearson_corr(data),
            Metric::Cosine => cosine_sim(data),
            Metric::Euclidean => euclid_sim(data),
            Metric::Dtw => dtw_sim(data),
        }
    }

    /// Rebuilds the derived matrices from a stored raw matrix.
    pub fn from_raw(metric: Metric, raw: Matrix, source_rows: usize) -> Result<CorrStats> {
        if raw.rows() != raw.cols() {
            return Err(Error::contract(format!(
                "similarity matrix must be square, got {:?}",
                raw.shape()
            )));
        }
        let mut warnings = Vec::new();
        let abs = if metric.is_distance() {
            let (sim, degenerate) = similarity_from_distances(&raw)?;
            if degenerate {
                warnings.push(format!(
                    "{metric}: all pairwise distances are equal; off-diagonal similarity set to 0.5"
                ));
            }
            sim
        } else {
            let c = raw.rows();
            Matrix::from_fn(c, c, |i, j| if i == j { 1.0 } else { raw[(i, j)].abs() })
        };
        Ok(Self::assemble(metric, raw, abs, source_rows, warnings))
    }

    fn assemble(
        metric: Metric,
        raw: Matrix,
        abs: Matrix,
        source_rows: usize,
        warnings: Vec<String>,
    ) -> CorrStats {
        for w in &warnings {
            log::warn!("{w}");
        }
        CorrStats {
            metric,
            channel_count: raw.rows(),
            centered: center(&abs),
            raw,
            abs,
            source_rows,
            warnings,
        }
    }
}

/// Subtracts the mean over all entries (diagonal included).
pub fn center(m: &Matrix) -> Matrix {
    let mean = m.mean();
    m.map(|v| v - mean)
}

fn require_rows(data: &Matrix, min: usize, what: &str) -> Result<()> {
    if data.rows() < min {
        return Err(Error::contract(format!(
            "{what} needs at least {min} time steps, got {}",
            data.rows()
        )));
    }
    if data.cols() == 0 {
        return Err(Error::contract(format!("{what} needs at least one channel")));
    }
    Ok(())
}

/// Pearson correlation between every pair of channels over all rows.
///
/// A constant channel has correlation 0 with every other channel (and 1 with
/// itself); a warning is recorded.
pub fn pearson_corr(data: &Matrix) -> Result<CorrStats> {
    require_rows(data, 2, "pearson correlation")?;
    let (t, c) = data.shape();
    let columns: Vec<Vec<f64>> = (0..c).map(|j| data.column(j)).collect();
    let centered: Vec<Vec<f64>> = columns
        .iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / t as f64;
            col.iter().map(|v| v - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centered
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();

    let mut warnings = Vec::new();
    for (j, n) in norms.iter().enumerate() {
        if *n == 0.0 {
            warnings.push(format!(
                "pearson: channel {j} is constant; its correlations are set to 0"
            ));
        }
    }
    let mut raw = Matrix::identity(c);
    for i in 0..c {
        for j in 0..i {
            let r = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            raw[(i, j)] = r;
            raw[(j, i)] = r;
        }
    }
    let abs = raw.map(f64::abs);
    Ok(CorrStats::assemble(Metric::Pearson, raw, abs, t, warnings))
}

/// Cosine similarity of the raw channel vectors; the similarity is its
/// absolute value.
pub fn cosine_sim(data: &Matrix) -> Result<CorrStats> {
    require_rows(data, 1, "cosine similarity")?;
    let (t, c) = data.shape();
    let columns: Vec<Vec<f64>> = (0..c).map(|j| data.column(j)).collect();
    let norms: Vec<f64> = columns
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut warnings = Vec::new();
    for (j, n) in norms.iter().enumerate() {
        if *n == 0.0 {
            warnings.push(format!(
                "cosine: channel {j} is all zeros; its similarities are set to 0"
            ));
        }
    }
    let mut raw = Matrix::identity(c);
    for i in 0..c {
        for j in 0..i {
            let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = columns[i].iter().zip(&columns[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            raw[(i, j)] = s;
            raw[(j, i)] = s;
        }
    }
    let abs = raw.map(f64::abs);
    Ok(CorrStats::assemble(Metric::Cosine, raw, abs, t, warnings))
}

fn pairwise_distances(data: &Matrix, dist: impl Fn(&[f64], &[f64]) -> Result<f64>) -> Result<Matrix> {
    let c = data.cols();
    let columns: Vec<Vec<f64>> = (0..c).map(|j| data.column(j)).collect();
    let mut out = Matrix::zeros(c, c);
    for i in 0..c {
        for j in 0..i {
            let d = dist(&columns[i], &columns[j])?;
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    Ok(out)
}

fn require_channels(data: &Matrix, what: &str) -> Result<()> {
    if data.cols() < 2 {
        return Err(Error::contract(format!(
            "{what} needs at least 2 channels for min-max normalization, got {}",
            data.cols()
        )));
    }
    Ok(())
}

/// Euclidean distance between channels, min-max normalized over the
/// off-diagonal entries and flipped into a similarity.
pub fn euclid_sim(data: &Matrix) -> Result<CorrStats> {
    require_rows(data, 1, "euclidean similarity")?;
    require_channels(data, "euclidean similarity")?;
    let raw = pairwise_distances(data, |a, b| {
        Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
    })?;
    CorrStats::from_raw(Metric::Euclidean, raw, data.rows())
}

/// DTW cost between channels, normalized the same way as [`euclid_sim`].
pub fn dtw_sim(data: &Matrix) -> Result<CorrStats> {
    require_rows(data, 1, "dtw similarity")?;
    require_channels(data, "dtw similarity")?;
    if data.cols() > DTW_MAX_CHANNELS {
        return Err(Error::contract(format!(
            "dtw similarity is limited to {DTW_MAX_CHANNELS} channels, got {}",
            data.cols()
        )));
    }
    let raw = pairwise_distances(data, dtw)?;
    CorrStats::from_raw(Metric::Dtw, raw, data.rows())
}

/// Min-max normalizes the off-diagonal entries of a distance matrix and
/// returns `1 - normalized`, with a unit diagonal. The flag is set when all
/// off-diagonal distances are equal, in which case they map to 0.5.
pub fn similarity_from_distances(dist: &Matrix) -> Result<(Matrix, bool)> {
    let c = dist.rows();
    if c < 2 || dist.cols() != c {
        return Err(Error::contract(format!(
            "distance matrix must be square with at least 2 channels, got {:?}",
            dist.shape()
        )));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..c {
        for j in 0..c {
            if i != j {
                lo = lo.min(dist[(i, j)]);
                hi = hi.max(dist[(i, j)]);
            }
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Numeric {
            context: "pairwise distance matrix".into(),
        });
    }
    let degenerate = hi == lo;
    let sim = Matrix::from_fn(c, c, |i, j| {
        if i == j {
            1.0
        } else if degenerate {
            0.5
        } else {
            1.0 - (dist[(i, j)] - lo) / (hi - lo)
        }
    });
    Ok((sim, degenerate))
}

/// Mean of the off-diagonal entries: 0 for the identity, 1 for all-ones.
pub fn cd_ratio(m: &Matrix) -> Result<f64> {
    let c = m.rows();
    if m.cols() != c {
        return Err(Error::contract(format!("cd_ratio needs a square matrix, got {:?}", m.shape())));
    }
    if c < 2 {
        return Err(Error::contract(format!("cd_ratio needs at least 2 channels, got {c}")));
    }
    if !m.is_finite() {
        return Err(Error::Numeric {
            context: "cd_ratio input".into(),
        });
    }
    let mut total = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                total += m[(i, j)];
            }
        }
    }
    Ok(total / (c * (c - 1)) as f64)
}
