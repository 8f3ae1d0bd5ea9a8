//! Model checkpoints: a UTF-8 header followed by raw float64 data.
//!
//! ```text
//! pcd-checkpoint 1
//! config {json ModelConfig}
//! channels 4
//! similarity {json} | similarity none
//! params 42
//! embed.w 96 16
//! ...
//! payload
//! <little-endian f64 values of every parameter, in header order>
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ForecastModel, ModelConfig};
use crate::chanstats::{CorrStats, Metric};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &str = "pcd-checkpoint 1";
const PAYLOAD: &str = "payload\n";

#[derive(Serialize, Deserialize)]
struct SimilarityRecord {
    metric: Metric,
    source_rows: usize,
    raw: Vec<f64>,
}

pub fn save_checkpoint(model: &ForecastModel, path: &Path) -> Result<()> {
    fs::write(path, encode(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ForecastModel> {
    decode(&fs::read(path)?)
}

fn encode(model: &ForecastModel) -> Result<Vec<u8>> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("config {}\n", serde_json::to_string(model.config())?));
    header.push_str(&format!("channels {}\n", model.channels()));
    match model.stats() {
        Some(s) => {
            let rec = SimilarityRecord {
                metric: s.metric,
                source_rows: s.source_rows,
                raw: s.raw.as_slice().to_vec(),
            };
            header.push_str(&format!("similarity {}\n", serde_json::to_string(&rec)?));
        }
        None => header.push_str("similarity none\n"),
    }
    header.push_str(&format!("params {}\n", model.params().len()));
    for (name, m) in model.params() {
        header.push_str(&format!("{name} {} {}\n", m.rows(), m.cols()));
    }
    header.push_str(PAYLOAD);

    let mut bytes = header.into_bytes();
    for (_, m) in model.params() {
        for v in m.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

fn decode(bytes: &[u8]) -> Result<ForecastModel> {
    let bad = |m: &str| Error::format("checkpoint", m.to_string());
    let marker = format!("\n{PAYLOAD}");
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| bad("missing payload marker"))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
    let mut payload = &bytes[split + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("unrecognized header"));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(&format!("expected `{key}` line, got `{line}`")))
    };
    let config: ModelConfig = serde_json::from_str(&field("config")?)?;
    let channels: usize = field("channels")?
        .parse()
        .map_err(|_| bad("channel count is not an integer"))?;
    let similarity = field("similarity")?;
    let stats = if similarity == "none" {
        None
    } else {
        let rec: SimilarityRecord = serde_json::from_str(&similarity)?;
        let raw = Matrix::from_vec(channels, channels, rec.raw)?;
        Some(CorrStats::from_raw(rec.metric, raw, rec.source_rows)?)
    };
    let count: usize = field("params")?
        .parse()
        .map_err(|_| bad("parameter count is not an integer"))?;

    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| bad("truncated parameter table"))?;
        let mut parts = line.split(' ');
        let (Some(name), Some(r), Some(c), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad(&format!("bad parameter line `{line}`")));
        };
        let r: usize = r.parse().map_err(|_| bad("bad row count"))?;
        let c: usize = c.parse().map_err(|_| bad("bad column count"))?;
        let n = r * c;
        if payload.len() < 8 * n {
            return Err(bad("payload shorter than the parameter table"));
        }
        let data: Vec<f64> = payload[..8 * n]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        payload = &payload[8 * n..];
        params.push((name.to_string(), Matrix::from_vec(r, c, data)?));
    }
    if !payload.is_empty() {
        return Err(bad("trailing bytes after payload"));
    }
    ForecastModel::from_parts(config, channels, stats, params)
}
