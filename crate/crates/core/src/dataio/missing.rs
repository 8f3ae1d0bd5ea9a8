use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RawDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A dataset whose missing cells are NaN.
#[derive(Clone, Debug)]
pub struct GappedDataset {
    pub base: RawDataset,
    pub missing: usize,
}

/// Marks `round(ratio * T * C)` cells, drawn uniformly without replacement,
/// as missing.
pub fn corrupt_missing(ds: &RawDataset, ratio: f64, seed: u64) -> Result<GappedDataset> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::contract(format!("missing ratio must be in [0, 1), got {ratio}")));
    }
    let total = ds.values.len();
    let count = (ratio * total as f64).round() as usize;
    let mut base = ds.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = base.values.as_mut_slice();
    for idx in sample(&mut rng, total, count) {
        cells[idx] = f64::NAN;
    }
    Ok(GappedDataset { base, missing: count })
}

/// Fills gaps per channel by linear interpolation between the nearest
/// present neighbours; leading and trailing gaps copy the nearest value.
pub fn linear_interpolate(gapped: &GappedDataset) -> Result<RawDataset> {
    let src = &gapped.base.values;
    let (t, c) = src.shape();
    let mut out = Matrix::zeros(t, c);
    for j in 0..c {
        let col = src.column(j);
        let present: Vec<usize> = (0..t).filter(|&i| col[i].is_finite()).collect();
        let (Some(&first), Some(&last)) = (present.first(), present.last()) else {
            return Err(Error::contract(format!(
                "channel {j} ({}) is entirely missing",
                gapped.base.channel_names.get(j).map_or("?", String::as_str)
            )));
        };
        let mut filled = col.clone();
        for v in filled.iter_mut().take(first) {
            *v = col[first];
        }
        for v in filled.iter_mut().skip(last + 1) {
            *v = col[last];
        }
        for pair in present.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let span = (b - a) as f64;
            for (i, v) in filled.iter_mut().enumerate().take(b).skip(a + 1) {
                let w = (i - a) as f64 / span;
                *v = col[a] * (1.0 - w) + col[b] * w;
            }
        }
        out.set_column(j, &filled);
    }
    Ok(RawDataset {
        values: out,
        ..gapped.base.clone()
    })
}
