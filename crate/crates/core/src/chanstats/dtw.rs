use crate::error::{Error, Result};

/// Dynamic time warping cost with squared local cost and unit steps
/// (insertion, deletion, match).
pub fn dtw(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::contract("dtw needs two non-empty series"));
    }
    let m = y.len();
    // Two rolling rows of the (n+1)×(m+1) cost table.
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut curr = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &xi in x {
        curr[0] = f64::INFINITY;
        for j in 1..=m {
            let d = xi - y[j - 1];
            let best = prev[j - 1].min(prev[j]).min(curr[j - 1]);
            curr[j] = d * d + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[m])
}
