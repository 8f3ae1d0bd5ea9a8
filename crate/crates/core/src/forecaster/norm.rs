use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

/// Floor on the per-window standard deviation.
pub const INSTANCE_EPS: f64 = 1e-5;

/// Per-channel location and scale of one input window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InstanceStats {
    /// Stats that leave values unchanged.
    pub fn identity(channels: usize) -> Self {
        InstanceStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

/// Subtracts each channel's window mean and divides by its window std
/// (floored at [`INSTANCE_EPS`]).
pub fn instance_normalize(x: &Matrix) -> (Matrix, InstanceStats) {
    let (l, c) = x.shape();
    let mut stats = InstanceStats {
        mean: Vec::with_capacity(c),
        std: Vec::with_capacity(c),
    };
    for j in 0..c {
        let col = x.column(j);
        let mean = col.iter().sum::<f64>() / l as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / l as f64;
        stats.mean.push(mean);
        stats.std.push(var.sqrt().max(INSTANCE_EPS));
    }
    (normalize_with(x, &stats), stats)
}

pub fn normalize_with(x: &Matrix, stats: &InstanceStats) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| (x[(i, j)] - stats.mean[j]) / stats.std[j])
}

/// Maps a normalized forecast (H×C) back to the window's scale.
pub fn instance_denormalize(y: &Matrix, stats: &InstanceStats) -> Matrix {
    Matrix::from_fn(y.rows(), y.cols(), |i, j| y[(i, j)] * stats.std[j] + stats.mean[j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = Matrix::from_rows(&[[3.0, 1.0], [3.0, 2.0], [3.0, 4.0]]);
        let (n, stats) = instance_normalize(&x);
        assert_eq!(n.column(0), vec![0.0; 3]);
        assert_eq!(stats.std[0], INSTANCE_EPS);
        assert!(n.is_finite());
    }

    #[test]
    fn round_trip() {
        let x = Matrix::from_fn(20, 3, |i, j| ((i * (j + 2)) as f64).sin() * 4.0 + j as f64 * 10.0);
        let (n, stats) = instance_normalize(&x);
        assert!(instance_denormalize(&n, &stats).max_abs_diff(&x) < 1e-10);
        for j in 0..3 {
            assert!(n.column(j).iter().sum::<f64>().abs() / 20.0 < 1e-12);
        }
    }
}
