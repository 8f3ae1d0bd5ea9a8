//! Dataset ingestion and preparation.
//!
//! Raw T×C series are split chronologically, standardized with training
//! statistics only, and carved into `(lookback, horizon)` window pairs that
//! never cross a split boundary.

mod csv_load;
mod missing;
mod synth;

use serde::{Deserialize, Serialize};

use crate::chanmask::TaskTag;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use csv_load::load_csv;
pub use missing::{corrupt_missing, linear_interpolate, GappedDataset};
pub use synth::{synth_generate, Coupling, SynthSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub name: String,
    /// T×C, finite.
    pub values: Matrix,
    pub channel_names: Vec<String>,
    pub task: TaskTag,
}

impl RawDataset {
    pub fn new(name: impl Into<String>, values: Matrix) -> Self {
        let channel_names = (0..values.cols()).map(|c| format!("c{c}")).collect();
        RawDataset {
            name: name.into(),
            values,
            channel_names,
            task: TaskTag::Forecast,
        }
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }
}

/// Chronological train/val/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    /// Keeps the default val/test ratio and gives the rest to training.
    pub fn with_train_fraction(train: f64) -> Self {
        let rest = 1.0 - train;
        SplitSpec {
            train,
            val: rest / 3.0,
            test: rest - rest / 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::contract(format!("split fractions must be positive, got {parts:?}")));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("split fractions must sum to 1, got {total}")));
        }
        Ok(())
    }

    /// Row counts for a series of length `t`: train and val are floored,
    /// test takes the remainder.
    pub fn lengths(&self, t: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let floor = |f: f64| (f * t as f64 + 1e-9).floor() as usize;
        let train = floor(self.train);
        let val = floor(self.val).min(t - train);
        Ok((train, val, t - train - val))
    }
}

/// One chronological split of a series with its starting row.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub name: &'static str,
    pub start: usize,
    pub values: Matrix,
}

impl Split {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }
}

pub fn chrono_split(ds: &RawDataset, spec: &SplitSpec) -> Result<(Split, Split, Split)> {
    let (tr, va, te) = spec.lengths(ds.len())?;
    chrono_split_counts(ds, tr, va, te)
}

/// Splits by explicit row counts, which must add up to the series length.
pub fn chrono_split_counts(
    ds: &RawDataset,
    train: usize,
    val: usize,
    test: usize,
) -> Result<(Split, Split, Split)> {
    if train + val + test != ds.len() {
        return Err(Error::contract(format!(
            "split counts {train}+{val}+{test} do not cover {} rows",
            ds.len()
        )));
    }
    let v = &ds.values;
    Ok((
        Split {
            name: "train",
            start: 0,
            values: v.slice_rows(0, train),
        },
        Split {
            name: "val",
            start: train,
            values: v.slice_rows(train, train + val),
        },
        Split {
            name: "test",
            start: train + val,
            values: v.slice_rows(train + val, train + val + test),
        },
    ))
}

/// Per-channel mean and standard deviation fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population std; a constant channel gets 1.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &Matrix) -> Result<Standardizer> {
        if train.rows() == 0 {
            return Err(Error::contract("cannot fit standardization on an empty split"));
        }
        let n = train.rows() as f64;
        let mut mean = Vec::with_capacity(train.cols());
        let mut std = Vec::with_capacity(train.cols());
        for j in 0..train.cols() {
            let col = train.column(j);
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |i, j| (m[(i, j)] - self.mean[j]) / self.std[j])
    }

    pub fn invert(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * self.std[j] + self.mean[j])
    }
}

/// Supervised window pairs over one split.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSet {
    pub split: &'static str,
    /// Row of the original series where this split starts.
    pub split_start: usize,
    pub series: Matrix,
    pub lookback: usize,
    pub horizon: usize,
    /// Window start rows within `series`.
    pub offsets: Vec<usize>,
}

impl WindowedSet {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.series.cols()
    }

    /// `(x, y)` with `x`: lookback×C and `y`: horizon×C.
    pub fn window(&self, i: usize) -> (Matrix, Matrix) {
        let s = self.offsets[i];
        (
            self.series.slice_rows(s, s + self.lookback),
            self.series.slice_rows(s + self.lookback, s + self.lookback + self.horizon),
        )
    }

    /// Same windows over a transformed copy of the series.
    pub fn map_series(&self, f: impl FnOnce(&Matrix) -> Matrix) -> WindowedSet {
        WindowedSet {
            series: f(&self.series),
            ..self.clone()
        }
    }
}

/// All `len - L - H + 1` windows of a split.
pub fn make_windows(split: &Split, lookback: usize, horizon: usize) -> Result<WindowedSet> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::contract("lookback and horizon must be at least 1"));
    }
    let need = lookback + horizon;
    if split.len() < need {
        return Err(Error::contract(format!(
            "{} split has {} rows; lookback {lookback} + horizon {horizon} needs {need}",
            split.name,
            split.len()
        )));
    }
    Ok(WindowedSet {
        split: split.name,
        split_start: split.start,
        series: split.values.clone(),
        lookback,
        horizon,
        offsets: (0..=split.len() - need).collect(),
    })
}

/// Standardizes a window set with statistics fitted elsewhere (the train
/// split).
pub fn standardize(ws: &WindowedSet, scaler: &Standardizer) -> WindowedSet {
    ws.map_series(|s| scaler.apply(s))
}

/// Chronological prefix of `ceil(ratio * len)` training rows.
pub fn subsample_fraction(train: &Split, ratio: f64, min_rows: usize) -> Result<Split> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::contract(format!("few-shot ratio must be in (0, 1], got {ratio}")));
    }
    let keep = ((ratio * train.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let keep = keep.min(train.len());
    if keep < min_rows {
        return Err(Error::contract(format!(
            "few-shot train split keeps {keep} rows, fewer than the {min_rows} a window needs"
        )));
    }
    Ok(Split {
        name: train.name,
        start: train.start,
        values: train.values.slice_rows(0, keep),
    })
}

/// Everything a training run needs from one dataset.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: String,
    pub scaler: Standardizer,
    /// Standardized training split, used for the similarity matrix.
    pub train_series: Matrix,
    pub train: WindowedSet,
    pub val: WindowedSet,
    pub test: WindowedSet,
}

/// Split, fit standardization on train, window every split.
pub fn prepare(
    ds: &RawDataset,
    spec: &SplitSpec,
    lookback: usize,
    horizon: usize,
    few_shot: Option<f64>,
) -> Result<Prepared> {
    let (mut train, val, test) = chrono_split(ds, spec)?;
    if let Some(ratio) = few_shot {
        train = subsample_fraction(&train, ratio, lookback + horizon)?;
    }
    let scaler = Standardizer::fit(&train.values)?;
    let windows = |s: &Split| -> Result<WindowedSet> {
        Ok(standardize(&make_windows(s, lookback, horizon)?, &scaler))
    };
    Ok(Prepared {
        dataset: ds.name.clone(),
        train: windows(&train)?,
        val: windows(&val)?,
        test: windows(&test)?,
        train_series: scaler.apply(&train.values),
        scaler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize, c: usize) -> RawDataset {
        RawDataset::new("ramp", Matrix::from_fn(t, c, |i, j| (i * (j + 1)) as f64 + (i as f64).sin()))
    }

    #[test]
    fn default_split_lengths() {
        let (a, b, c) = chrono_split(&ramp(10, 2), &SplitSpec::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (7, 1, 2));
        assert_eq!((a.start, b.start, c.start), (0, 7, 8));
    }

    #[test]
    fn bad_fractions_rejected() {
        let bad = SplitSpec {
            train: 0.7,
            val: 0.2,
            test: 0.2,
        };
        assert!(bad.validate().is_err());
        let neg = SplitSpec {
            train: 1.1,
            val: -0.05,
            test: -0.05,
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn window_count_arithmetic() {
        let ds = ramp(200, 3);
        let (train, _, _) = chrono_split_counts(&ds, 140, 20, 40).unwrap();
        let ws = make_windows(&train, 96, 8).unwrap();
        assert_eq!(ws.len(), 140 - 96 - 8 + 1);
        let (x, y) = ws.window(ws.len() - 1);
        assert_eq!((x.rows(), y.rows()), (96, 8));
        assert_eq!(y.row(7), ds.values.row(139));
    }

    #[test]
    fn windows_reassemble_split() {
        let ds = ramp(60, 2);
        let (train, _, _) = chrono_split(&ds, &SplitSpec::default()).unwrap();
        let ws = make_windows(&train, 10, 5).unwrap();
        let mut rebuilt = Matrix::filled(train.len(), 2, f64::NAN);
        for i in 0..ws.len() {
            let (x, y) = ws.window(i);
            let s = ws.offsets[i];
            for r in 0..10 {
                rebuilt.row_mut(s + r).copy_from_slice(x.row(r));
            }
            for r in 0..5 {
                rebuilt.row_mut(s + 10 + r).copy_from_slice(y.row(r));
            }
        }
        assert_eq!(rebuilt, train.values);
    }

    #[test]
    fn short_split_names_itself() {
        let ds = ramp(50, 2);
        let (_, val, _) = chrono_split(&ds, &SplitSpec::default()).unwrap();
        let err = make_windows(&val, 4, 2).unwrap_err();
        assert!(err.to_string().contains("val split"), "{err}");
    }

    #[test]
    fn standardized_train_has_zero_mean_unit_std() {
        let p = prepare(&ramp(300, 3), &SplitSpec::default(), 12, 4, None).unwrap();
        for j in 0..3 {
            let col = p.train_series.column(j);
            let n = col.len() as f64;
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 1e-10 && (v.sqrt() - 1.0).abs() < 1e-10);
        }
        assert_eq!(p.train.series, p.train_series);
    }

    #[test]
    fn val_and_test_rows_do_not_touch_train_stats() {
        let ds = ramp(300, 3);
        let mut altered = ds.clone();
        for i in 250..300 {
            altered.values[(i, 1)] = 1e6;
        }
        let a = prepare(&ds, &SplitSpec::default(), 12, 4, None).unwrap();
        let b = prepare(&altered, &SplitSpec::default(), 12, 4, None).unwrap();
        assert_eq!(a.scaler, b.scaler);
        assert_eq!(a.train_series, b.train_series);
    }

    #[test]
    fn few_shot_prefix() {
        let ds = ramp(1000, 1);
        let (train, _, _) = chrono_split_counts(&ds, 1000, 0, 0).unwrap();
        assert_eq!(subsample_fraction(&train, 1.0, 1).unwrap(), train);
        assert_eq!(subsample_fraction(&train, 0.05, 1).unwrap().len(), 50);
        let (small, _, _) = chrono_split_counts(&ramp(100, 1), 100, 0, 0).unwrap();
        let sub = subsample_fraction(&small, 0.2, 1).unwrap();
        assert_eq!(sub.values, small.values.slice_rows(0, 20));
        assert!(subsample_fraction(&small, 0.2, 30).is_err());
        assert!(subsample_fraction(&small, 0.0, 1).is_err());
    }
}
