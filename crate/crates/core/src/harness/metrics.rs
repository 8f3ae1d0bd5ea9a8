use serde::{Deserialize, Serialize};

use super::mcp::ChannelLoss;
use super::experiment::RobustnessRow;
use crate::dataio::WindowedSet;
use crate::error::{Error, Result};
use crate::forecaster::ForecastModel;
use crate::matrix::Matrix;

/// Squared and absolute error per horizon step, averaged over windows and
/// channels, with their means across steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub mse_per_step: Vec<f64>,
    pub mae_per_step: Vec<f64>,
    pub mse: f64,
    pub mae: f64,
}

impl ErrorTable {
    /// Errors of H×C forecasts against targets of the same shape.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a Matrix, &'a Matrix)>) -> Result<ErrorTable> {
        let mut sq: Vec<f64> = Vec::new();
        let mut abs: Vec<f64> = Vec::new();
        let mut shape = None;
        let mut count = 0usize;
        for (pred, target) in pairs {
            if pred.shape() != target.shape() {
                return Err(Error::dim("forecast error", pred.shape(), target.shape()));
            }
            match shape {
                None => {
                    shape = Some(pred.shape());
                    sq = vec![0.0; pred.rows()];
                    abs = vec![0.0; pred.rows()];
                }
                Some(s) if s != pred.shape() => return Err(Error::dim("forecast error", s, pred.shape())),
                Some(_) => {}
            }
            for h in 0..pred.rows() {
                for (p, t) in pred.row(h).iter().zip(target.row(h)) {
                    let e = p - t;
                    sq[h] += e * e;
                    abs[h] += e.abs();
                }
            }
            count += 1;
        }
        let Some((_, c)) = shape else {
            return Err(Error::contract("cannot score an empty set of forecasts"));
        };
        let n = (count * c) as f64;
        let mse_per_step: Vec<f64> = sq.iter().map(|s| s / n).collect();
        let mae_per_step: Vec<f64> = abs.iter().map(|s| s / n).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(ErrorTable {
            mse: mean(&mse_per_step),
            mae: mean(&mae_per_step),
            mse_per_step,
            mae_per_step,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub split: String,
    pub windows: usize,
    pub errors: ErrorTable,
    /// CD ratio of the model's channel mask (PCD only).
    pub cd_ratio: Option<f64>,
    pub alpha_beta: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masked_channel: Option<Vec<ChannelLoss>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robustness: Option<Vec<RobustnessRow>>,
}

impl EvalReport {
    pub fn mse(&self) -> f64 {
        self.errors.mse
    }

    pub fn mae(&self) -> f64 {
        self.errors.mae
    }
}

/// Forecasts for every window of `ws`, on the scale of `ws.series`.
pub fn forecast_all(model: &ForecastModel, ws: &WindowedSet) -> Result<Vec<(Matrix, Matrix)>> {
    (0..ws.len())
        .map(|i| {
            let (x, y) = ws.window(i);
            Ok((model.predict(&x)?, y))
        })
        .collect()
}

pub fn evaluate(model: &ForecastModel, dataset: &str, ws: &WindowedSet) -> Result<EvalReport> {
    if ws.is_empty() {
        return Err(Error::contract(format!("{} split has no windows to evaluate", ws.split)));
    }
    let pairs = forecast_all(model, ws)?;
    let errors = ErrorTable::from_pairs(pairs.iter().map(|(p, y)| (p, y)))?;
    if !(errors.mse.is_finite() && errors.mae.is_finite()) {
        return Err(Error::Numeric {
            context: format!("metrics on the {} split", ws.split),
        });
    }
    let mask = model.mask();
    Ok(EvalReport {
        dataset: dataset.to_string(),
        split: ws.split.to_string(),
        windows: ws.len(),
        errors,
        cd_ratio: mask.map(|m| m.cd_ratio),
        alpha_beta: model.domain_params().and_then(|p| p.as_scalar()),
        masked_channel: None,
        robustness: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_forecast_scores_zero() {
        let y = Matrix::from_fn(3, 2, |i, j| (i + j) as f64);
        let t = ErrorTable::from_pairs([(&y, &y), (&y, &y)]).unwrap();
        assert_eq!((t.mse, t.mae), (0.0, 0.0));
    }

    #[test]
    fn off_by_one_scores_one() {
        let y = Matrix::from_fn(4, 3, |i, j| (i * j) as f64);
        let p = y.map(|v| v + 1.0);
        let q = y.map(|v| v - 1.0);
        let t = ErrorTable::from_pairs([(&p, &y), (&q, &y)]).unwrap();
        assert_eq!((t.mse, t.mae), (1.0, 1.0));
        assert_eq!(t.mse_per_step, vec![1.0; 4]);
    }

    #[test]
    fn empty_and_ragged_inputs() {
        assert!(ErrorTable::from_pairs(std::iter::empty()).is_err());
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(3, 2);
        assert!(ErrorTable::from_pairs([(&a, &b)]).is_err());
        assert!(ErrorTable::from_pairs([(&a, &a), (&b, &b)]).is_err());
    }
}
