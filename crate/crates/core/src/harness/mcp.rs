//! Masked channel prediction: how well a trained model forecasts a channel
//! whose own history has been erased.

use serde::{Deserialize, Serialize};

use crate::dataio::WindowedSet;
use crate::error::{Error, Result};
use crate::forecaster::{normalize_with, ForecastModel, InstanceStats};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelLoss {
    pub channel: usize,
    pub name: String,
    /// MSE of the masked channel's forecast, averaged over windows.
    pub loss: f64,
}

/// For each channel `c`, replaces its input history with the window mean,
/// forecasts, and scores only channel `c`. The model is not retrained.
///
/// With instance normalization the masked channel normalizes to zero. Its
/// forecast is mapped back with the window mean and unit scale (the scale
/// of the standardized dataset) rather than its collapsed window std.
pub fn masked_channel_prediction(
    model: &ForecastModel,
    ws: &WindowedSet,
    channel_names: &[String],
) -> Result<Vec<ChannelLoss>> {
    let c = ws.channels();
    if c < 2 {
        return Err(Error::contract(format!(
            "masked channel prediction needs at least 2 channels, got {c}"
        )));
    }
    if ws.is_empty() {
        return Err(Error::contract(format!("{} split has no windows", ws.split)));
    }
    let mut table = Vec::with_capacity(c);
    for ch in 0..c {
        let mut total = 0.0;
        for i in 0..ws.len() {
            let (x, y) = ws.window(i);
            let pred = forecast_masked(model, &x, ch)?;
            let sq: f64 = (0..y.rows()).map(|h| (pred[(h, ch)] - y[(h, ch)]).powi(2)).sum();
            total += sq / y.rows() as f64;
        }
        table.push(ChannelLoss {
            channel: ch,
            name: channel_names.get(ch).cloned().unwrap_or_else(|| format!("c{ch}")),
            loss: total / ws.len() as f64,
        });
    }
    Ok(table)
}

fn forecast_masked(model: &ForecastModel, x: &Matrix, ch: usize) -> Result<Matrix> {
    let l = x.rows();
    let mean = x.column(ch).iter().sum::<f64>() / l as f64;
    let mut masked = x.clone();
    masked.set_column(ch, &vec![mean; l]);
    if !model.config().instance_norm {
        return model.predict(&masked);
    }
    let (_, mut stats): (Matrix, InstanceStats) = model.window_stats(&masked);
    stats.std[ch] = 1.0;
    let xn = normalize_with(&masked, &stats);
    model.predict_normalized(&xn, &stats)
}
