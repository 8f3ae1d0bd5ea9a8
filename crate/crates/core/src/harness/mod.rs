//! Training, evaluation and experiment orchestration.

mod experiment;
mod mcp;
mod metrics;
mod optim;
mod train;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::grad_check;
use crate::chanmask::{record_mask, MaskSpec, ParamKind};
use crate::chanstats::pearson_corr;
use crate::dataio::{synth_generate, SynthSpec};
use crate::error::Result;
use crate::forecaster::{AttentionMode, ForecastModel, ModelConfig};
use crate::matrix::Matrix;

pub use experiment::{
    ablation_grid, ablation_run, init_model, prepare_for, robustness_sweep, run_experiment, train_stats, AblationCell,
    AblationRow, ExperimentConfig, RobustnessRow, RunOutcome, DEFAULT_MISSING_RATIOS,
};
pub use mcp::{masked_channel_prediction, ChannelLoss};
pub use metrics::{evaluate, forecast_all, ErrorTable, EvalReport};
pub use optim::{Adam, AdamConfig};
pub use train::{train, EpochRecord, History, TrainConfig};

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientFidelity {
    /// Worst relative error over every parameter of the forecaster.
    pub model_error: f64,
    pub model_entries: usize,
    pub worst_parameter: Option<String>,
    /// Worst relative error of the scalar mask pipeline.
    pub mask_error: f64,
}

/// Finite-difference check of a PCD forecaster with C=4, L=16, H=8, d=8,
/// two heads and one layer, on a lagged synthetic window, plus the
/// isolated scalar mask.
pub fn gradient_fidelity(seed: u64, step: f64) -> Result<GradientFidelity> {
    let data = synth_generate(&SynthSpec::lagged_copy(4, 200, 2, 0.1, seed))?;
    let stats = pearson_corr(&data.values)?;
    let cfg = ModelConfig {
        lookback: 16,
        horizon: 8,
        d_model: 8,
        heads: 2,
        layers: 1,
        mode: AttentionMode::Pcd,
        ..ModelConfig::default()
    };
    let model = ForecastModel::new(cfg, 4, Some(stats.clone()), seed)?;
    let x = data.values.slice_rows(100, 116);
    let y = data.values.slice_rows(116, 124);
    let full = grad_check(
        model.params(),
        |tape, vars| {
            let trace = model.record(tape, vars, &x)?;
            let target = tape.constant(y.clone());
            tape.mse_loss(trace.output, target)
        },
        step,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
    let mask_params = vec![
        ("alpha".to_string(), Matrix::scalar(0.8)),
        ("beta".to_string(), Matrix::scalar(-0.3)),
    ];
    let mask = grad_check(
        &mask_params,
        |tape, vars| {
            let m = record_mask(tape, MaskSpec::Learned(ParamKind::Scalar), &stats, vars)?;
            let w = tape.constant(weights.clone());
            let weighted = tape.hadamard(m, w)?;
            Ok(tape.sum(weighted))
        },
        step,
    )?;
    Ok(GradientFidelity {
        model_error: full.max_rel_error,
        model_entries: full.entries_checked,
        worst_parameter: full.worst.map(|(name, i)| format!("{name}[{i}]")),
        mask_error: mask.max_rel_error,
    })
}

#[cfg(test)]
mod tests;
