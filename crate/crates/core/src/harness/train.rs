use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{forecast_all, ErrorTable};
use super::optim::{Adam, AdamConfig};
use crate::autodiff::{Tape, Var};
use crate::dataio::WindowedSet;
use crate::error::{Error, Result};
use crate::forecaster::ForecastModel;
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("epochs and batch size must be at least 1"));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite()) {
            return Err(Error::contract(format!("learning rate must be >= 0, got {}", a.lr)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::contract("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Scalar domain parameters at the end of the epoch.
    pub alpha_beta: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Mean per-window MSE over one batch, recorded on `tape`.
fn batch_loss(model: &ForecastModel, tape: &mut Tape, vars: &[Var], ws: &WindowedSet, batch: &[usize]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &i in batch {
        let (x, y) = ws.window(i);
        let trace = model.record(tape, vars, &x)?;
        let target = tape.constant(y);
        let l = tape.mse_loss(trace.output, target)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::contract("empty batch"))?;
    Ok(tape.scale(total, 1.0 / batch.len() as f64))
}

/// Trains with Adam on per-window MSE and returns the parameters of the
/// epoch with the lowest validation loss (the last epoch without `val`).
pub fn train(
    mut model: ForecastModel,
    train: &WindowedSet,
    val: Option<&WindowedSet>,
    cfg: &TrainConfig,
) -> Result<(ForecastModel, History)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training set has no windows"));
    }
    let mut adam = Adam::new(cfg.adam, model.params().iter().map(|(_, m)| m.shape()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, Vec<Matrix>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let batches = order.chunks(cfg.batch_size);
        let n_batches = batches.len();
        for (b, batch) in batches.enumerate() {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let loss = batch_loss(&model, &mut tape, &vars, train, batch)?;
            let value = tape.value(loss)[(0, 0)];
            if !value.is_finite() {
                return Err(Error::Numeric {
                    context: format!("training loss at epoch {epoch}, batch {}", b + 1),
                });
            }
            loss_sum += value;
            tape.backward(loss)?;
            let grads: Vec<Matrix> = vars
                .iter()
                .zip(model.params())
                .map(|(&v, (_, p))| tape.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
                .collect();
            let mut values = model.param_values();
            adam.step(&mut values, &grads)?;
            model.set_params(values)?;
        }
        let train_loss = loss_sum / n_batches as f64;
        let val_loss = match val {
            Some(ws) => {
                let pairs = forecast_all(&model, ws)?;
                Some(ErrorTable::from_pairs(pairs.iter().map(|(p, y)| (p, y)))?.mse)
            }
            None => None,
        };
        let alpha_beta = model.domain_params().and_then(|p| p.as_scalar());
        info!(
            "epoch {epoch}/{}: train {train_loss:.6}{}",
            cfg.epochs,
            val_loss.map(|v| format!(", val {v:.6}")).unwrap_or_default()
        );
        if let Some((a, b)) = alpha_beta {
            debug!("epoch {epoch}: alpha {a:.6}, beta {b:.6}");
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            alpha_beta,
        });

        let improved = match (val_loss, &best) {
            (Some(v), Some((s, _))) => v < *s,
            _ => true,
        };
        if improved {
            best = Some((val_loss.unwrap_or(f64::NAN), model.param_values()));
            history.best_epoch = epoch;
        }
    }
    if let Some((_, params)) = best {
        model.set_params(params)?;
    }
    Ok((model, history))
}
