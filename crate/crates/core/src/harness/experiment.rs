use log::info;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalReport};
use super::train::{train, History, TrainConfig};
use crate::chanmask::{MaskSpec, ParamKind};
use crate::chanstats::{cd_ratio, CorrStats, Metric};
use crate::dataio::{corrupt_missing, linear_interpolate, prepare, Prepared, RawDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::forecaster::{AttentionMode, Composition, ForecastModel, ModelConfig};

/// Everything that determines one training run besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub metric: Metric,
    /// Fraction of the training split to keep, as a chronological prefix.
    pub few_shot: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            metric: Metric::Pearson,
            few_shot: None,
        }
    }
}

impl ExperimentConfig {
    pub fn with_mode(&self, mode: AttentionMode) -> ExperimentConfig {
        let mut cfg = self.clone();
        cfg.model.mode = mode;
        cfg
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub model: ForecastModel,
    pub history: History,
    /// Metrics on the test split.
    pub report: EvalReport,
    pub prepared: Prepared,
}

pub fn prepare_for(ds: &RawDataset, cfg: &ExperimentConfig) -> Result<Prepared> {
    prepare(ds, &cfg.split, cfg.model.lookback, cfg.model.horizon, cfg.few_shot)
}

/// Similarity statistics of the standardized training split.
pub fn train_stats(prepared: &Prepared, metric: Metric) -> Result<CorrStats> {
    CorrStats::compute(metric, &prepared.train_series)
}

/// Fresh model for `prepared`; PCD models get the training-split similarity.
pub fn init_model(prepared: &Prepared, cfg: &ExperimentConfig) -> Result<ForecastModel> {
    let stats = if cfg.model.uses_mask() {
        Some(train_stats(prepared, cfg.metric)?)
    } else {
        None
    };
    ForecastModel::new(cfg.model.clone(), prepared.train.channels(), stats, cfg.train.seed)
}

/// Prepare, initialize, train, and score on the test split.
pub fn run_experiment(ds: &RawDataset, cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let prepared = prepare_for(ds, cfg)?;
    let model = init_model(&prepared, cfg)?;
    info!(
        "{}: {} model, {} parameters, {} train windows",
        ds.name,
        cfg.model.mode,
        model.param_count(),
        prepared.train.len()
    );
    let (model, history) = train(model, &prepared.train, Some(&prepared.val), &cfg.train)?;
    let report = evaluate(&model, &ds.name, &prepared.test)?;
    Ok(RunOutcome {
        model,
        history,
        report,
        prepared,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCell {
    pub mask: MaskSpec,
    pub composition: Composition,
}

/// Every mask in {1, |R|, R̄, σ(αI+β), σ(αR̄+β)} under every composition.
pub fn ablation_grid() -> Vec<AblationCell> {
    let masks = [
        MaskSpec::Ones,
        MaskSpec::AbsCorr,
        MaskSpec::Centered,
        MaskSpec::DomainOnly,
        MaskSpec::Learned(ParamKind::Scalar),
    ];
    let comps = [Composition::LocalOnly, Composition::GlobalOnly, Composition::Both];
    masks
        .iter()
        .flat_map(|&mask| comps.iter().map(move |&composition| AblationCell { mask, composition }))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub mode: AttentionMode,
    pub composition: Option<Composition>,
    pub mask: Option<String>,
    pub mse: f64,
    pub mae: f64,
    pub cd_ratio: Option<f64>,
}

/// Trains one PCD model per cell at the shared seed of `base`, optionally
/// preceded by CI and CD baselines.
pub fn ablation_run(
    ds: &RawDataset,
    base: &ExperimentConfig,
    cells: &[AblationCell],
    baselines: bool,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    if baselines {
        for mode in [AttentionMode::Ci, AttentionMode::Cd] {
            let mut cfg = base.with_mode(mode);
            cfg.model.composition = Composition::Both;
            let out = run_experiment(ds, &cfg)?;
            rows.push(AblationRow {
                label: mode.to_string(),
                mode,
                composition: None,
                mask: None,
                mse: out.report.mse(),
                mae: out.report.mae(),
                cd_ratio: None,
            });
        }
    }
    for cell in cells {
        let mut cfg = base.with_mode(AttentionMode::Pcd);
        cfg.model.mask = cell.mask;
        cfg.model.composition = cell.composition;
        cfg.model.validate()?;
        let out = run_experiment(ds, &cfg)?;
        rows.push(AblationRow {
            label: format!("{}+{}", cell.composition, cell.mask),
            mode: AttentionMode::Pcd,
            composition: Some(cell.composition),
            mask: Some(cell.mask.label()),
            mse: out.report.mse(),
            mae: out.report.mae(),
            cd_ratio: out.report.cd_ratio,
        });
    }
    Ok(rows)
}

pub const DEFAULT_MISSING_RATIOS: [f64; 4] = [0.1, 0.25, 0.5, 0.75];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub ratio: f64,
    /// CD ratio of `|R|` on the gap-filled training split.
    pub r_abs: f64,
    pub mse: f64,
    pub mae: f64,
}

/// A clean run followed by one run per missing ratio. Each run corrupts the
/// whole dataset, fills the gaps by linear interpolation, and recomputes the
/// similarity matrix from the filled training split.
pub fn robustness_sweep(ds: &RawDataset, cfg: &ExperimentConfig, ratios: &[f64]) -> Result<Vec<RobustnessRow>> {
    if let Some(r) = ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::contract(format!("missing ratio must be in [0, 1), got {r}")));
    }
    let mut rows = Vec::with_capacity(ratios.len() + 1);
    for &ratio in std::iter::once(&0.0).chain(ratios) {
        let filled = linear_interpolate(&corrupt_missing(ds, ratio, cfg.train.seed)?)?;
        let out = run_experiment(&filled, cfg)?;
        let stats = match out.model.stats() {
            Some(s) if s.metric == cfg.metric => s.clone(),
            _ => train_stats(&out.prepared, cfg.metric)?,
        };
        let row = RobustnessRow {
            ratio,
            r_abs: cd_ratio(&stats.abs)?,
            mse: out.report.mse(),
            mae: out.report.mae(),
        };
        info!("missing {ratio}: r(|R|) {:.4}, test MSE {:.6}", row.r_abs, row.mse);
        rows.push(row);
    }
    Ok(rows)
}
