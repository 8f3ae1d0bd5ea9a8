use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use pcd_core::chanmask::{MaskSpec, ParamKind};
use pcd_core::chanstats::Metric;
use pcd_core::dataio::{load_csv, synth_generate, RawDataset, SplitSpec, SynthSpec};
use pcd_core::forecaster::{AttentionMode, Composition, ModelConfig};
use pcd_core::harness::{AdamConfig, ExperimentConfig, TrainConfig};
use pcd_core::{Error, Result};

/// Dataset, model and training options. Every option can also be set in a
/// TOML file passed with `--config`, using the flag name with underscores;
/// flags take precedence over the file.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArgs {
    /// TOML file with default values for these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// CSV file, one column per channel.
    #[arg(long, conflicts_with = "synth_spec")]
    pub data: Option<PathBuf>,
    /// Synthetic dataset, e.g. `lagged_copy,c=4,t=2000,tau=3,noise=0.1,seed=7`.
    #[arg(long)]
    pub synth_spec: Option<String>,
    /// ci, cd or pcd.
    #[arg(long)]
    pub mode: Option<String>,
    /// local, global or both.
    #[arg(long)]
    pub composition: Option<String>,
    /// Mask family: ones, abs, rbar, domain, or learned (see --mask-variant).
    #[arg(long)]
    pub mask: Option<String>,
    /// Learned mask variant: scalar, vector, asym or matrix.
    #[arg(long)]
    pub mask_variant: Option<String>,
    /// Embedding width of the vector mask variants.
    #[arg(long)]
    pub mask_dim: Option<usize>,
    /// pearson, cosine, euclid or dtw.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Keep only this fraction of the training split.
    #[arg(long)]
    pub few_shot: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Disable per-window instance normalization.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_instance_norm: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

macro_rules! prefer {
    ($a:ident, $b:ident; $($f:ident),*) => {
        RunArgs { config: $a.config, $($f: $a.$f.or($b.$f)),* }
    };
}

fn parse<T: std::str::FromStr<Err = Error>>(v: Option<&str>, default: T) -> Result<T> {
    v.map_or(Ok(default), str::parse)
}

impl RunArgs {
    /// Fills unset options from the `--config` file, if any.
    pub fn with_file(self) -> Result<RunArgs> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = fs::read_to_string(&path)?;
        let file: RunArgs = toml::from_str(&text)
            .map_err(|e| Error::Format {
                what: "config file",
                message: format!("{}: {}", path.display(), e.message().trim()),
            })?;
        Ok(prefer!(self, file; data, synth_spec, mode, composition, mask, mask_variant, mask_dim, metric,
            horizon, lookback, train_fraction, few_shot, d_model, heads, layers, no_instance_norm, epochs,
            batch_size, lr, seed))
    }

    pub fn dataset(&self) -> Result<RawDataset> {
        match (&self.data, &self.synth_spec) {
            (Some(path), None) => load_csv(path),
            (None, Some(spec)) => synth_generate(&spec.parse::<SynthSpec>()?),
            (Some(_), Some(_)) => Err(Error::Contract("give either --data or --synth-spec, not both".into())),
            (None, None) => Err(Error::Contract("no dataset: pass --data or --synth-spec".into())),
        }
    }

    pub fn metric(&self) -> Result<Metric> {
        parse(self.metric.as_deref(), Metric::Pearson)
    }

    pub fn split(&self) -> Result<SplitSpec> {
        let spec = self.train_fraction.map_or_else(SplitSpec::default, SplitSpec::with_train_fraction);
        spec.validate()?;
        Ok(spec)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn mask_spec(&self) -> Result<MaskSpec> {
        let kind = ParamKind::parse(self.mask_variant.as_deref().unwrap_or("scalar"), self.mask_dim.unwrap_or(8))?;
        match self.mask.as_deref() {
            None | Some("learned") => Ok(MaskSpec::Learned(kind)),
            Some(other) => {
                if self.mask_variant.is_some() {
                    return Err(Error::Contract(format!("--mask-variant only applies to learned masks, not `{other}`")));
                }
                other.parse()
            }
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let d = ModelConfig::default();
        let t = TrainConfig::default();
        let model = ModelConfig {
            lookback: self.lookback.unwrap_or(d.lookback),
            horizon: self.horizon.unwrap_or(d.horizon),
            d_model: self.d_model.unwrap_or(d.d_model),
            heads: self.heads.unwrap_or(d.heads),
            layers: self.layers.unwrap_or(d.layers),
            mode: parse(self.mode.as_deref(), AttentionMode::Pcd)?,
            composition: parse(self.composition.as_deref(), Composition::Both)?,
            mask: self.mask_spec()?,
            instance_norm: !self.no_instance_norm.unwrap_or(false),
        };
        model.validate()?;
        let train = TrainConfig {
            epochs: self.epochs.unwrap_or(t.epochs),
            batch_size: self.batch_size.unwrap_or(t.batch_size),
            adam: AdamConfig {
                lr: self.lr.unwrap_or(t.adam.lr),
                ..t.adam
            },
            seed: self.seed(),
        };
        train.validate()?;
        Ok(ExperimentConfig {
            model,
            train,
            split: self.split()?,
            metric: self.metric()?,
            few_shot: self.few_shot,
        })
    }
}
