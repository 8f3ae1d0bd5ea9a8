//! Synthetic multivariate series with known cross-channel structure.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RawDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// AR(1) coefficient of the base signal.
const AR_COEF: f64 = 0.9;
/// Innovation std of the base signal.
const AR_NOISE: f64 = 0.3;
const SINE_PERIOD: f64 = 24.0;
const BURN_IN: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coupling {
    /// Each channel is its own AR(1) process.
    Independent,
    /// Channel k is the base signal delayed by `k * tau` plus N(0, noise²).
    LaggedCopy { tau: usize, noise: f64 },
    /// Channel k is `w_k * base + (1 - w_k) * own_k`.
    Mixture { weights: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub channels: usize,
    pub length: usize,
    #[serde(flatten)]
    pub coupling: Coupling,
    pub seed: u64,
}

impl SynthSpec {
    pub fn lagged_copy(channels: usize, length: usize, tau: usize, noise: f64, seed: u64) -> Self {
        SynthSpec {
            channels,
            length,
            coupling: Coupling::LaggedCopy { tau, noise },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.length == 0 {
            return Err(Error::contract("synthetic spec needs at least one channel and one step"));
        }
        match &self.coupling {
            Coupling::Independent => {}
            Coupling::LaggedCopy { tau, noise } => {
                if self.length <= *tau {
                    return Err(Error::contract(format!(
                        "lagged_copy needs length > tau, got length {} and tau {tau}",
                        self.length
                    )));
                }
                if !(noise.is_finite() && *noise >= 0.0) {
                    return Err(Error::contract(format!("noise must be >= 0, got {noise}")));
                }
            }
            Coupling::Mixture { weights } => {
                if weights.len() != self.channels {
                    return Err(Error::contract(format!(
                        "mixture needs one weight per channel ({}), got {}",
                        self.channels,
                        weights.len()
                    )));
                }
                if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
                    return Err(Error::contract("mixture weights must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match &self.coupling {
            Coupling::Independent => format!("synth_independent_c{}_t{}_s{}", self.channels, self.length, self.seed),
            Coupling::LaggedCopy { tau, noise } => format!(
                "synth_lagged_c{}_t{}_tau{tau}_n{noise}_s{}",
                self.channels, self.length, self.seed
            ),
            Coupling::Mixture { .. } => format!("synth_mixture_c{}_t{}_s{}", self.channels, self.length, self.seed),
        }
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.coupling {
            Coupling::Independent => write!(f, "independent")?,
            Coupling::LaggedCopy { tau, noise } => write!(f, "lagged_copy,tau={tau},noise={noise}")?,
            Coupling::Mixture { weights } => {
                let w: Vec<String> = weights.iter().map(f64::to_string).collect();
                write!(f, "mixture,weights={}", w.join(";"))?
            }
        }
        write!(f, ",c={},t={},seed={}", self.channels, self.length, self.seed)
    }
}

impl FromStr for SynthSpec {
    type Err = Error;

    /// `kind[,key=value...]`, e.g. `lagged_copy,c=4,t=2000,tau=3,noise=0.1,seed=7`.
    /// Mixture weights are `;`-separated.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: String| Error::format("synthetic spec", m);
        let mut parts = s.split(',').map(str::trim);
        let kind = parts.next().unwrap_or_default();
        let (mut c, mut t, mut tau, mut noise, mut seed) = (4usize, 2000usize, 3usize, 0.1f64, 0u64);
        let mut weights: Option<Vec<f64>> = None;
        for kv in parts {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{kv}`")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number `{v}` for `{k}`")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| bad(format!("bad integer `{v}` for `{k}`")));
            match k {
                "c" | "channels" => c = int(v)? as usize,
                "t" | "length" => t = int(v)? as usize,
                "tau" => tau = int(v)? as usize,
                "noise" | "sigma" => noise = num(v)?,
                "seed" => seed = int(v)?,
                "weights" => {
                    weights = Some(v.split(';').map(|w| num(w.trim())).collect::<Result<_>>()?)
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let coupling = match kind {
            "independent" => Coupling::Independent,
            "lagged_copy" | "lagged" => Coupling::LaggedCopy { tau, noise },
            "mixture" => Coupling::Mixture {
                weights: weights.ok_or_else(|| bad("mixture needs weights=...".into()))?,
            },
            other => return Err(bad(format!("unknown coupling `{other}`"))),
        };
        let spec = SynthSpec {
            channels: c,
            length: t,
            coupling,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// AR(1) plus a unit sinusoid with the given phase, after a burn-in.
fn base_signal(len: usize, phase: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let innov = Normal::new(0.0, AR_NOISE).expect("valid std");
    let mut state = 0.0;
    for _ in 0..BURN_IN {
        state = AR_COEF * state + innov.sample(rng);
    }
    (0..len)
        .map(|t| {
            state = AR_COEF * state + innov.sample(rng);
            state + (2.0 * std::f64::consts::PI * t as f64 / SINE_PERIOD + phase).sin()
        })
        .collect()
}

fn own_ar(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let innov = Normal::new(0.0, 1.0).expect("valid std");
    let mut state = 0.0;
    for _ in 0..BURN_IN {
        state = 0.5 * state + innov.sample(rng);
    }
    (0..len)
        .map(|_| {
            state = 0.5 * state + innov.sample(rng);
            state
        })
        .collect()
}

pub fn synth_generate(spec: &SynthSpec) -> Result<RawDataset> {
    spec.validate()?;
    let (c, t) = (spec.channels, spec.length);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Matrix::zeros(t, c);
    match &spec.coupling {
        Coupling::Independent => {
            for k in 0..c {
                values.set_column(k, &own_ar(t, &mut rng));
            }
        }
        Coupling::LaggedCopy { tau, noise } => {
            let span = (c - 1) * tau;
            let base = base_signal(t + span, 0.0, &mut rng);
            let eps = Normal::new(0.0, *noise).map_err(|e| Error::contract(e.to_string()))?;
            for k in 0..c {
                // channel k at time i sees the base at i - k·tau
                let shift = span - k * tau;
                let col: Vec<f64> = (0..t)
                    .map(|i| {
                        let n = if *noise > 0.0 { eps.sample(&mut rng) } else { 0.0 };
                        base[i + shift] + n
                    })
                    .collect();
                values.set_column(k, &col);
            }
        }
        Coupling::Mixture { weights } => {
            let base = base_signal(t, 0.0, &mut rng);
            for (k, w) in weights.iter().enumerate() {
                let own = own_ar(t, &mut rng);
                let col: Vec<f64> = base.iter().zip(&own).map(|(b, o)| w * b + (1.0 - w) * o).collect();
                values.set_column(k, &col);
            }
        }
    }
    Ok(RawDataset::new(spec.name(), values))
}
