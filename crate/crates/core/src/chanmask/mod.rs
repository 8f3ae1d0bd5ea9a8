//! Channel masks built from a similarity matrix and domain parameters.
//!
//! | variant      | mask                    |
//! |--------------|-------------------------|
//! | scalar       | `σ(α·R̄ + β)`            |
//! | vector       | `Norm(E·Eᵀ) ⊙ R̄`        |
//! | asym. vector | `Norm(E₁·E₂ᵀ) ⊙ R̄`      |
//! | matrix       | `A ⊙ R̄`                 |
//!
//! with `Norm = row-softmax ∘ ReLU`. Only the scalar variant is squashed into
//! `(0, 1)`; the others are used as raw logit multipliers.
//!
//! The ablation masks `1`, `|R|`, `R̄` and `σ(α·I + β)` are available through
//! [`MaskSpec`].

mod registry;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::chanstats::{cd_ratio, CorrStats};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use registry::{select_unseen_params, ParamsRegistry, RegistryEntry, Strategy, TaskTag};

pub const INIT_ALPHA: f64 = 1.0;
pub const INIT_BETA: f64 = 0.0;

/// Shape family of the learnable domain parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    Scalar,
    Vector { dim: usize },
    AsymVector { dim: usize },
    Matrix,
}

impl ParamKind {
    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Scalar => "scalar",
            ParamKind::Vector { .. } => "vector",
            ParamKind::AsymVector { .. } => "asym",
            ParamKind::Matrix => "matrix",
        }
    }

    /// Parses `scalar`, `vector`, `asym` or `matrix`; the vector variants
    /// take their embedding width from `dim`.
    pub fn parse(s: &str, dim: usize) -> Result<ParamKind> {
        match s {
            "scalar" => Ok(ParamKind::Scalar),
            "vector" => Ok(ParamKind::Vector { dim }),
            "asym" | "asym_vector" | "asymmetric" => Ok(ParamKind::AsymVector { dim }),
            "matrix" => Ok(ParamKind::Matrix),
            other => Err(Error::contract(format!("unknown mask variant `{other}`"))),
        }
    }
}

/// Learnable per-dataset parameters that adjust `R̄`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainParams {
    Scalar { alpha: f64, beta: f64 },
    Vector { e: Matrix },
    AsymVector { e1: Matrix, e2: Matrix },
    Matrix { a: Matrix },
}

impl DomainParams {
    pub fn scalar(alpha: f64, beta: f64) -> Self {
        DomainParams::Scalar { alpha, beta }
    }

    /// Initial parameters for `channels` channels. Scalar starts at
    /// `(α, β) = (1, 0)` and matrix at all-ones; the vector variants draw
    /// `uniform(-1/√d, 1/√d)` from `rng`.
    pub fn init(kind: ParamKind, channels: usize, rng: &mut impl Rng) -> Self {
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
        };
        match kind {
            ParamKind::Scalar => DomainParams::scalar(INIT_ALPHA, INIT_BETA),
            ParamKind::Vector { dim } => DomainParams::Vector {
                e: uniform(channels, dim),
            },
            ParamKind::AsymVector { dim } => DomainParams::AsymVector {
                e1: uniform(channels, dim),
                e2: uniform(channels, dim),
            },
            ParamKind::Matrix => DomainParams::Matrix {
                a: Matrix::ones(channels, channels),
            },
        }
    }

    pub fn kind(&self) -> ParamKind {
        match self {
            DomainParams::Scalar { .. } => ParamKind::Scalar,
            DomainParams::Vector { e } => ParamKind::Vector { dim: e.cols() },
            DomainParams::AsymVector { e1, .. } => ParamKind::AsymVector { dim: e1.cols() },
            DomainParams::Matrix { .. } => ParamKind::Matrix,
        }
    }

    /// Named tensors in a fixed order, as stored in a model's parameter set.
    pub fn tensors(&self) -> Vec<(&'static str, Matrix)> {
        match self {
            DomainParams::Scalar { alpha, beta } => vec![
                ("alpha", Matrix::scalar(*alpha)),
                ("beta", Matrix::scalar(*beta)),
            ],
            DomainParams::Vector { e } => vec![("e", e.clone())],
            DomainParams::AsymVector { e1, e2 } => vec![("e1", e1.clone()), ("e2", e2.clone())],
            DomainParams::Matrix { a } => vec![("a", a.clone())],
        }
    }

    /// Inverse of [`DomainParams::tensors`].
    pub fn from_tensors(kind: ParamKind, tensors: &[&Matrix]) -> Result<Self> {
        let bad = || Error::contract(format!("wrong tensor count for {} parameters", kind.name()));
        Ok(match (kind, tensors) {
            (ParamKind::Scalar, [a, b]) => DomainParams::scalar(a[(0, 0)], b[(0, 0)]),
            (ParamKind::Vector { .. }, [e]) => DomainParams::Vector { e: (*e).clone() },
            (ParamKind::AsymVector { .. }, [e1, e2]) => DomainParams::AsymVector {
                e1: (*e1).clone(),
                e2: (*e2).clone(),
            },
            (ParamKind::Matrix, [a]) => DomainParams::Matrix { a: (*a).clone() },
            _ => return Err(bad()),
        })
    }

    /// `(α, β)` of a scalar variant.
    pub fn as_scalar(&self) -> Option<(f64, f64)> {
        match self {
            DomainParams::Scalar { alpha, beta } => Some((*alpha, *beta)),
            _ => None,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        let fail = |what: String| {
            Err(Error::contract(format!(
                "{} domain parameters do not fit C={channels}: {what}",
                self.kind().name()
            )))
        };
        match self {
            DomainParams::Scalar { alpha, beta } => {
                if !(alpha.is_finite() && beta.is_finite()) {
                    return fail(format!("alpha={alpha}, beta={beta}"));
                }
            }
            DomainParams::Vector { e } => {
                if e.rows() != channels || e.cols() == 0 {
                    return fail(format!("E is {:?}", e.shape()));
                }
            }
            DomainParams::AsymVector { e1, e2 } => {
                if e1.rows() != channels || e1.cols() == 0 || e1.shape() != e2.shape() {
                    return fail(format!("E1 is {:?}, E2 is {:?}", e1.shape(), e2.shape()));
                }
            }
            DomainParams::Matrix { a } => {
                if a.shape() != (channels, channels) {
                    return fail(format!("A is {:?}", a.shape()));
                }
            }
        }
        Ok(())
    }
}

/// Which matrix multiplies the attention logits in PCD mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mask", rename_all = "snake_case")]
pub enum MaskSpec {
    /// All-ones (no adjustment).
    Ones,
    /// `|R|`: no centering, no parameters.
    AbsCorr,
    /// `R̄`: centering only.
    Centered,
    /// `σ(α·I + β)`: domain parameters without correlation.
    DomainOnly,
    /// Learned parameters applied to `R̄`.
    Learned(ParamKind),
}

impl MaskSpec {
    /// Shape of the learnable parameters, if any.
    pub fn param_kind(self) -> Option<ParamKind> {
        match self {
            MaskSpec::DomainOnly => Some(ParamKind::Scalar),
            MaskSpec::Learned(kind) => Some(kind),
            _ => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            MaskSpec::Ones => "ones".into(),
            MaskSpec::AbsCorr => "abs_r".into(),
            MaskSpec::Centered => "r_bar".into(),
            MaskSpec::DomainOnly => "sigma(aI+b)".into(),
            MaskSpec::Learned(ParamKind::Scalar) => "sigma(aR+b)".into(),
            MaskSpec::Learned(kind) => format!("{}*R", kind.name()),
        }
    }
}

impl fmt::Display for MaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for MaskSpec {
    type Err = Error;

    /// Ablation names: `ones`, `abs`, `rbar`, `domain`, `scalar`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ones" | "1" => Ok(MaskSpec::Ones),
            "abs" | "abs_r" => Ok(MaskSpec::AbsCorr),
            "rbar" | "r_bar" | "centered" => Ok(MaskSpec::Centered),
            "domain" | "domain_only" => Ok(MaskSpec::DomainOnly),
            "scalar" | "learned" => Ok(MaskSpec::Learned(ParamKind::Scalar)),
            other => Err(Error::contract(format!("unknown mask `{other}`"))),
        }
    }
}

/// Records the mask on `tape`. `params` are the domain-parameter tensors
/// in [`DomainParams::tensors`] order; `R̄` and `|R|` enter as constants.
pub fn record_mask(tape: &mut Tape, spec: MaskSpec, stats: &CorrStats, params: &[Var]) -> Result<Var> {
    let c = stats.channel_count;
    let expect = |n: usize| -> Result<()> {
        if params.len() != n {
            return Err(Error::contract(format!(
                "mask `{spec}` takes {n} parameter tensors, got {}",
                params.len()
            )));
        }
        Ok(())
    };
    match spec {
        MaskSpec::Ones => {
            expect(0)?;
            Ok(tape.constant(Matrix::ones(c, c)))
        }
        MaskSpec::AbsCorr => {
            expect(0)?;
            Ok(tape.constant(stats.abs.clone()))
        }
        MaskSpec::Centered => {
            expect(0)?;
            Ok(tape.constant(stats.centered.clone()))
        }
        MaskSpec::DomainOnly => {
            expect(2)?;
            let eye = tape.constant(Matrix::identity(c));
            let z = tape.scale_shift(eye, params[0], params[1])?;
            Ok(tape.sigmoid(z))
        }
        MaskSpec::Learned(kind) => {
            let rbar = tape.constant(stats.centered.clone());
            match kind {
                ParamKind::Scalar => {
                    expect(2)?;
                    let z = tape.scale_shift(rbar, params[0], params[1])?;
                    Ok(tape.sigmoid(z))
                }
                ParamKind::Vector { .. } => {
                    expect(1)?;
                    check_rows(tape, spec, params[0], c)?;
                    let et = tape.transpose(params[0]);
                    let gram = tape.matmul(params[0], et)?;
                    let norm = norm(tape, gram);
                    tape.hadamard(norm, rbar)
                }
                ParamKind::AsymVector { .. } => {
                    expect(2)?;
                    check_rows(tape, spec, params[0], c)?;
                    check_rows(tape, spec, params[1], c)?;
                    let e2t = tape.transpose(params[1]);
                    let gram = tape.matmul(params[0], e2t)?;
                    let norm = norm(tape, gram);
                    tape.hadamard(norm, rbar)
                }
                ParamKind::Matrix => {
                    expect(1)?;
                    if tape.value(params[0]).shape() != (c, c) {
                        return Err(Error::contract(format!(
                            "mask `{spec}` needs a {c}x{c} matrix, got {:?}",
                            tape.value(params[0]).shape()
                        )));
                    }
                    tape.hadamard(params[0], rbar)
                }
            }
        }
    }
}

fn check_rows(tape: &Tape, spec: MaskSpec, v: Var, c: usize) -> Result<()> {
    let rows = tape.value(v).rows();
    if rows != c {
        return Err(Error::contract(format!(
            "mask `{spec}` needs one embedding row per channel (C={c}), got {rows}"
        )));
    }
    Ok(())
}

/// `Softmax(ReLU(·))`, softmax taken along rows.
fn norm(tape: &mut Tape, x: Var) -> Var {
    let r = tape.relu(x);
    tape.softmax_rows(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMask {
    pub values: Matrix,
    pub spec: MaskSpec,
    pub cd_ratio: f64,
}

/// Evaluates a learned mask for fixed parameters.
pub fn build_mask(stats: &CorrStats, params: &DomainParams) -> Result<ChannelMask> {
    params.validate(stats.channel_count)?;
    evaluate_mask(MaskSpec::Learned(params.kind()), stats, Some(params))
}

/// Evaluates any mask spec; `params` is required exactly when the spec has
/// learnable parameters.
pub fn evaluate_mask(spec: MaskSpec, stats: &CorrStats, params: Option<&DomainParams>) -> Result<ChannelMask> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = match (spec.param_kind(), params) {
        (None, None) => Vec::new(),
        (Some(kind), Some(p)) if p.kind() == kind => {
            p.validate(stats.channel_count)?;
            p.tensors().into_iter().map(|(_, m)| tape.constant(m)).collect()
        }
        _ => {
            return Err(Error::contract(format!(
                "mask `{spec}` does not match the supplied domain parameters"
            )))
        }
    };
    let out = record_mask(&mut tape, spec, stats, &vars)?;
    let values = tape.value(out).clone();
    let ratio = if stats.channel_count >= 2 {
        cd_ratio(&values)?
    } else {
        f64::NAN
    };
    Ok(ChannelMask {
        values,
        spec,
        cd_ratio: ratio,
    })
}
