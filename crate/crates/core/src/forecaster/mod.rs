//! Channel-token transformer forecaster.
//!
//! Each channel's lookback window is embedded as one token; attention runs
//! across channels. The pre-softmax attention weights are chosen by
//! [`AttentionMode`] and [`Composition`]:
//!
//! | mode / composition | weights before softmax            |
//! |--------------------|-----------------------------------|
//! | CI                 | logits, off-diagonal set to `-inf`|
//! | CD                 | logits                            |
//! | PCD, both          | `M ⊙ logits`                      |
//! | PCD, global only   | `M`                               |
//! | PCD, local only    | logits                            |
//!
//! where `logits = Q·Kᵀ/√d_k` per head and `M` is the channel mask.

mod checkpoint;
mod norm;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::chanmask::{evaluate_mask, record_mask, ChannelMask, DomainParams, MaskSpec, ParamKind};
use crate::chanstats::CorrStats;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use norm::{instance_denormalize, instance_normalize, normalize_with, InstanceStats, INSTANCE_EPS};

const LAYER_NORM_EPS: f64 = 1e-5;
const FFN_MULT: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Ci,
    Cd,
    Pcd,
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::Ci => "ci",
            AttentionMode::Cd => "cd",
            AttentionMode::Pcd => "pcd",
        })
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ci" => Ok(AttentionMode::Ci),
            "cd" => Ok(AttentionMode::Cd),
            "pcd" => Ok(AttentionMode::Pcd),
            other => Err(Error::contract(format!("unknown attention mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    LocalOnly,
    GlobalOnly,
    Both,
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Composition::LocalOnly => "local",
            Composition::GlobalOnly => "global",
            Composition::Both => "both",
        })
    }
}

impl FromStr for Composition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" | "local_only" => Ok(Composition::LocalOnly),
            "global" | "global_only" => Ok(Composition::GlobalOnly),
            "both" => Ok(Composition::Both),
            other => Err(Error::contract(format!("unknown composition `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub mode: AttentionMode,
    pub composition: Composition,
    /// Mask used in PCD mode.
    pub mask: MaskSpec,
    pub instance_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lookback: 96,
            horizon: 24,
            d_model: 16,
            heads: 2,
            layers: 1,
            mode: AttentionMode::Pcd,
            composition: Composition::Both,
            mask: MaskSpec::Learned(ParamKind::Scalar),
            instance_norm: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("layers", self.layers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be at least 1")));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::contract(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.composition == Composition::GlobalOnly && self.mode != AttentionMode::Pcd {
            return Err(Error::contract(format!(
                "global-only composition needs PCD mode, got {}",
                self.mode
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Whether the model carries a channel mask.
    pub fn uses_mask(&self) -> bool {
        self.mode == AttentionMode::Pcd
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    /// uniform(-1/√fan_in, 1/√fan_in)
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Clone, Debug)]
struct HeadIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
}

#[derive(Clone, Debug)]
struct LayerIdx {
    ln1: (usize, usize),
    heads: Vec<HeadIdx>,
    bo: usize,
    ln2: (usize, usize),
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Positions of every parameter in the flat parameter list.
#[derive(Clone, Debug)]
struct Layout {
    embed_w: usize,
    embed_b: usize,
    layers: Vec<LayerIdx>,
    final_ln: (usize, usize),
    proj_w: usize,
    proj_b: usize,
    mask: Vec<usize>,
}

struct LayoutBuilder {
    entries: Vec<(String, (usize, usize), Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.entries.push((name, shape, init));
        self.entries.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
        let init = Init::Uniform { fan_in };
        let w = self.add(format!("{prefix}.w"), (fan_in, fan_out), init);
        let b = self.add(format!("{prefix}.b"), (1, fan_out), init);
        (w, b)
    }

    fn layer_norm(&mut self, prefix: &str, width: usize) -> (usize, usize) {
        let g = self.add(format!("{prefix}.g"), (1, width), Init::Ones);
        let b = self.add(format!("{prefix}.b"), (1, width), Init::Zeros);
        (g, b)
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<(String, (usize, usize), Init)>) {
    let (d, dk) = (cfg.d_model, cfg.head_dim());
    let mut b = LayoutBuilder { entries: Vec::new() };
    let (embed_w, embed_b) = b.linear("embed", cfg.lookback, d);
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let ln1 = b.layer_norm(&format!("layers.{l}.ln1"), d);
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let p = format!("layers.{l}.attn.h{h}");
            let (wq, bq) = b.linear(&format!("{p}.q"), d, dk);
            let (wk, bk) = b.linear(&format!("{p}.k"), d, dk);
            let (wv, bv) = b.linear(&format!("{p}.v"), d, dk);
            // Output map split by head rows; fan-in is the full concatenation.
            let wo = b.add(format!("{p}.o.w"), (dk, d), Init::Uniform { fan_in: d });
            heads.push(HeadIdx { wq, bq, wk, bk, wv, bv, wo });
        }
        let bo = b.add(format!("layers.{l}.attn.o.b"), (1, d), Init::Uniform { fan_in: d });
        let ln2 = b.layer_norm(&format!("layers.{l}.ln2"), d);
        let (w1, b1) = b.linear(&format!("layers.{l}.ffn.1"), d, FFN_MULT * d);
        let (w2, b2) = b.linear(&format!("layers.{l}.ffn.2"), FFN_MULT * d, d);
        layers.push(LayerIdx { ln1, heads, bo, ln2, w1, b1, w2, b2 });
    }
    let final_ln = b.layer_norm("final_ln", d);
    let (proj_w, proj_b) = b.linear("proj", d, cfg.horizon);
    let layout = Layout {
        embed_w,
        embed_b,
        layers,
        final_ln,
        proj_w,
        proj_b,
        mask: Vec::new(),
    };
    (layout, b.entries)
}

/// Named parameter tensors in a fixed order.
pub type ParamList = Vec<(String, Matrix)>;

#[derive(Clone, Debug)]
pub struct ForecastModel {
    config: ModelConfig,
    channels: usize,
    params: ParamList,
    /// Similarity statistics feeding the mask (PCD only).
    stats: Option<CorrStats>,
    layout: Layout,
}

/// Intermediate tensors of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// H×C forecast on the window's original scale.
    pub output: Var,
    /// Channel-token embeddings, C×d.
    pub tokens: Var,
    pub mask: Option<Var>,
    /// Post-softmax attention weights, per layer then per head.
    pub attention: Vec<Vec<Var>>,
}

impl ForecastModel {
    /// Initializes parameters from `seed`. `stats` must be present exactly
    /// when the config is in PCD mode, and sets the channel count for the
    /// mask. Transformer weights and mask parameters draw from separate
    /// streams, so models that differ only in their mask start from the
    /// same weights.
    pub fn new(config: ModelConfig, channels: usize, stats: Option<CorrStats>, seed: u64) -> Result<Self> {
        config.validate()?;
        if channels == 0 {
            return Err(Error::contract("model needs at least one channel"));
        }
        let stats = match (config.uses_mask(), stats) {
            (true, Some(s)) => {
                if s.channel_count != channels {
                    return Err(Error::contract(format!(
                        "similarity matrix is {0}x{0} but the model has {channels} channels",
                        s.channel_count
                    )));
                }
                Some(s)
            }
            (true, None) => return Err(Error::contract("PCD mode needs a similarity matrix for its mask")),
            (false, _) => None,
        };

        let (mut layout, entries) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: ParamList = entries
            .into_iter()
            .map(|(name, (r, c), init)| {
                let m = match init {
                    Init::Uniform { fan_in } => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        Matrix::from_fn(r, c, |_, _| rng.random_range(-bound..bound))
                    }
                    Init::Ones => Matrix::ones(r, c),
                    Init::Zeros => Matrix::zeros(r, c),
                };
                (name, m)
            })
            .collect();

        if let Some(kind) = config.mask.param_kind().filter(|_| config.uses_mask()) {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
            mask_rng.set_stream(1);
            let dp = DomainParams::init(kind, channels, &mut mask_rng);
            for (name, m) in dp.tensors() {
                layout.mask.push(params.len());
                params.push((format!("mask.{name}"), m));
            }
        }

        Ok(ForecastModel {
            config,
            channels,
            params,
            stats,
            layout,
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        channels: usize,
        stats: Option<CorrStats>,
        params: ParamList,
    ) -> Result<Self> {
        let template = ForecastModel::new(config, channels, stats, 0)?;
        if template.params.len() != params.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                template.params.len(),
                params.len()
            )));
        }
        for ((tn, tm), (n, m)) in template.params.iter().zip(&params) {
            if tn != n || tm.shape() != m.shape() {
                return Err(Error::contract(format!(
                    "parameter `{n}` {:?} does not match expected `{tn}` {:?}",
                    m.shape(),
                    tm.shape()
                )));
            }
        }
        Ok(ForecastModel { params, ..template })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stats(&self) -> Option<&CorrStats> {
        self.stats.as_ref()
    }

    pub fn params(&self) -> &ParamList {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, m)| m.len()).sum()
    }

    /// Replaces every parameter value; names and shapes must match.
    pub fn set_params(&mut self, values: Vec<Matrix>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::contract("parameter count mismatch"));
        }
        for ((_, old), new) in self.params.iter_mut().zip(values) {
            if old.shape() != new.shape() {
                return Err(Error::dim("set_params", old.shape(), new.shape()));
            }
            *old = new;
        }
        Ok(())
    }

    pub fn param_values(&self) -> Vec<Matrix> {
        self.params.iter().map(|(_, m)| m.clone()).collect()
    }

    /// Current domain parameters, if the mask has any.
    pub fn domain_params(&self) -> Option<DomainParams> {
        let kind = self.config.mask.param_kind()?;
        if self.layout.mask.is_empty() {
            return None;
        }
        let tensors: Vec<&Matrix> = self.layout.mask.iter().map(|&i| &self.params[i].1).collect();
        DomainParams::from_tensors(kind, &tensors).ok()
    }

    /// The current channel mask (PCD only).
    pub fn mask(&self) -> Option<ChannelMask> {
        let stats = self.stats.as_ref()?;
        evaluate_mask(self.config.mask, stats, self.domain_params().as_ref()).ok()
    }

    /// Adds every parameter to `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|(_, m)| tape.param(m.clone())).collect()
    }

    /// Adds every parameter to `tape` as a constant.
    pub fn bind_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|(_, m)| tape.constant(m.clone())).collect()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.shape() != (self.config.lookback, self.channels) {
            return Err(Error::contract(format!(
                "input window is {:?}, model expects {}x{}",
                x.shape(),
                self.config.lookback,
                self.channels
            )));
        }
        if !x.is_finite() {
            return Err(Error::Numeric {
                context: "input window".into(),
            });
        }
        Ok(())
    }

    /// Normalization stats for `x` per the config.
    pub fn window_stats(&self, x: &Matrix) -> (Matrix, InstanceStats) {
        if self.config.instance_norm {
            instance_normalize(x)
        } else {
            (x.clone(), InstanceStats::identity(x.cols()))
        }
    }

    /// Records the forward pass for raw window `x` (L×C).
    pub fn record(&self, tape: &mut Tape, vars: &[Var], x: &Matrix) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let (xn, stats) = self.window_stats(x);
        self.record_normalized(tape, vars, &xn, &stats)
    }

    /// Records the forward pass from an already normalized window and the
    /// stats used to undo the normalization on the output.
    pub fn record_normalized(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        xn: &Matrix,
        stats: &InstanceStats,
    ) -> Result<ForwardTrace> {
        if vars.len() != self.params.len() {
            return Err(Error::contract(format!(
                "forward got {} parameter handles, model has {}",
                vars.len(),
                self.params.len()
            )));
        }
        let cfg = &self.config;
        let c = self.channels;
        let p = |i: usize| vars[i];
        let ones = tape.constant(Matrix::ones(c, 1));

        let mask = match &self.stats {
            Some(stats) if cfg.uses_mask() => {
                let mvars: Vec<Var> = self.layout.mask.iter().map(|&i| vars[i]).collect();
                Some(record_mask(tape, cfg.mask, stats, &mvars)?)
            }
            _ => None,
        };

        let tokens_in = tape.constant(xn.transpose());
        let tokens = affine(tape, tokens_in, p(self.layout.embed_w), p(self.layout.embed_b), ones)?;

        let mut h = tokens;
        let mut attention = Vec::with_capacity(cfg.layers);
        for layer in &self.layout.layers {
            let n1 = layer_norm(tape, h, p(layer.ln1.0), p(layer.ln1.1), ones)?;
            let (attn_out, weights) = self.attention_block(tape, vars, layer, n1, mask, ones)?;
            attention.push(weights);
            h = tape.add(h, attn_out)?;
            let n2 = layer_norm(tape, h, p(layer.ln2.0), p(layer.ln2.1), ones)?;
            let f1 = affine(tape, n2, p(layer.w1), p(layer.b1), ones)?;
            let f1 = tape.relu(f1);
            let f2 = affine(tape, f1, p(layer.w2), p(layer.b2), ones)?;
            h = tape.add(h, f2)?;
        }
        let hn = layer_norm(tape, h, p(self.layout.final_ln.0), p(self.layout.final_ln.1), ones)?;
        let proj = affine(tape, hn, p(self.layout.proj_w), p(self.layout.proj_b), ones)?;
        let y = tape.transpose(proj);

        let scale = tape.constant(Matrix::from_fn(cfg.horizon, c, |_, j| stats.std[j]));
        let shift = tape.constant(Matrix::from_fn(cfg.horizon, c, |_, j| stats.mean[j]));
        let y = tape.hadamard(y, scale)?;
        let output = tape.add(y, shift)?;
        Ok(ForwardTrace {
            output,
            tokens,
            mask,
            attention,
        })
    }

    fn attention_block(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        layer: &LayerIdx,
        x: Var,
        mask: Option<Var>,
        ones: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let heads: Vec<HeadVars> = layer
            .heads
            .iter()
            .map(|h| HeadVars {
                wq: vars[h.wq],
                bq: vars[h.bq],
                wk: vars[h.wk],
                bk: vars[h.bk],
                wv: vars[h.wv],
                bv: vars[h.bv],
                wo: vars[h.wo],
            })
            .collect();
        let cfg = &self.config;
        record_attention(tape, x, &heads, vars[layer.bo], mask, cfg.mode, cfg.composition, ones)
    }

    /// H×C forecast for one raw window, without recording gradients.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.bind_constant(&mut tape);
        let trace = self.record(&mut tape, &vars, x)?;
        Ok(tape.value(trace.output).clone())
    }

    /// Forecast from a normalized window with explicit output stats.
    pub fn predict_normalized(&self, xn: &Matrix, stats: &InstanceStats) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.bind_constant(&mut tape);
        let trace = self.record_normalized(&mut tape, &vars, xn, stats)?;
        Ok(tape.value(trace.output).clone())
    }

    /// Embeds each channel's history as one d-dimensional token (C×d).
    pub fn embed_channels(&self, xn: &Matrix) -> Result<Matrix> {
        if xn.rows() != self.config.lookback {
            return Err(Error::contract(format!(
                "embedding expects {} time steps, got {}",
                self.config.lookback,
                xn.rows()
            )));
        }
        let mut tape = Tape::new();
        let w = tape.constant(self.params[self.layout.embed_w].1.clone());
        let b = tape.constant(self.params[self.layout.embed_b].1.clone());
        let ones = tape.constant(Matrix::ones(xn.cols(), 1));
        let x = tape.constant(xn.transpose());
        let t = affine(&mut tape, x, w, b, ones)?;
        Ok(tape.value(t).clone())
    }

    /// Stable digest of every parameter's bits.
    pub fn param_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, m) in &self.params {
            h.update(name.as_bytes());
            for v in m.as_slice() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// One attention head's projections: `d×d_k` maps with `1×d_k` biases, and
/// the head's `d_k×d` slice of the output map.
#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub bk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
}

#[derive(Clone, Copy, Debug)]
struct HeadVars {
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
}

/// Multi-head channel attention over `tokens` (C×d), evaluated without
/// gradients. `mask` must be given exactly in PCD mode.
pub fn masked_attention(
    tokens: &Matrix,
    heads: &[AttentionHead],
    out_bias: &Matrix,
    mask: Option<&Matrix>,
    mode: AttentionMode,
    composition: Composition,
) -> Result<Matrix> {
    if composition == Composition::GlobalOnly && mode != AttentionMode::Pcd {
        return Err(Error::contract(format!("global-only composition needs PCD mode, got {mode}")));
    }
    if mask.is_some() != (mode == AttentionMode::Pcd) {
        return Err(Error::contract(format!(
            "a mask is required in PCD mode and only there (mode {mode})"
        )));
    }
    if let Some(m) = mask {
        if m.shape() != (tokens.rows(), tokens.rows()) {
            return Err(Error::dim("masked_attention", m.shape(), (tokens.rows(), tokens.rows())));
        }
    }
    let mut tape = Tape::new();
    let x = tape.constant(tokens.clone());
    let ones = tape.constant(Matrix::ones(tokens.rows(), 1));
    let hv: Vec<HeadVars> = heads
        .iter()
        .map(|h| HeadVars {
            wq: tape.constant(h.wq.clone()),
            bq: tape.constant(h.bq.clone()),
            wk: tape.constant(h.wk.clone()),
            bk: tape.constant(h.bk.clone()),
            wv: tape.constant(h.wv.clone()),
            bv: tape.constant(h.bv.clone()),
            wo: tape.constant(h.wo.clone()),
        })
        .collect();
    let bo = tape.constant(out_bias.clone());
    let m = mask.map(|m| tape.constant(m.clone()));
    let (out, _) = record_attention(&mut tape, x, &hv, bo, m, mode, composition, ones)?;
    Ok(tape.value(out).clone())
}

#[allow(clippy::too_many_arguments)]
fn record_attention(
    tape: &mut Tape,
    x: Var,
    heads: &[HeadVars],
    bo: Var,
    mask: Option<Var>,
    mode: AttentionMode,
    composition: Composition,
    ones: Var,
) -> Result<(Var, Vec<Var>)> {
    let c = tape.value(x).rows();
    if heads.is_empty() {
        return Err(Error::contract("attention needs at least one head"));
    }

    // Global-only weights do not depend on the head.
    let global = match (mode, composition, mask) {
        (AttentionMode::Pcd, Composition::GlobalOnly, Some(m)) => Some(tape.softmax_rows(m)),
        (AttentionMode::Pcd, Composition::GlobalOnly, None) => {
            return Err(Error::contract("global-only attention needs a mask"))
        }
        _ => None,
    };

    let mut out: Option<Var> = None;
    let mut weights_per_head = Vec::with_capacity(heads.len());
    for head in heads {
        let v = affine(tape, x, head.wv, head.bv, ones)?;
        let weights = match global {
            Some(w) => w,
            None => {
                let q = affine(tape, x, head.wq, head.bq, ones)?;
                let k = affine(tape, x, head.wk, head.bk, ones)?;
                let dk = tape.value(q).cols();
                let kt = tape.transpose(k);
                let qk = tape.matmul(q, kt)?;
                let logits = tape.scale(qk, 1.0 / (dk as f64).sqrt());
                let pre = match (mode, composition) {
                    (AttentionMode::Ci, _) => {
                        let keep = (0..c * c).map(|i| i / c == i % c).collect();
                        tape.mask_fill(logits, keep, f64::NEG_INFINITY)?
                    }
                    (AttentionMode::Cd, _) | (AttentionMode::Pcd, Composition::LocalOnly) => logits,
                    (AttentionMode::Pcd, _) => {
                        let m = mask.ok_or_else(|| Error::contract("PCD attention needs a mask"))?;
                        tape.hadamard(m, logits)?
                    }
                };
                tape.softmax_rows(pre)
            }
        };
        weights_per_head.push(weights);
        let ctx = tape.matmul(weights, v)?;
        let proj = tape.matmul(ctx, head.wo)?;
        out = Some(match out {
            Some(acc) => tape.add(acc, proj)?,
            None => proj,
        });
    }
    let out = out.expect("at least one head");
    let bias = tape.matmul(ones, bo)?;
    Ok((tape.add(out, bias)?, weights_per_head))
}

/// `x·W + 1·b` with the bias row repeated by an explicit ones column.
fn affine(tape: &mut Tape, x: Var, w: Var, b: Var, ones: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let bias = tape.matmul(ones, b)?;
    tape.add(xw, bias)
}

fn layer_norm(tape: &mut Tape, x: Var, g: Var, b: Var, ones: Var) -> Result<Var> {
    let n = tape.layer_norm_rows(x, LAYER_NORM_EPS);
    let gain = tape.matmul(ones, g)?;
    let scaled = tape.hadamard(n, gain)?;
    let bias = tape.matmul(ones, b)?;
    tape.add(scaled, bias)
}
