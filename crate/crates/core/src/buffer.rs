//! Aggregation buffers: a zero-initialised linear block added to every
//! layer's aggregate of a frozen base model.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{forward_bound, tensor_hash, BufferHook, ForwardOptions, ForwardTrace, GraphView, ModelConfig, ModelParams, NamedTensor};
use crate::rng::seeded;
use crate::tensor::{Matrix, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferVariant {
    /// `(D+I)⁻¹ H^(0:l−1) W_B`
    Full,
    /// `(D+I)⁻¹ H^(l−1) W_B`
    SingleLayer,
    /// `H^(0:l−1) W_B`
    JkNetStyle,
    /// `H^(l−1) W_B`
    ResidualStyle,
    /// `Â H^(l−1) W_B`
    PlainAgg,
}

impl BufferVariant {
    pub const ALL: [BufferVariant; 5] = [
        BufferVariant::Full,
        BufferVariant::SingleLayer,
        BufferVariant::JkNetStyle,
        BufferVariant::ResidualStyle,
        BufferVariant::PlainAgg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::SingleLayer => "single",
            Self::JkNetStyle => "jknet",
            Self::ResidualStyle => "residual",
            Self::PlainAgg => "agg",
        }
    }

    /// Whether the buffer input concatenates every earlier representation.
    pub fn concatenates(self) -> bool {
        matches!(self, Self::Full | Self::JkNetStyle)
    }

    /// Input width of the layer-`l` buffer (1-based).
    pub fn input_dim(self, config: &ModelConfig, l: usize) -> usize {
        let dims = config.trace_dims();
        if self.concatenates() {
            dims[..l].iter().sum()
        } else {
            dims[l - 1]
        }
    }
}

impl fmt::Display for BufferVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for BufferVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "single" | "single_layer" | "singlelayer" => Ok(Self::SingleLayer),
            "jknet" | "jk" | "jknet_style" => Ok(Self::JkNetStyle),
            "residual" | "residual_style" => Ok(Self::ResidualStyle),
            "agg" | "plain" | "plain_agg" => Ok(Self::PlainAgg),
            _ => Err(Error::Unsupported(format!("buffer variant `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BufferParams {
    pub variant: BufferVariant,
    /// `W_B^(l)` for `l = 1..=L`.
    pub weights: Vec<Matrix>,
}

impl BufferParams {
    pub fn zeros(config: &ModelConfig, variant: BufferVariant) -> Self {
        let weights = (1..=config.layers)
            .map(|l| Matrix::zeros(variant.input_dim(config, l), config.aggregate_dim(l)))
            .collect();
        Self { variant, weights }
    }

    pub fn named(&self) -> Vec<NamedTensor> {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| NamedTensor { name: format!("buffer.l{}", i + 1), value: w.clone() })
            .collect()
    }

    pub fn content_hash(&self) -> String {
        tensor_hash(&self.named())
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.data().iter().all(|&v| v == 0.0))
    }

    fn check(&self, config: &ModelConfig) -> Result<()> {
        let expected = Self::zeros(config, self.variant);
        if expected.weights.len() != self.weights.len()
            || expected.weights.iter().zip(&self.weights).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::dim("BufferParams", "buffer shapes do not match the base model"));
        }
        Ok(())
    }
}

/// A base model with buffers attached.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferedModel {
    pub base: ModelParams,
    pub buffers: BufferParams,
    base_was_frozen: bool,
}

/// Freezes `base` and attaches zero-initialised buffers.
pub fn attach(base: ModelParams, variant: BufferVariant) -> BufferedModel {
    let buffers = BufferParams::zeros(&base.config, variant);
    let base_was_frozen = base.frozen;
    let mut base = base;
    base.frozen = true;
    BufferedModel { base, buffers, base_was_frozen }
}

/// Drops the buffers and returns the base model as it was before `attach`.
pub fn detach(bm: BufferedModel) -> ModelParams {
    let mut base = bm.base;
    base.frozen = bm.base_was_frozen;
    base
}

impl BufferedModel {
    pub fn with_buffers(base: ModelParams, buffers: BufferParams) -> Result<Self> {
        buffers.check(&base.config)?;
        let mut bm = attach(base, buffers.variant);
        bm.buffers = buffers;
        Ok(bm)
    }

    /// Replaces the buffer weights, keeping the base and its original frozen
    /// state.
    pub fn set_buffers(&mut self, buffers: BufferParams) -> Result<()> {
        buffers.check(&self.base.config)?;
        self.buffers = buffers;
        Ok(())
    }

    pub fn variant(&self) -> BufferVariant {
        self.buffers.variant
    }

    pub fn config(&self) -> &ModelConfig {
        &self.base.config
    }
}

/// Output of the layer-`l` buffer given the trace prefix `H^(0..l−1)`.
///
/// Degree scaling uses `view`, which must describe the adjacency in use.
pub fn buffer_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    variant: BufferVariant,
    prefix: &[Var],
    view: &GraphView,
    weight: Var,
    dropout: f64,
    rng: &mut R,
) -> Result<Var> {
    let last = *prefix.last().ok_or_else(|| Error::Contract("buffer input prefix is empty".into()))?;
    let input = if variant.concatenates() { tape.concat_cols(prefix)? } else { last };
    let input = tape.dropout(input, dropout, rng)?;
    match variant {
        BufferVariant::Full | BufferVariant::SingleLayer => {
            let scaled = tape.scale_rows(input, view.inv_degree_plus_one.clone())?;
            tape.matmul(scaled, weight)
        }
        BufferVariant::JkNetStyle | BufferVariant::ResidualStyle => tape.matmul(input, weight),
        BufferVariant::PlainAgg => {
            let hw = tape.matmul(input, weight)?;
            tape.spmm(&view.agg, hw)
        }
    }
}

/// Tape handles of a buffered forward pass.
#[derive(Clone, Debug)]
pub struct BufferedPass {
    pub trace: ForwardTrace,
    pub base_vars: Vec<Var>,
    pub buffer_vars: Vec<Var>,
}

/// Registers base and buffer weights on `tape` (buffers trainable, base per
/// its frozen flag).
pub fn bind_buffered(bm: &BufferedModel, tape: &mut Tape) -> (Vec<Var>, Vec<Var>) {
    let base = bm.base.bind(tape);
    let buffers = bm.buffers.weights.iter().map(|w| tape.param(w.clone())).collect();
    (base, buffers)
}

/// Buffered forward over already-bound weights, so the clean and the
/// edge-dropped passes of one step share parameters.
#[allow(clippy::too_many_arguments)]
pub fn buffered_forward_bound<R: Rng + ?Sized>(
    bm: &BufferedModel,
    base_vars: &[Var],
    buffer_vars: &[Var],
    tape: &mut Tape,
    x: Var,
    view: &GraphView,
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<ForwardTrace> {
    let hook = BufferHook { variant: bm.variant(), weights: buffer_vars };
    forward_bound(bm.config(), base_vars, tape, x, view, opts, rng, Some(hook))
}

pub fn buffered_forward<R: Rng + ?Sized>(
    bm: &BufferedModel,
    tape: &mut Tape,
    x: &Matrix,
    view: &GraphView,
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<BufferedPass> {
    let (base_vars, buffer_vars) = bind_buffered(bm, tape);
    let xv = tape.constant(x.clone());
    let trace = buffered_forward_bound(bm, &base_vars, &buffer_vars, tape, xv, view, opts, rng)?;
    Ok(BufferedPass { trace, base_vars, buffer_vars })
}

/// Eval-mode log-probabilities of the buffered model.
pub fn predict_buffered(bm: &BufferedModel, x: &Matrix, view: &GraphView) -> Result<Matrix> {
    let mut tape = Tape::new();
    let pass = buffered_forward(bm, &mut tape, x, view, ForwardOptions::eval(), &mut seeded(0))?;
    Ok(tape.value(pass.trace.log_probs).clone())
}
