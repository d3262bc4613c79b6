//! Base architectures (MLP, GCN, SGC, GraphSAGE, GIN) expressed on the tape.
//!
//! Parameters are stored as an ordered list of named tensors whose layout is
//! fixed by the [`ModelConfig`]; the forward pass walks that layout in order.
//! A layer computes an aggregate `H_N` and then updates it; an optional
//! buffer hook adds its output to `H_N` before the update.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::buffer::{self, BufferVariant};
use crate::error::{Error, Result};
use crate::graph::{node_degrees, normalize_or_zero, Graph, NormKind, NormScheme};
use crate::rng::seeded;
use crate::tensor::{ActivationKind, CsrMatrix, Matrix, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Mlp,
    Gcn,
    Sgc,
    Sage,
    Gin,
}

impl Arch {
    pub const ALL: [Arch; 5] = [Arch::Mlp, Arch::Gcn, Arch::Sgc, Arch::Sage, Arch::Gin];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::Gcn => "gcn",
            Arch::Sgc => "sgc",
            Arch::Sage => "sage",
            Arch::Gin => "gin",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Unsupported(format!("architecture `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub in_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
    /// Number of layers `L`; for SGC the number of propagation steps.
    pub layers: usize,
    pub activation: ActivationKind,
    pub dropout: f64,
    /// Aggregation for GCN and SGC. SAGE always uses the random-walk form and
    /// GIN the raw adjacency; only the self-loop flag of this field applies
    /// to SAGE.
    pub norm: NormScheme,
    pub gin_hidden: usize,
}

impl ModelConfig {
    pub fn new(arch: Arch, in_dim: usize, hidden: usize, num_classes: usize, layers: usize) -> Self {
        Self {
            arch,
            in_dim,
            hidden,
            num_classes,
            layers,
            activation: ActivationKind::Relu,
            dropout: 0.0,
            norm: match arch {
                Arch::Sage => NormScheme::new(NormKind::RandomWalk, false),
                _ => NormScheme::symmetric(),
            },
            gin_hidden: hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model: {m}")));
        if self.layers == 0 {
            return bad("at least one layer is required");
        }
        if self.in_dim == 0 || self.num_classes == 0 || (self.layers > 1 && self.hidden == 0) {
            return bad("dimensions must be positive");
        }
        if self.arch == Arch::Gin && self.gin_hidden == 0 {
            return bad("gin_hidden must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Widths of the retained representations `H^(0)..H^(L)`.
    pub fn trace_dims(&self) -> Vec<usize> {
        if self.arch == Arch::Sgc {
            return vec![self.in_dim; self.layers + 1];
        }
        let mut dims = vec![self.in_dim];
        dims.extend(std::iter::repeat_n(self.hidden, self.layers - 1));
        dims.push(self.num_classes);
        dims
    }

    /// Width of the aggregate `H_N^(l)` at layer `l` (1-based).
    pub fn aggregate_dim(&self, l: usize) -> usize {
        let dims = self.trace_dims();
        match self.arch {
            Arch::Gin | Arch::Sgc => dims[l - 1],
            _ => dims[l],
        }
    }

    /// Normalisation actually used by AGG, `None` for the MLP.
    pub fn aggregation(&self) -> Option<NormScheme> {
        match self.arch {
            Arch::Mlp => None,
            Arch::Gcn | Arch::Sgc => Some(self.norm),
            Arch::Sage => Some(NormScheme::new(NormKind::RandomWalk, self.norm.add_self_loops)),
            Arch::Gin => Some(NormScheme::raw()),
        }
    }

    /// Names and shapes of all parameter tensors, in storage order.
    pub fn layout(&self) -> Vec<(String, (usize, usize))> {
        let dims = self.trace_dims();
        let mut out = Vec::new();
        for l in 1..=self.layers {
            let (din, dout) = (dims[l - 1], dims[l]);
            match self.arch {
                Arch::Mlp | Arch::Gcn => {
                    out.push((format!("l{l}.weight"), (din, dout)));
                    out.push((format!("l{l}.bias"), (1, dout)));
                }
                Arch::Sage => {
                    out.push((format!("l{l}.weight_neigh"), (din, dout)));
                    out.push((format!("l{l}.weight_self"), (din, dout)));
                    out.push((format!("l{l}.bias"), (1, dout)));
                }
                Arch::Gin => {
                    out.push((format!("l{l}.mlp1.weight"), (din, self.gin_hidden)));
                    out.push((format!("l{l}.mlp1.bias"), (1, self.gin_hidden)));
                    out.push((format!("l{l}.mlp2.weight"), (self.gin_hidden, dout)));
                    out.push((format!("l{l}.mlp2.bias"), (1, dout)));
                    out.push((format!("l{l}.eps"), (1, 1)));
                }
                Arch::Sgc => {}
            }
        }
        if self.arch == Arch::Sgc {
            out.push(("head.weight".into(), (self.in_dim, self.num_classes)));
            out.push(("head.bias".into(), (1, self.num_classes)));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub value: Matrix,
}

/// Parameters of a base model, laid out per [`ModelConfig::layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
    /// Frozen parameters are bound as constants and never updated.
    pub frozen: bool,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, GIN `ε = 0`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, (r, c))| {
                let value = if name.ends_with("weight") || name.ends_with("weight_neigh") || name.ends_with("weight_self") {
                    let a = (6.0 / (r + c) as f64).sqrt();
                    Matrix::from_fn(r, c, |_, _| rng.random_range(-a..a))
                } else {
                    Matrix::zeros(r, c)
                };
                NamedTensor { name, value }
            })
            .collect();
        Ok(Self { config: config.clone(), tensors, frozen: false })
    }

    pub fn from_tensors(config: ModelConfig, tensors: Vec<NamedTensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::dim("ModelParams", format!("{} tensors for a layout of {}", tensors.len(), layout.len())));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if *name != t.name || *shape != t.value.shape() {
                return Err(Error::dim("ModelParams", format!("expected {name} {shape:?}, found {} {:?}", t.name, t.value.shape())));
            }
        }
        Ok(Self { config, tensors, frozen: false })
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.iter_mut().find(|t| t.name == name).map(|t| &mut t.value)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    /// Registers every tensor on `tape`, as trainable leaves unless frozen.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if self.frozen { tape.frozen(t.value.clone()) } else { tape.param(t.value.clone()) })
            .collect()
    }

    /// SHA-256 over names, shapes and the little-endian bytes of every value.
    pub fn content_hash(&self) -> String {
        tensor_hash(&self.tensors)
    }
}

pub(crate) fn tensor_hash(tensors: &[NamedTensor]) -> String {
    let mut h = Sha256::new();
    for t in tensors {
        h.update(t.name.as_bytes());
        h.update((t.value.rows() as u64).to_le_bytes());
        h.update((t.value.cols() as u64).to_le_bytes());
        h.update(t.value.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Graph-side inputs of a forward pass, derived once per adjacency.
#[derive(Clone, Debug)]
pub struct GraphView {
    /// Normalised adjacency used by AGG (raw `A` for GIN, unused for MLP).
    pub agg: Arc<CsrMatrix>,
    /// Degrees of the adjacency in use, without self-loops.
    pub degrees: Vec<usize>,
    /// `1 / (d_i + 1)` per node.
    pub inv_degree_plus_one: Arc<Vec<f64>>,
}

impl GraphView {
    pub fn new(g: &Graph, config: &ModelConfig) -> Self {
        let agg = match config.aggregation() {
            None => CsrMatrix::identity(g.num_nodes()),
            Some(scheme) => normalize_or_zero(g, scheme),
        };
        let degrees = node_degrees(g);
        let inv = degrees.iter().map(|&d| 1.0 / (d as f64 + 1.0)).collect();
        Self { agg: Arc::new(agg), degrees, inv_degree_plus_one: Arc::new(inv) }
    }

    pub fn num_nodes(&self) -> usize {
        self.degrees.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dropout rates for one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ForwardOptions {
    pub base_dropout: f64,
    pub buffer_dropout: f64,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self::default()
    }

    pub fn for_mode(config: &ModelConfig, mode: Mode) -> Self {
        match mode {
            Mode::Train => Self { base_dropout: config.dropout, buffer_dropout: 0.0 },
            Mode::Eval => Self::eval(),
        }
    }
}

/// Tape handles for `H^(0)..H^(L)`, the aggregates and the outputs.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub hidden: Vec<Var>,
    pub aggregates: Vec<Var>,
    pub logits: Var,
    pub log_probs: Var,
}

/// Buffer weights handed to the forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BufferHook<'a> {
    pub variant: BufferVariant,
    pub weights: &'a [Var],
}

/// Forward pass over bound parameters `vars` (in layout order).
pub fn forward_bound<R: Rng + ?Sized>(
    config: &ModelConfig,
    vars: &[Var],
    tape: &mut Tape,
    x: Var,
    view: &GraphView,
    opts: ForwardOptions,
    rng: &mut R,
    hook: Option<BufferHook<'_>>,
) -> Result<ForwardTrace> {
    let (rows, cols) = tape.value(x).shape();
    if rows != view.num_nodes() || cols != config.in_dim {
        return Err(Error::dim(
            "forward",
            format!("features {rows}x{cols} for {} nodes and in_dim {}", view.num_nodes(), config.in_dim),
        ));
    }
    if vars.len() != config.layout().len() {
        return Err(Error::dim("forward", "parameter count does not match the layout"));
    }
    if let Some(h) = hook {
        if h.weights.len() != config.layers {
            return Err(Error::dim("forward", "one buffer weight per layer is required"));
        }
    }
    let mut cursor = vars.iter().copied();
    let mut next = || cursor.next().expect("layout length checked");
    let big_l = config.layers;
    let mut hidden = vec![x];
    let mut aggregates = Vec::with_capacity(big_l);

    for l in 1..=big_l {
        let h = hidden[l - 1];
        let input = if config.arch == Arch::Sgc { h } else { tape.dropout(h, opts.base_dropout, rng)? };
        let last = l == big_l;
        let mut gin = None;
        let mut agg = match config.arch {
            Arch::Mlp => {
                let w = next();
                tape.matmul(input, w)?
            }
            Arch::Gcn => {
                let w = next();
                let hw = tape.matmul(input, w)?;
                tape.spmm(&view.agg, hw)?
            }
            Arch::Sage => {
                let (wn, ws) = (next(), next());
                let hw = tape.matmul(input, wn)?;
                let neigh = tape.spmm(&view.agg, hw)?;
                let root = tape.matmul(input, ws)?;
                tape.add(neigh, root)?
            }
            Arch::Gin => {
                let (w1, b1, w2, b2, eps) = (next(), next(), next(), next(), next());
                gin = Some((w1, b1, w2, b2));
                let neigh = tape.spmm(&view.agg, input)?;
                let one = tape.constant(Matrix::scalar(1.0));
                let factor = tape.add(one, eps)?;
                let own = tape.scale_by(factor, input)?;
                tape.add(neigh, own)?
            }
            Arch::Sgc => tape.spmm(&view.agg, h)?,
        };
        if let Some(hook) = hook {
            let b = buffer::buffer_forward(tape, hook.variant, &hidden[..l], view, hook.weights[l - 1], opts.buffer_dropout, rng)?;
            agg = tape.add(agg, b)?;
        }
        aggregates.push(agg);
        let out = match config.arch {
            Arch::Mlp | Arch::Gcn | Arch::Sage => {
                let b = next();
                let z = tape.add_row_bias(agg, b)?;
                if last { z } else { tape.activation(z, config.activation) }
            }
            Arch::Gin => {
                let (w1, b1, w2, b2) = gin.expect("set above");
                let z1 = tape.matmul(agg, w1)?;
                let z1 = tape.add_row_bias(z1, b1)?;
                let a1 = tape.activation(z1, ActivationKind::Relu);
                let z2 = tape.matmul(a1, w2)?;
                let z = tape.add_row_bias(z2, b2)?;
                if last { z } else { tape.activation(z, config.activation) }
            }
            Arch::Sgc => agg,
        };
        hidden.push(out);
    }

    let logits = if config.arch == Arch::Sgc {
        let (w, b) = (next(), next());
        let input = tape.dropout(hidden[big_l], opts.base_dropout, rng)?;
        let z = tape.matmul(input, w)?;
        tape.add_row_bias(z, b)?
    } else {
        hidden[big_l]
    };
    let log_probs = tape.log_softmax_rows(logits)?;
    Ok(ForwardTrace { hidden, aggregates, logits, log_probs })
}

/// Forward pass of a base model; binds its parameters on `tape`.
pub fn forward<R: Rng + ?Sized>(
    params: &ModelParams,
    tape: &mut Tape,
    x: &Matrix,
    view: &GraphView,
    mode: Mode,
    rng: &mut R,
) -> Result<(ForwardTrace, Vec<Var>)> {
    let vars = params.bind(tape);
    let xv = tape.constant(x.clone());
    let trace = forward_bound(&params.config, &vars, tape, xv, view, ForwardOptions::for_mode(&params.config, mode), rng, None)?;
    Ok((trace, vars))
}

/// Eval-mode log-probabilities.
pub fn predict(params: &ModelParams, x: &Matrix, view: &GraphView) -> Result<Matrix> {
    let mut tape = Tape::new();
    let mut frozen = params.clone();
    frozen.frozen = true;
    let (trace, _) = forward(&frozen, &mut tape, x, view, Mode::Eval, &mut seeded(0))?;
    Ok(tape.value(trace.log_probs).clone())
}
