//! Discrepancy bounds as executable checks.
//!
//! A single layer maps `(H, Â)` to `σ(…)`; the bound says
//! `‖f(H₁, Â₁) − f(H₂, Â₂)‖₂ ≤ C1 ‖H₁ − H₂‖₂ + C2` whenever `‖H₂‖₂ ≤ |V|`.
//! Verification uses exact dense norms from a Jacobi eigensolver, so
//! graphs are capped in size.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::{buffer_forward, BufferVariant};
use crate::error::{Error, Result};
use crate::graph::{drop_edges, normalize_or_zero, EdgeMask, Graph, NormKind, NormScheme};
use crate::models::{forward, Arch, GraphView, Mode, ModelConfig, ModelParams};
use crate::rng::{derive_seed, derived, seeded};
use crate::tensor::{ActivationKind, Matrix, Tape};

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Largest graph accepted by the Monte-Carlo checks.
pub const MAX_VERIFY_NODES: usize = 256;
/// Tolerance added to the right-hand side of every inequality check.
pub const SLACK: f64 = 1e-9;

pub fn lipschitz_constant(kind: ActivationKind) -> f64 {
    match kind {
        ActivationKind::Relu => 1.0,
        ActivationKind::Sigmoid => 0.25,
        ActivationKind::Gelu => 1.13,
        ActivationKind::Tanh | ActivationKind::Elu => 1.0,
    }
}

/// Eigenvalues and eigenvectors (columns) of a symmetric matrix by cyclic
/// Jacobi rotations.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::dim("symmetric_eigen", format!("{:?} is not square", m.shape())));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("symmetric_eigen"));
    }
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a.get(i, j).powi(2)).sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Ok(((0..n).map(|i| a.get(i, i)).collect(), v))
}

/// `‖M‖₂` from the eigenvalues of the smaller Gram matrix.
pub fn exact_spectral_norm(m: &Matrix) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let t = m.transpose();
    let gram = if m.rows() >= m.cols() { t.matmul(m)? } else { m.matmul(&t)? };
    let (values, _) = symmetric_eigen(&gram)?;
    Ok(values.into_iter().fold(0.0, f64::max).sqrt())
}

/// `‖M‖₂` by power iteration on `MᵀM`, stopping once successive estimates
/// differ by less than `tol` relative.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if !m.is_finite() {
        return Err(Error::NonFinite("spectral_norm"));
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    let mut rng = seeded(0x5eed);
    let mut v = Matrix::from_fn(m.cols(), 1, |_, _| normal(&mut rng));
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let norm = v.frobenius_norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = v.scale(1.0 / norm);
        let mv = m.matmul(&v)?;
        let next = mv.frobenius_norm();
        if next == 0.0 || (next - estimate).abs() <= tol * next {
            return Ok(next);
        }
        estimate = next;
        v = m.transpose().matmul(&mv)?;
    }
    Err(Error::Convergence { iterations: max_iter, estimate })
}

/// `L_σ^k · Π ‖W‖₂` for a cascade of `k` layers `σ(HW + b)`.
pub fn mlp_cascade_bound(weights: &[&Matrix], activation: ActivationKind) -> Result<f64> {
    let mut c = lipschitz_constant(activation).powi(weights.len() as i32);
    for w in weights {
        c *= exact_spectral_norm(w)?;
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundArch {
    Mlp,
    Gcn(NormScheme),
    Sage,
    Gin,
}

impl BoundArch {
    pub fn tag(self) -> String {
        match self {
            Self::Mlp => "mlp".into(),
            Self::Gcn(s) => format!("gcn-{}", s.kind),
            Self::Sage => "sage".into(),
            Self::Gin => "gin".into(),
        }
    }

    /// Aggregation matrix used by this layer on `g`.
    pub fn adjacency(self, g: &Graph) -> Matrix {
        let scheme = match self {
            Self::Mlp => return Matrix::identity(g.num_nodes()),
            Self::Gcn(s) => s,
            Self::Sage => NormScheme::new(NormKind::RandomWalk, false),
            Self::Gin => NormScheme::raw(),
        };
        normalize_or_zero(g, scheme).to_dense()
    }
}

/// Weights of one layer in analysis form.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerWeights {
    /// `σ(HW + b)` or `σ(ÂHW + b)`
    Linear { w: Matrix, b: Matrix },
    /// `σ(ÂHW₁ + HW₂ + b)`
    Sage { w_neigh: Matrix, w_self: Matrix, b: Matrix },
    /// `σ(ReLU((AH + (1+ε)H)W₁ + b₁)W₂ + b₂)`
    Gin { w1: Matrix, b1: Matrix, w2: Matrix, b2: Matrix, eps: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundLayer {
    pub arch: BoundArch,
    pub weights: LayerWeights,
    pub activation: ActivationKind,
}

impl BoundLayer {
    /// Layer `l` (1-based) of a model, in analysis form.
    pub fn from_params(params: &ModelParams, l: usize) -> Result<Self> {
        let cfg = &params.config;
        if l == 0 || l > cfg.layers {
            return Err(Error::Config(format!("layer {l} outside 1..={}", cfg.layers)));
        }
        let get = |name: &str| {
            params.get(&format!("l{l}.{name}")).cloned().ok_or_else(|| Error::Config(format!("missing tensor l{l}.{name}")))
        };
        let (arch, weights) = match cfg.arch {
            Arch::Mlp => (BoundArch::Mlp, LayerWeights::Linear { w: get("weight")?, b: get("bias")? }),
            Arch::Gcn => (BoundArch::Gcn(cfg.norm), LayerWeights::Linear { w: get("weight")?, b: get("bias")? }),
            Arch::Sage => (
                BoundArch::Sage,
                LayerWeights::Sage { w_neigh: get("weight_neigh")?, w_self: get("weight_self")?, b: get("bias")? },
            ),
            Arch::Gin => (
                BoundArch::Gin,
                LayerWeights::Gin {
                    w1: get("mlp1.weight")?,
                    b1: get("mlp1.bias")?,
                    w2: get("mlp2.weight")?,
                    b2: get("mlp2.bias")?,
                    eps: get("eps")?.item()?,
                },
            ),
            Arch::Sgc => return Err(Error::Unsupported("bounds for SGC propagation steps".into())),
        };
        Ok(Self { arch, weights, activation: cfg.activation })
    }

    /// Random layer with Gaussian weights of the given scale.
    pub fn random<R: Rng + ?Sized>(arch: BoundArch, d_in: usize, d_out: usize, activation: ActivationKind, scale: f64, rng: &mut R) -> Self {
        let mut gauss = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| scale * normal(&mut *rng));
        let weights = match arch {
            BoundArch::Mlp | BoundArch::Gcn(_) => LayerWeights::Linear { w: gauss(d_in, d_out), b: gauss(1, d_out) },
            BoundArch::Sage => LayerWeights::Sage { w_neigh: gauss(d_in, d_out), w_self: gauss(d_in, d_out), b: gauss(1, d_out) },
            BoundArch::Gin => {
                let eps = gauss(1, 1).item().unwrap_or(0.0);
                LayerWeights::Gin { w1: gauss(d_in, d_out), b1: gauss(1, d_out), w2: gauss(d_out, d_out), b2: gauss(1, d_out), eps }
            }
        };
        Self { arch, weights, activation }
    }

    pub fn input_dim(&self) -> usize {
        match &self.weights {
            LayerWeights::Linear { w, .. } => w.rows(),
            LayerWeights::Sage { w_neigh, .. } => w_neigh.rows(),
            LayerWeights::Gin { w1, .. } => w1.rows(),
        }
    }

    pub fn is_zero(&self) -> bool {
        let zero = |m: &Matrix| m.data().iter().all(|&v| v == 0.0);
        match &self.weights {
            LayerWeights::Linear { w, .. } => zero(w),
            LayerWeights::Sage { w_neigh, w_self, .. } => zero(w_neigh) && zero(w_self),
            LayerWeights::Gin { w1, w2, .. } => zero(w1) || zero(w2),
        }
    }

    /// Dense evaluation of the layer for representations `h` and aggregation
    /// matrix `a` (ignored by the MLP).
    pub fn apply(&self, h: &Matrix, a: &Matrix) -> Result<Matrix> {
        let act = |m: Matrix, k: ActivationKind| m.map(|v| k.apply(v));
        let bias = |m: Matrix, b: &Matrix| -> Result<Matrix> {
            let rows = Matrix::from_fn(m.rows(), b.cols(), |_, j| b.get(0, j));
            m.add(&rows)
        };
        let z = match (&self.weights, self.arch) {
            (LayerWeights::Linear { w, b }, BoundArch::Mlp) => bias(h.matmul(w)?, b)?,
            (LayerWeights::Linear { w, b }, _) => bias(a.matmul(h)?.matmul(w)?, b)?,
            (LayerWeights::Sage { w_neigh, w_self, b }, _) => bias(a.matmul(h)?.matmul(w_neigh)?.add(&h.matmul(w_self)?)?, b)?,
            (LayerWeights::Gin { w1, b1, w2, b2, eps }, _) => {
                let agg = a.matmul(h)?.add(&h.scale(1.0 + eps))?;
                let hidden = act(bias(agg.matmul(w1)?, b1)?, ActivationKind::Relu);
                bias(hidden.matmul(w2)?, b2)?
            }
        };
        Ok(act(z, self.activation))
    }

    /// `(C1, C2)` for aggregation matrices `a1` (clean) and `a2` (perturbed).
    ///
    /// Normalised GCN and SAGE use `max(1, ‖Â₁‖₂)` where the textbook form
    /// assumes `‖Â₁‖₂ = 1`; random-walk matrices can exceed that.
    pub fn bound(&self, a1: &Matrix, a2: &Matrix, num_nodes: usize) -> Result<(f64, f64)> {
        let norms = self.weight_norms()?;
        Ok(self.constants(norms, exact_spectral_norm(a1)?, exact_spectral_norm(&a1.sub(a2)?)?, num_nodes))
    }

    /// Spectral norms of the (first, second) weight matrices.
    fn weight_norms(&self) -> Result<(f64, f64)> {
        Ok(match &self.weights {
            LayerWeights::Linear { w, .. } => (exact_spectral_norm(w)?, 0.0),
            LayerWeights::Sage { w_neigh, w_self, .. } => (exact_spectral_norm(w_neigh)?, exact_spectral_norm(w_self)?),
            LayerWeights::Gin { w1, w2, .. } => (exact_spectral_norm(w1)?, exact_spectral_norm(w2)?),
        })
    }

    fn constants(&self, (w1, w2): (f64, f64), a1: f64, diff: f64, num_nodes: usize) -> (f64, f64) {
        let l = lipschitz_constant(self.activation);
        let n = num_nodes as f64;
        match (&self.weights, self.arch) {
            (LayerWeights::Linear { .. }, BoundArch::Gcn(s)) if s.kind == NormKind::Regular => (l * a1 * w1, l * n * w1 * diff),
            (LayerWeights::Linear { .. }, BoundArch::Gcn(_)) => (l * a1.max(1.0) * w1, l * n * w1 * diff),
            (LayerWeights::Linear { .. }, _) => (l * w1, 0.0),
            (LayerWeights::Sage { .. }, _) => (l * (a1.max(1.0) * w1 + w2), l * n * w1 * diff),
            (LayerWeights::Gin { eps, .. }, _) => {
                let c = l * lipschitz_constant(ActivationKind::Relu) * w1 * w2;
                (c * (a1 + (1.0 + eps).abs()), c * n * diff)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub arch: String,
    pub layer: usize,
    pub c1: f64,
    /// Largest `C2` over the sampled masks.
    pub c2: f64,
    pub trials: usize,
    pub max_ratio: f64,
    pub violations: usize,
}

impl BoundReport {
    fn merge(arch: String, layer: usize, c1: f64, outcomes: &[(f64, f64, f64)]) -> Self {
        let mut report = BoundReport { arch, layer, c1, c2: 0.0, trials: outcomes.len(), max_ratio: 0.0, violations: 0 };
        for &(lhs, rhs, c2) in outcomes {
            report.c2 = report.c2.max(c2);
            if rhs > 0.0 {
                report.max_ratio = report.max_ratio.max(lhs / rhs);
            }
            report.violations += usize::from(lhs > rhs + SLACK);
        }
        report
    }
}

/// Gaussian matrix rescaled so that `‖H‖₂ ≤ bound`.
fn sample_representation<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Result<Matrix> {
    let scale: f64 = rng.random_range(0.1..3.0);
    let h = Matrix::from_fn(rows, cols, |_, _| scale * normal(&mut *rng));
    let norm = exact_spectral_norm(&h)?;
    Ok(if norm > bound { h.scale(bound / norm) } else { h })
}

/// Monte-Carlo check of a layer's discrepancy bound under DropEdge.
///
/// Trial `t` draws its representations and mask from the generator derived
/// from `(seed, t)`. `H₂` is kept within `‖H₂‖₂ ≤ |V|`; `H₁ = H₂` on a
/// random quarter of the trials.
pub fn verify_bound(layer: &BoundLayer, graph: &Graph, p: f64, trials: usize, seed: u64) -> Result<BoundReport> {
    let n = graph.num_nodes();
    if n > MAX_VERIFY_NODES {
        return Err(Error::Config(format!("bound verification is capped at {MAX_VERIFY_NODES} nodes, got {n}")));
    }
    let a1 = layer.arch.adjacency(graph);
    let norms = layer.weight_norms()?;
    let a1_norm = exact_spectral_norm(&a1)?;
    let (c1, _) = layer.constants(norms, a1_norm, 0.0, n);
    let d = layer.input_dim();
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = derived(seed, t as u64);
            let (_, dropped) = drop_edges(graph, p, &mut rng)?;
            let a2 = layer.arch.adjacency(&dropped);
            let (_, c2) = layer.constants(norms, a1_norm, exact_spectral_norm(&a1.sub(&a2)?)?, n);
            let h2 = sample_representation(n, d, n as f64, &mut rng)?;
            let h1 = if rng.random::<f64>() < 0.25 {
                h2.clone()
            } else {
                let delta = sample_representation(n, d, n as f64, &mut rng)?;
                h2.add(&delta.scale(rng.random_range(0.0..1.0)))?
            };
            let lhs = exact_spectral_norm(&layer.apply(&h1, &a1)?.sub(&layer.apply(&h2, &a2)?)?)?;
            let rhs = c1 * exact_spectral_norm(&h1.sub(&h2)?)? + c2;
            Ok((lhs, rhs, c2))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport::merge(layer.arch.tag(), 1, c1, &outcomes))
}

/// Monte-Carlo check of the MLP cascade bound from the input of `layers[0]`
/// to the output of the last layer.
pub fn verify_mlp_cascade(layers: &[BoundLayer], num_nodes: usize, trials: usize, seed: u64) -> Result<BoundReport> {
    let first = layers.first().ok_or_else(|| Error::Config("empty MLP cascade".into()))?;
    let activation = first.activation;
    let mut weights = Vec::with_capacity(layers.len());
    for l in layers {
        match (&l.weights, l.arch) {
            (LayerWeights::Linear { w, .. }, BoundArch::Mlp) if l.activation == activation => weights.push(w),
            _ => return Err(Error::Contract("MLP cascade needs linear MLP layers sharing one activation".into())),
        }
    }
    let c = mlp_cascade_bound(&weights, activation)?;
    let unused = Matrix::zeros(0, 0);
    let run = |h: &Matrix| -> Result<Matrix> {
        let mut h = h.clone();
        for l in layers {
            h = l.apply(&h, &unused)?;
        }
        Ok(h)
    };
    let d = first.input_dim();
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = derived(seed, t as u64);
            let h1 = sample_representation(num_nodes, d, f64::INFINITY, &mut rng)?;
            let h2 = sample_representation(num_nodes, d, f64::INFINITY, &mut rng)?;
            let h2 = h1.add(&h2.sub(&h1)?.scale(rng.random_range(0.0..1.0)))?;
            let lhs = exact_spectral_norm(&run(&h1)?.sub(&run(&h2)?)?)?;
            let rhs = c * exact_spectral_norm(&h1.sub(&h2)?)?;
            Ok((lhs, rhs, 0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport::merge("mlp-cascade".into(), layers.len(), c, &outcomes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub attempts: usize,
    /// Edges dropped from the clean graph.
    pub dropped_edges: Vec<(usize, usize)>,
    pub input_discrepancy: f64,
    pub output_discrepancy: f64,
}

/// Searches for identical inputs `H₁ = H₂` whose layer outputs differ under
/// a DropEdge perturbation, so no input-independent constant can bound the
/// output discrepancy by the input discrepancy alone.
pub fn find_witness(layer: &BoundLayer, graph: &Graph, max_attempts: usize, seed: u64) -> Result<Witness> {
    if graph.num_edges() == 0 {
        return Err(Error::SearchExhausted { attempts: 0 });
    }
    let n = graph.num_nodes();
    let a1 = layer.arch.adjacency(graph);
    for attempt in 1..=max_attempts {
        let mut rng = derived(seed, attempt as u64);
        let (mut mask, _) = drop_edges(graph, 0.5, &mut rng)?;
        if mask.kept() == graph.num_edges() {
            let e = rng.random_range(0..graph.num_edges());
            mask.keep[e] = false;
        }
        let a2 = layer.arch.adjacency(&graph.masked(&mask)?);
        let h = sample_representation(n, layer.input_dim(), n as f64, &mut rng)?;
        let out = exact_spectral_norm(&layer.apply(&h, &a1)?.sub(&layer.apply(&h, &a2)?)?)?;
        if out > 1e-6 {
            let dropped_edges = graph.edges().iter().zip(&mask.keep).filter(|(_, &k)| !k).map(|(&e, _)| e).collect();
            return Ok(Witness { attempts: attempt, dropped_edges, input_discrepancy: 0.0, output_discrepancy: out });
        }
    }
    Err(Error::SearchExhausted { attempts: max_attempts })
}

/// One evaluation of a buffer block under a clean and a perturbed graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionTrial {
    /// Outputs differ somewhere (edge awareness).
    pub differs: bool,
    pub clean_norm: f64,
    pub dropped_norm: f64,
}

impl ConditionTrial {
    /// Strictly smaller Frobenius norm on the clean graph.
    pub fn stable(&self) -> bool {
        self.clean_norm < self.dropped_norm
    }
}

/// Evaluates `AGG_B` on `graph` and on its masked subgraph.
pub fn buffer_condition_trial(variant: BufferVariant, graph: &Graph, mask: &EdgeMask, prefix: &[Matrix], w: &Matrix) -> Result<ConditionTrial> {
    let dropped = graph.masked(mask)?;
    let d0 = prefix.first().map_or(1, Matrix::cols);
    let cfg = ModelConfig::new(Arch::Gcn, d0, 1, w.cols(), 1);
    let eval = |g: &Graph| -> Result<Matrix> {
        let view = GraphView::new(g, &cfg);
        let mut tape = Tape::new();
        let vars: Vec<_> = prefix.iter().map(|h| tape.constant(h.clone())).collect();
        let wv = tape.constant(w.clone());
        let out = buffer_forward(&mut tape, variant, &vars, &view, wv, 0.0, &mut seeded(0))?;
        Ok(tape.value(out).clone())
    };
    let (clean, perturbed) = (eval(graph)?, eval(&dropped)?);
    Ok(ConditionTrial {
        differs: clean != perturbed,
        clean_norm: clean.frobenius_norm(),
        dropped_norm: perturbed.frobenius_norm(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub variant: BufferVariant,
    pub trials: usize,
    /// Trials meeting the preconditions (non-zero weights, a dropped edge).
    pub qualified: usize,
    pub c1_failures: usize,
    pub c2_failures: usize,
}

/// Random trials of the edge-awareness and stability conditions.
///
/// Each trial draws a connected-ish random graph, a prefix of one to three
/// representation matrices, non-zero Gaussian buffer weights and a DropEdge
/// mask that removes at least one edge.
pub fn check_buffer_conditions(variant: BufferVariant, trials: usize, seed: u64) -> Result<ConditionReport> {
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = derived(seed, t as u64);
            let n = rng.random_range(3..=24);
            let p_edge = rng.random_range(0.15..0.6);
            let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
            for u in 0..n {
                for v in (u + 1)..n {
                    if rng.random::<f64>() < p_edge {
                        edges.push((u, v));
                    }
                }
            }
            let graph = Graph::from_edges(n, edges)?;
            let depth = rng.random_range(1..=3);
            let prefix: Vec<Matrix> = (0..depth)
                .map(|_| {
                    let d = rng.random_range(1..=5);
                    Matrix::from_fn(n, d, |_, _| normal(&mut rng))
                })
                .collect();
            let d_in = if variant.concatenates() { prefix.iter().map(Matrix::cols).sum() } else { prefix[depth - 1].cols() };
            let w = Matrix::from_fn(d_in, rng.random_range(1..=4), |_, _| normal(&mut rng));
            let (mut mask, _) = drop_edges(&graph, rng.random_range(0.1..0.9), &mut rng)?;
            if mask.kept() == graph.num_edges() {
                let e = rng.random_range(0..graph.num_edges());
                mask.keep[e] = false;
            }
            let qualified = w.data().iter().any(|&v| v != 0.0);
            Ok((qualified, buffer_condition_trial(variant, &graph, &mask, &prefix, &w)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = ConditionReport { variant, trials, qualified: 0, c1_failures: 0, c2_failures: 0 };
    for (qualified, trial) in outcomes {
        if !qualified {
            continue;
        }
        report.qualified += 1;
        report.c1_failures += usize::from(!trial.differs);
        report.c2_failures += usize::from(!trial.stable());
    }
    Ok(report)
}

/// `‖H₁^(l) − H₂^(l)‖₂` for `l = 0..=L` between eval-mode forwards on two
/// graphs.
pub fn empirical_discrepancy(params: &ModelParams, x: &Matrix, g1: &Graph, g2: &Graph) -> Result<Vec<f64>> {
    let trace = |g: &Graph| -> Result<Vec<Matrix>> {
        let mut tape = Tape::new();
        let mut frozen = params.clone();
        frozen.frozen = true;
        let (t, _) = forward(&frozen, &mut tape, x, &GraphView::new(g, &params.config), Mode::Eval, &mut seeded(0))?;
        Ok(t.hidden.iter().map(|&v| tape.value(v).clone()).collect())
    };
    let (t1, t2) = (trace(g1)?, trace(g2)?);
    t1.iter().zip(&t2).map(|(a, b)| exact_spectral_norm(&a.sub(b)?)).collect()
}

/// Random graph on `n` nodes with edge probability `p`. With `connected`, a
/// random spanning tree is added first.
pub fn random_graph<R: Rng + ?Sized>(n: usize, p: f64, connected: bool, rng: &mut R) -> Result<Graph> {
    let mut edges = Vec::new();
    if connected {
        edges.extend((1..n).map(|v| (rng.random_range(0..v), v)));
    }
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, edges)
}

impl BoundReport {
    /// Pools reports of one architecture family: counts add up, constants
    /// and ratios take the maximum.
    pub fn combine(arch: String, reports: &[BoundReport]) -> Self {
        let mut out = BoundReport { arch, layer: 0, c1: 0.0, c2: 0.0, trials: 0, max_ratio: 0.0, violations: 0 };
        for r in reports {
            out.layer = out.layer.max(r.layer);
            out.c1 = out.c1.max(r.c1);
            out.c2 = out.c2.max(r.c2);
            out.trials += r.trials;
            out.max_ratio = out.max_ratio.max(r.max_ratio);
            out.violations += r.violations;
        }
        out
    }
}

/// Sizes of the randomized analysis suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    /// Trials per bound family.
    pub trials: usize,
    /// Distinct random instances the trials are spread over.
    pub instances: usize,
    pub max_nodes: usize,
    pub drop_edge: f64,
    pub witness_instances: usize,
    pub witness_attempts: usize,
    pub condition_trials: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            instances: 20,
            max_nodes: 64,
            drop_edge: 0.5,
            witness_instances: 50,
            witness_attempts: 100,
            condition_trials: 1000,
            seed: 0,
        }
    }
}

impl SuiteOptions {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || self.trials < self.instances {
            return Err(Error::Config(format!("need 0 < instances <= trials, got {} / {}", self.instances, self.trials)));
        }
        if self.max_nodes < 2 || self.max_nodes > MAX_VERIFY_NODES {
            return Err(Error::Config(format!("max_nodes must lie in 2..={MAX_VERIFY_NODES}")));
        }
        if !(0.0..=1.0).contains(&self.drop_edge) {
            return Err(Error::InvalidRate { what: "drop_edge", rate: self.drop_edge });
        }
        Ok(())
    }

    fn per_instance(&self, i: usize) -> usize {
        self.trials / self.instances + usize::from(i < self.trials % self.instances)
    }
}

/// Bound families covered by [`bound_suite`], with the tag used in reports.
pub fn bound_families() -> Vec<(String, Option<BoundArch>)> {
    vec![
        ("mlp-cascade-relu".into(), None),
        ("mlp-cascade-sigmoid".into(), None),
        ("gcn-sym".into(), Some(BoundArch::Gcn(NormScheme::new(NormKind::Symmetric, true)))),
        ("gcn-rw".into(), Some(BoundArch::Gcn(NormScheme::new(NormKind::RandomWalk, true)))),
        ("gcn-regular".into(), Some(BoundArch::Gcn(NormScheme::raw()))),
        ("sage".into(), Some(BoundArch::Sage)),
        ("gin".into(), Some(BoundArch::Gin)),
    ]
}

fn random_arch<R: Rng + ?Sized>(arch: BoundArch, rng: &mut R) -> BoundArch {
    match arch {
        // self-loops are toggled so isolated rows are exercised as well
        BoundArch::Gcn(s) if s.kind != NormKind::Regular => BoundArch::Gcn(NormScheme::new(s.kind, rng.random())),
        other => other,
    }
}

/// One pooled report per bound family.
///
/// MLP families draw cascades of one to four layers; graph families draw a
/// random graph of at most `max_nodes` nodes, a random activation and
/// Gaussian weights per instance.
pub fn bound_suite(opts: &SuiteOptions) -> Result<Vec<BoundReport>> {
    opts.validate()?;
    let mut out = Vec::new();
    for (f, (tag, arch)) in bound_families().into_iter().enumerate() {
        let mut reports = Vec::with_capacity(opts.instances);
        for i in 0..opts.instances {
            let seed = derive_seed(derive_seed(opts.seed, f as u64), i as u64);
            let mut rng = seeded(seed);
            let trials = opts.per_instance(i);
            let report = match arch {
                None => {
                    let activation = if tag.ends_with("relu") { ActivationKind::Relu } else { ActivationKind::Sigmoid };
                    let depth = rng.random_range(1..=4);
                    let mut dims = vec![rng.random_range(1..=6)];
                    let mut layers = Vec::with_capacity(depth);
                    for _ in 0..depth {
                        let d_out = rng.random_range(1..=6);
                        let scale = rng.random_range(0.1..2.0);
                        layers.push(BoundLayer::random(BoundArch::Mlp, *dims.last().unwrap(), d_out, activation, scale, &mut rng));
                        dims.push(d_out);
                    }
                    let n = rng.random_range(1..=opts.max_nodes);
                    verify_mlp_cascade(&layers, n, trials, seed)?
                }
                Some(arch) => {
                    let n = rng.random_range(2..=opts.max_nodes);
                    let graph = random_graph(n, rng.random_range(0.02..0.4), false, &mut rng)?;
                    let activation = ActivationKind::ALL[rng.random_range(0..ActivationKind::ALL.len())];
                    let (d_in, d_out) = (rng.random_range(1..=6), rng.random_range(1..=6));
                    let scale = rng.random_range(0.1..2.0);
                    let layer = BoundLayer::random(random_arch(arch, &mut rng), d_in, d_out, activation, scale, &mut rng);
                    verify_bound(&layer, &graph, opts.drop_edge, trials, seed)?
                }
            };
            reports.push(report);
        }
        out.push(BoundReport::combine(tag, &reports));
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WitnessSummary {
    pub instances: usize,
    pub found: usize,
    /// Most attempts any successful search needed.
    pub max_attempts_used: usize,
    /// Instances whose search was exhausted.
    pub exhausted: Vec<usize>,
}

/// Runs the witness search on random GCN layers with non-zero weights over
/// random connected graphs.
pub fn witness_suite(opts: &SuiteOptions) -> Result<WitnessSummary> {
    opts.validate()?;
    let schemes = [NormScheme::symmetric(), NormScheme::random_walk(), NormScheme::raw()];
    let outcomes = (0..opts.witness_instances)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(derive_seed(opts.seed, 0x77), i as u64);
            let mut rng = seeded(seed);
            let n = rng.random_range(3..=opts.max_nodes);
            let graph = random_graph(n, rng.random_range(0.02..0.3), true, &mut rng)?;
            let arch = BoundArch::Gcn(schemes[i % schemes.len()]);
            let layer = BoundLayer::random(arch, rng.random_range(1..=6), rng.random_range(1..=6), ActivationKind::Relu, 1.0, &mut rng);
            match find_witness(&layer, &graph, opts.witness_attempts, seed) {
                Ok(w) => Ok(Some(w.attempts)),
                Err(Error::SearchExhausted { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = WitnessSummary { instances: outcomes.len(), ..Default::default() };
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Some(a) => {
                summary.found += 1;
                summary.max_attempts_used = summary.max_attempts_used.max(a);
            }
            None => summary.exhausted.push(i),
        }
    }
    Ok(summary)
}

/// Buffer-condition reports for every variant.
pub fn condition_suite(opts: &SuiteOptions) -> Result<Vec<ConditionReport>> {
    BufferVariant::ALL
        .iter()
        .enumerate()
        .map(|(k, &v)| check_buffer_conditions(v, opts.condition_trials, derive_seed(derive_seed(opts.seed, 0xc0), k as u64)))
        .collect()
}

/// Analysis of a trained model: its layers' bounds on an induced subgraph
/// of the data graph and the layer-wise discrepancy under one DropEdge draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelAnalysis {
    pub subgraph_nodes: usize,
    pub layer_bounds: Vec<BoundReport>,
    pub drop_edge: f64,
    pub discrepancy: Vec<f64>,
}

pub fn analyze_model(params: &ModelParams, x: &Matrix, graph: &Graph, opts: &SuiteOptions) -> Result<ModelAnalysis> {
    opts.validate()?;
    let k = graph.num_nodes().min(opts.max_nodes);
    let sub = Graph::from_edges(k, graph.edges().iter().copied().filter(|&(u, v)| u < k && v < k))?;
    let mut layer_bounds = Vec::new();
    if params.config.arch != Arch::Sgc {
        for l in 1..=params.config.layers {
            let layer = BoundLayer::from_params(params, l)?;
            let mut report = verify_bound(&layer, &sub, opts.drop_edge, opts.trials, derive_seed(opts.seed, l as u64))?;
            report.layer = l;
            layer_bounds.push(report);
        }
    }
    let (_, dropped) = drop_edges(graph, opts.drop_edge, &mut derived(opts.seed, 0xd15c))?;
    Ok(ModelAnalysis { subgraph_nodes: k, layer_bounds, drop_edge: opts.drop_edge, discrepancy: empirical_discrepancy(params, x, graph, &dropped)? })
}

/// Everything the `analyze` command reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub options: SuiteOptions,
    pub bounds: Vec<BoundReport>,
    pub witness: WitnessSummary,
    pub buffer_conditions: Vec<ConditionReport>,
    pub model: Option<ModelAnalysis>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(k: usize) -> Graph {
        Graph::from_edges(k + 1, (1..=k).map(|i| (0, i))).unwrap()
    }

    #[test]
    fn lipschitz_values() {
        assert_eq!(lipschitz_constant(ActivationKind::Relu), 1.0);
        assert_eq!(lipschitz_constant(ActivationKind::Sigmoid), 0.25);
        assert_eq!(lipschitz_constant(ActivationKind::Gelu), 1.13);
        // every constant dominates a fine grid of derivative magnitudes
        for kind in ActivationKind::ALL {
            let sup = (-4000..=4000).map(|i| kind.derivative(i as f64 * 0.002).abs()).fold(0.0, f64::max);
            assert!(sup <= lipschitz_constant(kind) + 1e-12, "{kind}: {sup}");
        }
    }

    #[test]
    fn jacobi_residuals() {
        let mut rng = seeded(4);
        let b = Matrix::from_fn(7, 7, |_, _| normal(&mut rng));
        let s = b.add(&b.transpose()).unwrap();
        let (vals, vecs) = symmetric_eigen(&s).unwrap();
        let lambda = Matrix::from_fn(7, 7, |i, j| if i == j { vals[i] } else { 0.0 });
        let recon = vecs.matmul(&lambda).unwrap().matmul(&vecs.transpose()).unwrap();
        assert!(recon.max_abs_diff(&s).unwrap() < 1e-12);
        let orth = vecs.transpose().matmul(&vecs).unwrap();
        assert!(orth.max_abs_diff(&Matrix::identity(7)).unwrap() < 1e-12);
    }

    #[test]
    fn spectral_norm_simple() {
        assert!((spectral_norm(&Matrix::identity(4), 1e-12, 1000).unwrap() - 1.0).abs() < 1e-12);
        let d = Matrix::from_rows(&[[3.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!((spectral_norm(&d, 1e-14, 1000).unwrap() - 3.0).abs() < 1e-10);
        assert_eq!(exact_spectral_norm(&d).unwrap(), 3.0);
        assert_eq!(spectral_norm(&Matrix::zeros(3, 3), 1e-12, 10).unwrap(), 0.0);
        assert!(matches!(spectral_norm(&Matrix::from_fn(6, 6, |i, j| (i * j) as f64 + 1.0), 0.0, 1), Err(Error::Convergence { .. })));
    }

    #[test]
    fn random_walk_norm_exceeds_one_on_a_star() {
        let a = normalize_or_zero(&star(9), NormScheme::new(NormKind::RandomWalk, false)).to_dense();
        let norm = exact_spectral_norm(&a).unwrap();
        // rows of the leaves are e_0, so the first column has norm 3
        assert!((norm - 3.0).abs() < 1e-12, "{norm}");
        let sym = normalize_or_zero(&star(9), NormScheme::symmetric()).to_dense();
        assert!((exact_spectral_norm(&sym).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_random_walk_constant_fails_on_a_star() {
        // With ‖D⁻¹A‖₂ = 3, a C1 of L_σ‖W‖₂ is violated by identical
        // graphs and inputs along the top right singular vector.
        let g = star(9);
        let a = normalize_or_zero(&g, NormScheme::new(NormKind::RandomWalk, false)).to_dense();
        let layer = BoundLayer {
            arch: BoundArch::Gcn(NormScheme::new(NormKind::RandomWalk, false)),
            weights: LayerWeights::Linear { w: Matrix::identity(1), b: Matrix::zeros(1, 1) },
            activation: ActivationKind::Tanh,
        };
        let delta = Matrix::from_fn(10, 1, |i, _| if i == 0 { 1e-3 } else { 0.0 });
        let lhs = exact_spectral_norm(&layer.apply(&delta, &a).unwrap().sub(&layer.apply(&Matrix::zeros(10, 1), &a).unwrap()).unwrap()).unwrap();
        assert!(lhs > 1.0 * 1e-3 * 2.9);
        let (c1, c2) = layer.bound(&a, &a, 10).unwrap();
        assert_eq!(c2, 0.0);
        assert!(lhs <= c1 * 1e-3 + SLACK);
    }

    #[test]
    fn two_node_bound() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let arch = BoundArch::Gcn(NormScheme::symmetric());
        let w = Matrix::from_rows(&[[2.0, 0.0], [0.0, 0.5]]).unwrap();
        let layer = BoundLayer { arch, weights: LayerWeights::Linear { w, b: Matrix::zeros(1, 2) }, activation: ActivationKind::Relu };
        let (a1, a2) = (arch.adjacency(&g), arch.adjacency(&Graph::empty(2)));
        assert!((exact_spectral_norm(&a1.sub(&a2).unwrap()).unwrap() - 1.0).abs() < 1e-12);
        let (c1, c2) = layer.bound(&a1, &a2, 2).unwrap();
        assert!((c1 - 2.0).abs() < 1e-12);
        assert!((c2 - 2.0 * 2.0).abs() < 1e-12);
        assert_eq!(layer.bound(&a1, &a1, 2).unwrap().1, 0.0);
    }

    #[test]
    fn gin_bound_substitution() {
        let mut rng = seeded(2);
        let mut layer = BoundLayer::random(BoundArch::Gin, 3, 3, ActivationKind::Relu, 1.0, &mut rng);
        if let LayerWeights::Gin { eps, .. } = &mut layer.weights {
            *eps = 0.0;
        }
        let g = star(4);
        let a = BoundArch::Gin.adjacency(&g);
        let LayerWeights::Gin { w1, w2, .. } = &layer.weights else { unreachable!() };
        let c = exact_spectral_norm(w1).unwrap() * exact_spectral_norm(w2).unwrap();
        let (c1, _) = layer.bound(&a, &a, 5).unwrap();
        assert!((c1 - c * (exact_spectral_norm(&a).unwrap() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn witness_controls() {
        let path = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let mut rng = seeded(8);
        let gcn = BoundLayer::random(BoundArch::Gcn(NormScheme::symmetric()), 3, 2, ActivationKind::Relu, 1.0, &mut rng);
        let w = find_witness(&gcn, &path, 100, 1).unwrap();
        assert!(w.output_discrepancy > 1e-6 && !w.dropped_edges.is_empty());
        let mlp = BoundLayer { arch: BoundArch::Mlp, ..gcn.clone() };
        assert!(matches!(find_witness(&mlp, &path, 20, 1), Err(Error::SearchExhausted { attempts: 20 })));
        let zero = BoundLayer {
            weights: LayerWeights::Linear { w: Matrix::zeros(3, 2), b: Matrix::filled(1, 2, 0.3) },
            ..gcn
        };
        assert!(find_witness(&zero, &path, 20, 1).is_err());
    }

    #[test]
    fn zero_buffer_weights_give_equality() {
        let g = Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        let mask = EdgeMask { keep: vec![false, true], p: 0.5 };
        let h = Matrix::from_fn(3, 2, |i, j| (i + j) as f64 + 1.0);
        let t = buffer_condition_trial(BufferVariant::Full, &g, &mask, &[h], &Matrix::zeros(2, 2)).unwrap();
        assert!(!t.differs && t.clean_norm == t.dropped_norm);
    }

    #[test]
    fn discrepancy_vanishes_on_equal_graphs() {
        let cfg = ModelConfig::new(Arch::Gcn, 3, 4, 2, 2);
        let p = ModelParams::init(&cfg, 1).unwrap();
        let g = star(5);
        let x = Matrix::from_fn(6, 3, |i, j| (i * j) as f64 * 0.1);
        assert!(empirical_discrepancy(&p, &x, &g, &g).unwrap().iter().all(|&d| d == 0.0));
        let mlp = ModelParams { config: ModelConfig { arch: Arch::Mlp, ..cfg }, ..p };
        assert!(empirical_discrepancy(&mlp, &x, &g, &Graph::empty(6)).unwrap().iter().all(|&d| d == 0.0));
    }
}
