//! Training objectives and the reporting decompositions.
//!
//! Functions taking `&Matrix` are plain evaluations for monitoring; those
//! taking a [`Tape`] build differentiable nodes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{drop_edges, Graph};
use crate::rng::derived;
use crate::tensor::{Matrix, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// `L_bias` on training nodes plus `λ·L_robust` on all nodes.
    Rc,
    /// Like `Rc` with the robustness term restricted to training nodes.
    RcTrainOnly,
    CrossEntropy,
    PseudoLabel,
    SelfDistill,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 5] = [
        ObjectiveKind::Rc,
        ObjectiveKind::RcTrainOnly,
        ObjectiveKind::CrossEntropy,
        ObjectiveKind::PseudoLabel,
        ObjectiveKind::SelfDistill,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rc => "rc",
            Self::RcTrainOnly => "rc_train_only",
            Self::CrossEntropy => "cross_entropy",
            Self::PseudoLabel => "pseudo_label",
            Self::SelfDistill => "self_distill",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .or(match key.as_str() {
                "ce" => Some(Self::CrossEntropy),
                "pseudo" => Some(Self::PseudoLabel),
                "distill" => Some(Self::SelfDistill),
                _ => None,
            })
            .ok_or_else(|| Error::Unsupported(format!("objective `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub lambda: f64,
    /// Detach the clean-graph distribution inside the robustness term.
    pub stop_grad_clean: bool,
}

impl Objective {
    pub fn rc(lambda: f64) -> Self {
        Self { kind: ObjectiveKind::Rc, lambda, stop_grad_clean: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub bias: f64,
    pub robust: f64,
    pub lambda: f64,
    pub total: f64,
    pub bias_nodes: usize,
    pub robust_nodes: usize,
}

/// Mean over `nodes` of `KL(exp(logp) ‖ exp(logq))`.
pub fn kl_rows(logp: &Matrix, logq: &Matrix, nodes: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let (p, q) = (tape.constant(logp.clone()), tape.constant(logq.clone()));
    let v = tape.kl_rows(p, q, nodes)?;
    tape.value(v).item()
}

/// Mean negative log-likelihood of the true labels over `nodes`.
pub fn cross_entropy(logq: &Matrix, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let q = tape.constant(logq.clone());
    let v = ce_node(&mut tape, q, labels, nodes)?;
    tape.value(v).item()
}

fn ce_node(tape: &mut Tape, logq: Var, labels: &[usize], nodes: &[usize]) -> Result<Var> {
    if let Some(&i) = nodes.iter().find(|&&i| i >= labels.len()) {
        return Err(Error::dim("cross_entropy", format!("node {i} has no label")));
    }
    let targets: Vec<usize> = nodes.iter().map(|&i| labels[i]).collect();
    tape.nll(logq, nodes, &targets)
}

/// `L_bias`: KL from the frozen model's clean predictions to the buffered
/// model's, over training nodes. `q_frozen` should be a constant.
pub fn l_bias(tape: &mut Tape, q_frozen: Var, qb_clean: Var, train: &[usize]) -> Result<Var> {
    tape.kl_rows(q_frozen, qb_clean, train)
}

/// `L_robust`: KL between clean and edge-dropped buffered predictions.
pub fn l_robust(tape: &mut Tape, qb_clean: Var, qb_dropped: Var, nodes: &[usize], stop_grad_clean: bool) -> Result<Var> {
    let clean = if stop_grad_clean { tape.detach(qb_clean) } else { qb_clean };
    tape.kl_rows(clean, qb_dropped, nodes)
}

pub fn l_rc(bias: f64, robust: f64, lambda: f64) -> Result<LossReport> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(LossReport { bias, robust, lambda, total: bias + lambda * robust, bias_nodes: 0, robust_nodes: 0 })
}

/// Inputs of one objective evaluation; all `Var`s are row-wise log-probabilities.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveInputs<'a> {
    /// Frozen model on the clean graph (constant).
    pub q_frozen: Var,
    pub qb_clean: Var,
    pub qb_dropped: Var,
    pub train: &'a [usize],
    pub labels: &'a [usize],
}

/// Builds the scalar objective; the report's robust term is always the
/// all-node clean/dropped KL so curves stay comparable across objectives.
pub fn objective(tape: &mut Tape, obj: &Objective, inp: ObjectiveInputs<'_>) -> Result<(Var, LossReport)> {
    obj.validate()?;
    let n = tape.value(inp.qb_clean).rows();
    let all: Vec<usize> = (0..n).collect();
    let (total, bias, robust, bias_nodes, robust_nodes) = match obj.kind {
        ObjectiveKind::Rc | ObjectiveKind::RcTrainOnly => {
            let robust_set = if obj.kind == ObjectiveKind::Rc { &all[..] } else { inp.train };
            let b = l_bias(tape, inp.q_frozen, inp.qb_clean, inp.train)?;
            let r = l_robust(tape, inp.qb_clean, inp.qb_dropped, robust_set, obj.stop_grad_clean)?;
            let weighted = tape.scale(r, obj.lambda);
            let total = tape.add(b, weighted)?;
            let (bv, rv) = (tape.value(b).item()?, tape.value(r).item()?);
            (total, bv, rv, inp.train.len(), robust_set.len())
        }
        kind => {
            let total = match kind {
                ObjectiveKind::CrossEntropy => ce_node(tape, inp.qb_dropped, inp.labels, inp.train)?,
                ObjectiveKind::PseudoLabel => {
                    let q = tape.value(inp.q_frozen);
                    let pseudo: Vec<usize> = (0..n).map(|i| q.argmax_row(i)).collect();
                    tape.nll(inp.qb_dropped, &all, &pseudo)?
                }
                _ => tape.kl_rows(inp.q_frozen, inp.qb_dropped, &all)?,
            };
            let nodes = if kind == ObjectiveKind::CrossEntropy { inp.train.len() } else { n };
            let robust = kl_rows(tape.value(inp.qb_clean), tape.value(inp.qb_dropped), &all)?;
            (total, tape.value(total).item()?, robust, nodes, n)
        }
    };
    let total_value = tape.value(total).item()?;
    let report = LossReport { bias, robust, lambda: obj.lambda, total: total_value, bias_nodes, robust_nodes };
    Ok((total, report))
}

/// Test-set decomposition into a label-fit term and a robustness term.
///
/// The bias term is the cross-entropy against one-hot labels; the robust
/// term is `KL(Q(G) ‖ Q(G̃))` averaged over `draws` DropEdge samples, where
/// draw `k` uses the generator derived from `(seed, k)`.
pub fn monitor_decomposition<F>(
    predict: F,
    graph: &Graph,
    labels: &[usize],
    test: &[usize],
    p: f64,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)>
where
    F: Fn(&Graph) -> Result<Matrix>,
{
    if draws == 0 {
        return Err(Error::Config("monitor needs at least one mask draw".into()));
    }
    let clean = predict(graph)?;
    let bias = cross_entropy(&clean, labels, test)?;
    let mut robust = 0.0;
    for k in 0..draws {
        let (_, dropped) = drop_edges(graph, p, &mut derived(seed, k as u64))?;
        robust += kl_rows(&clean, &predict(&dropped)?, test)?;
    }
    Ok((bias, robust / draws as f64))
}

/// Label-proxy robustness: mean over `nodes` of
/// `log Q(y_i | G) − log Q(y_i | G̃)`. May be negative.
pub fn label_proxy_robustness(clean: &Matrix, dropped: &Matrix, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    if clean.shape() != dropped.shape() {
        return Err(Error::dim("label_proxy_robustness", "prediction shapes differ"));
    }
    if nodes.is_empty() {
        return Err(Error::Contract("label_proxy_robustness: empty node set".into()));
    }
    let mut total = 0.0;
    for &i in nodes {
        let y = *labels.get(i).ok_or_else(|| Error::dim("label_proxy_robustness", format!("node {i} has no label")))?;
        if i >= clean.rows() || y >= clean.cols() {
            return Err(Error::dim("label_proxy_robustness", format!("node {i} / class {y} out of range")));
        }
        total += clean.get(i, y) - dropped.get(i, y);
    }
    Ok(total / nodes.len() as f64)
}
