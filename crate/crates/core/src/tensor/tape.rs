//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation appends a node holding its output value and enough of its
//! inputs to apply the local gradient rule. Nodes are created strictly after
//! their inputs, so a single reverse sweep over the tape visits every node
//! after all of its consumers.
//!
//! Leaves come in two flavours: [`Tape::param`] marks a trainable value that
//! receives a gradient, while [`Tape::constant`] (and its alias
//! [`Tape::frozen`]) never does. Gradient flow is pruned at construction
//! time: a node only tracks gradients when one of its inputs does.

use std::sync::Arc;

use rand::Rng;

use super::{ActivationKind, CsrMatrix, Matrix};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    ScaleRows(Var, Arc<Vec<f64>>),
    Activation(Var, ActivationKind),
    LogSoftmax(Var),
    Mask(Var, Matrix),
    Concat(Vec<Var>),
    Sum(Var),
    KlRows { p: Var, q: Var, nodes: Arc<Vec<usize>> },
    Nll { logq: Var, targets: Vec<(usize, usize)> },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; `None` for constants.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf for a parameter that must not be updated; it never receives a gradient.
    pub fn frozen(&mut self, value: Matrix) -> Var {
        self.constant(value)
    }

    /// Copies the current value of `v` into a fresh constant (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Sparse-dense product; the sparse operand is never differentiated.
    pub fn spmm(&mut self, s: &Arc<CsrMatrix>, d: Var) -> Result<Var> {
        let value = s.spmm(self.value(d))?;
        let rg = self.any_grad(&[d]);
        Ok(self.push(value, Op::SpMM(Arc::clone(s), d), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds a `1 × cols` row vector to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::dim("add_row_bias", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut value = av.clone();
        for i in 0..value.rows() {
            for (x, b) in value.row_mut(i).iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let rg = self.any_grad(&[a, bias]);
        Ok(self.push(value, Op::AddRowBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Multiplies `a` by the value of the 1×1 node `s`.
    pub fn scale_by(&mut self, s: Var, a: Var) -> Result<Var> {
        let c = self.value(s).item()?;
        let value = self.value(a).scale(c);
        let rg = self.any_grad(&[s, a]);
        Ok(self.push(value, Op::ScaleBy(s, a), rg))
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Arc<Vec<f64>>) -> Result<Var> {
        let value = self.value(a).scale_rows(&factors)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::ScaleRows(a, factors), rg))
    }

    pub fn activation(&mut self, a: Var, kind: ActivationKind) -> Var {
        let value = self.value(a).map(|x| kind.apply(x));
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Activation(a, kind), rg)
    }

    /// Row-wise log-softmax, stabilised by subtracting the row maximum.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = log_softmax_rows(self.value(a))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::LogSoftmax(a), rg))
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidRate { what: "dropout", rate: p });
        }
        if p == 0.0 {
            return Ok(a);
        }
        let (rows, cols) = self.value(a).shape();
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        let mask = Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < keep { scale } else { 0.0 });
        let value = self.value(a).hadamard(&mask)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Mask(a, mask), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::concat_cols(&mats)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Mean over `nodes` of `Σ_c exp(p_ic)(p_ic − q_ic)`; both arguments are
    /// row-wise log-distributions.
    pub fn kl_rows(&mut self, p: Var, q: Var, nodes: &[usize]) -> Result<Var> {
        let (pv, qv) = (self.value(p), self.value(q));
        if pv.shape() != qv.shape() {
            return Err(Error::dim("kl_rows", format!("{:?} vs {:?}", pv.shape(), qv.shape())));
        }
        check_nodes("kl_rows", nodes, pv.rows())?;
        let total: f64 = nodes
            .iter()
            .map(|&i| pv.row(i).iter().zip(qv.row(i)).map(|(&lp, &lq)| lp.exp() * (lp - lq)).sum::<f64>())
            .sum();
        let value = Matrix::scalar(total / nodes.len() as f64);
        let rg = self.any_grad(&[p, q]);
        Ok(self.push(value, Op::KlRows { p, q, nodes: Arc::new(nodes.to_vec()) }, rg))
    }

    /// Mean negative log-likelihood of `targets[k]` at row `nodes[k]`.
    pub fn nll(&mut self, logq: Var, nodes: &[usize], targets: &[usize]) -> Result<Var> {
        let qv = self.value(logq);
        if nodes.len() != targets.len() {
            return Err(Error::dim("nll", "node and target counts differ"));
        }
        check_nodes("nll", nodes, qv.rows())?;
        if let Some(&t) = targets.iter().find(|&&t| t >= qv.cols()) {
            return Err(Error::Contract(format!("label {t} out of range for {} classes", qv.cols())));
        }
        let pairs: Vec<(usize, usize)> = nodes.iter().copied().zip(targets.iter().copied()).collect();
        let total: f64 = pairs.iter().map(|&(i, c)| -qv.get(i, c)).sum();
        let value = Matrix::scalar(total / pairs.len() as f64);
        let rg = self.any_grad(&[logq]);
        Ok(self.push(value, Op::Nll { logq, targets: pairs }, rg))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=root.0).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (idx, g) in grads.iter_mut().enumerate() {
            if !self.nodes[idx].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    self.accumulate(grads, *a, ga)?;
                }
                if self.requires_grad(*b) {
                    let gb = self.value(*a).transpose().matmul(g)?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::SpMM(s, d) => {
                let gd = s.transpose().spmm(g)?;
                self.accumulate(grads, *d, gd)?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.hadamard(self.value(*b))?)?;
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::AddRowBias(a, bias) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.requires_grad(*bias) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (acc, x) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                    self.accumulate(grads, *bias, gb)?;
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c))?,
            Op::ScaleBy(s, a) => {
                if self.requires_grad(*s) {
                    let gs = g.hadamard(self.value(*a))?.sum();
                    self.accumulate(grads, *s, Matrix::scalar(gs))?;
                }
                if self.requires_grad(*a) {
                    let c = self.value(*s).item()?;
                    self.accumulate(grads, *a, g.scale(c))?;
                }
            }
            Op::ScaleRows(a, factors) => self.accumulate(grads, *a, g.scale_rows(factors)?)?,
            Op::Activation(a, kind) => {
                let x = self.value(*a);
                let data = g.data().iter().zip(x.data()).map(|(&gi, &xi)| gi * kind.derivative(xi)).collect();
                self.accumulate(grads, *a, Matrix::new(g.rows(), g.cols(), data)?)?;
            }
            Op::LogSoftmax(a) => {
                // dx = g - softmax * rowsum(g)
                let mut gx = g.clone();
                for i in 0..gx.rows() {
                    let row_sum: f64 = g.row(i).iter().sum();
                    for (v, &y) in gx.row_mut(i).iter_mut().zip(out.row(i)) {
                        *v -= y.exp() * row_sum;
                    }
                }
                self.accumulate(grads, *a, gx)?;
            }
            Op::Mask(a, mask) => self.accumulate(grads, *a, g.hadamard(mask)?)?,
            Op::Concat(parts) => {
                let mut offset = 0;
                for &part in parts {
                    let cols = self.value(part).cols();
                    if self.requires_grad(part) {
                        let slice = Matrix::from_fn(g.rows(), cols, |i, j| g.get(i, offset + j));
                        self.accumulate(grads, part, slice)?;
                    }
                    offset += cols;
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Matrix::filled(r, c, g.item()?))?;
            }
            Op::KlRows { p, q, nodes } => {
                let scale = g.item()? / nodes.len() as f64;
                let (pv, qv) = (self.value(*p), self.value(*q));
                let (r, c) = pv.shape();
                if self.requires_grad(*p) {
                    let mut gp = Matrix::zeros(r, c);
                    for &i in nodes.iter() {
                        for j in 0..c {
                            let (lp, lq) = (pv.get(i, j), qv.get(i, j));
                            let v = gp.get(i, j) + scale * lp.exp() * (lp - lq + 1.0);
                            gp.set(i, j, v);
                        }
                    }
                    self.accumulate(grads, *p, gp)?;
                }
                if self.requires_grad(*q) {
                    let mut gq = Matrix::zeros(r, c);
                    for &i in nodes.iter() {
                        for j in 0..c {
                            let v = gq.get(i, j) - scale * pv.get(i, j).exp();
                            gq.set(i, j, v);
                        }
                    }
                    self.accumulate(grads, *q, gq)?;
                }
            }
            Op::Nll { logq, targets } => {
                let scale = g.item()? / targets.len() as f64;
                let (r, c) = self.value(*logq).shape();
                let mut gq = Matrix::zeros(r, c);
                for &(i, t) in targets {
                    gq.set(i, t, gq.get(i, t) - scale);
                }
                self.accumulate(grads, *logq, gq)?;
            }
        }
        Ok(())
    }
}

fn check_nodes(op: &'static str, nodes: &[usize], rows: usize) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::Contract(format!("{op}: empty node set")));
    }
    if let Some(&i) = nodes.iter().find(|&&i| i >= rows) {
        return Err(Error::dim(op, format!("node {i} out of range for {rows} rows")));
    }
    Ok(())
}

/// Row-wise log-softmax on a plain matrix.
pub fn log_softmax_rows(x: &Matrix) -> Result<Matrix> {
    if x.cols() == 0 {
        return Err(Error::dim("log_softmax_rows", "zero columns"));
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Matrix::from_fn(2, 3, |i, j| (i + j) as f64));
        let s = tape.sum(x);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut tape = Tape::new();
        let w = tape.frozen(Matrix::filled(2, 2, 0.5));
        let x = tape.param(Matrix::filled(1, 2, 1.0));
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(w).is_none());
        assert!(grads.get(x).is_some());
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Matrix::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn log_softmax_cases() {
        let u = log_softmax_rows(&Matrix::from_rows(&[[4.0, 4.0, 4.0]]).unwrap()).unwrap();
        for &v in u.data() {
            assert!((v + 3f64.ln()).abs() < 1e-15);
        }
        let single = log_softmax_rows(&Matrix::from_rows(&[[7.5]]).unwrap()).unwrap();
        assert_eq!(single.data(), &[0.0]);
        assert!(log_softmax_rows(&Matrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn dropout_contract() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::filled(4, 4, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(tape.dropout(x, 0.0, &mut rng).unwrap(), x);
        assert!(matches!(tape.dropout(x, 1.0, &mut rng), Err(Error::InvalidRate { .. })));
        let a = tape.dropout(x, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = tape.dropout(x, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        assert!(tape.value(a).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn empty_node_set_is_a_contract_error() {
        let mut tape = Tape::new();
        let q = tape.constant(Matrix::zeros(2, 2));
        assert!(matches!(tape.nll(q, &[], &[]), Err(Error::Contract(_))));
        assert!(matches!(tape.nll(q, &[0], &[5]), Err(Error::Contract(_))));
    }
}
