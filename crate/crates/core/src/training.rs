//! Adam, supervised pretraining, buffer tuning, early stopping and grid
//! search.
//!
//! Every epoch first evaluates validation accuracy for the current
//! parameters, then takes one optimisation step. Epoch 0 therefore scores the
//! starting point, and the returned checkpoint is the earliest epoch with the
//! highest validation accuracy.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::{attach, bind_buffered, buffered_forward_bound, predict_buffered, BufferParams, BufferVariant, BufferedModel};
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::graph::{drop_edges, DatasetBundle, Split};
use crate::losses::{objective, Objective, ObjectiveInputs, ObjectiveKind};
use crate::models::{forward_bound, predict, ForwardOptions, GraphView, ModelConfig, ModelParams};
use crate::rng::{derive_seed, derived};
use crate::tensor::{Gradients, Matrix, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// DropEdge rate. During pretraining a positive rate gives the DropEdge
    /// baseline.
    pub drop_edge: f64,
    pub lambda: f64,
    /// Dropout on buffer inputs during tuning. Pretraining uses the model's
    /// own rate.
    pub dropout: f64,
    pub objective: ObjectiveKind,
    pub stop_grad_clean: bool,
    /// Return the best-validation checkpoint; otherwise the weights after the
    /// last step.
    #[serde(default = "restore_best_default")]
    pub restore_best: bool,
}

fn restore_best_default() -> bool {
    true
}

impl TrainConfig {
    pub fn pretrain_default() -> Self {
        Self {
            lr: 1e-2,
            weight_decay: 5e-4,
            max_epochs: 2000,
            patience: 100,
            seed: 0,
            drop_edge: 0.0,
            lambda: 0.0,
            dropout: 0.0,
            objective: ObjectiveKind::CrossEntropy,
            stop_grad_clean: false,
            restore_best: true,
        }
    }

    pub fn buffer_default() -> Self {
        Self {
            weight_decay: 0.0,
            drop_edge: 0.5,
            lambda: 1.0,
            objective: ObjectiveKind::Rc,
            ..Self::pretrain_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative".into());
        }
        if self.max_epochs == 0 || self.patience > self.max_epochs {
            return bad(format!("need 0 < patience <= max_epochs, got {} / {}", self.patience, self.max_epochs));
        }
        if !(0.0..=1.0).contains(&self.drop_edge) {
            return bad(format!("drop_edge must lie in [0, 1], got {}", self.drop_edge));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative".into());
        }
        Ok(())
    }

    fn objective(&self) -> Objective {
        Objective { kind: self.objective, lambda: self.lambda, stop_grad_clean: self.stop_grad_clean }
    }
}

/// Adam with L2 weight decay added to the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    frozen: Vec<bool>,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self::with_frozen(shapes, vec![false; shapes.len()])
    }

    /// Slots flagged frozen are never updated and must not receive gradients.
    pub fn with_frozen(shapes: &[(usize, usize)], frozen: Vec<bool>) -> Self {
        assert_eq!(shapes.len(), frozen.len());
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros(), frozen }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Option<Matrix>], lr: f64, weight_decay: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim("adam_step", "parameter, gradient and state counts differ"));
        }
        for (k, g) in grads.iter().enumerate() {
            match (self.frozen[k], g) {
                (true, Some(_)) => return Err(Error::Contract(format!("gradient supplied for frozen parameter {k}"))),
                (false, None) => return Err(Error::Contract(format!("missing gradient for parameter {k}"))),
                (false, Some(g)) if g.shape() != params[k].shape() => {
                    return Err(Error::dim("adam_step", format!("gradient {:?} for parameter {:?}", g.shape(), params[k].shape())))
                }
                _ => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for (k, p) in params.iter_mut().enumerate() {
            let Some(g) = &grads[k] else { continue };
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi + weight_decay * *w;
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub bias_term: f64,
    pub robust_term: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

impl History {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }
}

/// Tracks the best validation accuracy; ties keep the earliest epoch.
struct EarlyStop<T> {
    patience: usize,
    best: Option<(usize, f64, T)>,
}

impl<T> EarlyStop<T> {
    fn new(patience: usize) -> Self {
        Self { patience, best: None }
    }

    fn observe(&mut self, epoch: usize, val_acc: f64, snapshot: impl FnOnce() -> T) {
        if self.best.as_ref().is_none_or(|b| val_acc > b.1) {
            self.best = Some((epoch, val_acc, snapshot()));
        }
    }

    fn should_stop(&self, epoch: usize) -> bool {
        self.best.as_ref().is_some_and(|b| epoch - b.0 >= self.patience)
    }

    fn finish(self, records: Vec<EpochRecord>) -> (T, History) {
        let (best_epoch, best_val_acc, value) = self.best.expect("at least one epoch ran");
        (value, History { records, best_epoch, best_val_acc })
    }
}

fn check_finite(epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() { Ok(()) } else { Err(Error::Diverged { epoch, loss }) }
}

fn collect_grads(grads: &mut Gradients, vars: &[Var]) -> Vec<Option<Matrix>> {
    vars.iter().map(|&v| grads.take(v)).collect()
}

/// Supervised cross-entropy training of a freshly initialised model.
///
/// Parameters are initialised from `tc.seed`; a positive `tc.drop_edge`
/// resamples a DropEdge graph every epoch.
pub fn pretrain(cfg: &ModelConfig, tc: &TrainConfig, data: &DatasetBundle, split: &Split) -> Result<(ModelParams, History)> {
    let params = ModelParams::init(cfg, tc.seed)?;
    pretrain_from(params, tc, data, split)
}

/// Like [`pretrain`], starting from given parameters.
pub fn pretrain_from(mut params: ModelParams, tc: &TrainConfig, data: &DatasetBundle, split: &Split) -> Result<(ModelParams, History)> {
    tc.validate()?;
    params.config.validate()?;
    params.frozen = false;
    let cfg = params.config.clone();
    let clean_view = GraphView::new(&data.graph, &cfg);
    let mut rng = derived(tc.seed, 1);
    let shapes: Vec<_> = params.tensors.iter().map(|t| t.value.shape()).collect();
    let mut adam = AdamState::new(&shapes);
    let mut stop = EarlyStop::new(tc.patience);
    let mut records = Vec::new();
    let opts = ForwardOptions { base_dropout: cfg.dropout, buffer_dropout: 0.0 };

    for epoch in 0..tc.max_epochs {
        let val_acc = accuracy(&predict(&params, &data.features, &clean_view)?, &data.labels, &split.val)?;
        stop.observe(epoch, val_acc, || params.clone());

        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let x = tape.constant(data.features.clone());
        let view = if tc.drop_edge > 0.0 {
            GraphView::new(&drop_edges(&data.graph, tc.drop_edge, &mut rng)?.1, &cfg)
        } else {
            clean_view.clone()
        };
        let trace = forward_bound(&cfg, &vars, &mut tape, x, &view, opts, &mut rng, None)?;
        let targets: Vec<usize> = split.train.iter().map(|&i| data.labels[i]).collect();
        let loss = tape.nll(trace.log_probs, &split.train, &targets)?;
        let loss_value = tape.value(loss).item()?;
        check_finite(epoch, loss_value)?;
        let mut grads = tape.backward(loss)?;
        let g = collect_grads(&mut grads, &vars);
        let mut slots: Vec<&mut Matrix> = params.tensors.iter_mut().map(|t| &mut t.value).collect();
        adam.step(&mut slots, &g, tc.lr, tc.weight_decay)?;

        records.push(EpochRecord { epoch, train_loss: loss_value, bias_term: loss_value, robust_term: 0.0, val_acc });
        if stop.should_stop(epoch) {
            break;
        }
    }
    let (best, history) = stop.finish(records);
    Ok((if tc.restore_best { best } else { params }, history))
}

/// Trains the buffers of `bm` with the configured objective under DropEdge.
///
/// The base must be frozen; its content hash is checked after the run. The
/// frozen model's clean predictions are computed once up front.
pub fn tune_buffer(bm: &BufferedModel, tc: &TrainConfig, data: &DatasetBundle, split: &Split) -> Result<(BufferParams, History)> {
    if !bm.base.frozen {
        return Err(Error::Contract("tune_buffer needs a frozen base model".into()));
    }
    let before = bm.base.content_hash();
    let q_frozen = predict(&bm.base, &data.features, &GraphView::new(&data.graph, bm.config()))?;
    let (out, history) = buffer_loop(bm.clone(), tc, data, split, Some(&q_frozen))?;
    let after = out.base.content_hash();
    if before != after {
        return Err(Error::Integrity { expected: before, found: after });
    }
    Ok((out.buffers, history))
}

/// Joint training of an unfrozen, freshly initialised base and its buffers
/// (the no-pretraining ablation). The bias term is supervised cross-entropy
/// on the clean graph since no pretrained predictions exist.
pub fn train_joint(
    cfg: &ModelConfig,
    variant: BufferVariant,
    tc: &TrainConfig,
    data: &DatasetBundle,
    split: &Split,
) -> Result<(BufferedModel, History)> {
    let mut bm = attach(ModelParams::init(cfg, tc.seed)?, variant);
    bm.base.frozen = false;
    let (mut out, history) = buffer_loop(bm, tc, data, split, None)?;
    out.base.frozen = true;
    Ok((out, history))
}

fn buffer_loop(
    mut bm: BufferedModel,
    tc: &TrainConfig,
    data: &DatasetBundle,
    split: &Split,
    q_frozen: Option<&Matrix>,
) -> Result<(BufferedModel, History)> {
    tc.validate()?;
    let cfg = bm.config().clone();
    let joint = q_frozen.is_none();
    let clean_view = GraphView::new(&data.graph, &cfg);
    let mut rng = derived(tc.seed, 2);
    let base_shapes: Vec<_> = bm.base.tensors.iter().map(|t| t.value.shape()).collect();
    let buffer_shapes: Vec<_> = bm.buffers.weights.iter().map(|w| w.shape()).collect();
    let shapes: Vec<_> = base_shapes.iter().chain(&buffer_shapes).copied().collect();
    let frozen: Vec<bool> = base_shapes.iter().map(|_| !joint).chain(buffer_shapes.iter().map(|_| false)).collect();
    let mut adam = AdamState::with_frozen(&shapes, frozen);
    let mut stop = EarlyStop::new(tc.patience);
    let mut records = Vec::new();
    let opts = ForwardOptions {
        base_dropout: if joint { cfg.dropout } else { 0.0 },
        buffer_dropout: tc.dropout,
    };
    let obj = tc.objective();
    let targets: Vec<usize> = split.train.iter().map(|&i| data.labels[i]).collect();

    for epoch in 0..tc.max_epochs {
        let val_acc = accuracy(&predict_buffered(&bm, &data.features, &clean_view)?, &data.labels, &split.val)?;
        stop.observe(epoch, val_acc, || bm.clone());

        let mut tape = Tape::new();
        let (base_vars, buffer_vars) = bind_buffered(&bm, &mut tape);
        let x = tape.constant(data.features.clone());
        let clean = buffered_forward_bound(&bm, &base_vars, &buffer_vars, &mut tape, x, &clean_view, opts, &mut rng)?;
        let (_, dropped_graph) = drop_edges(&data.graph, tc.drop_edge, &mut rng)?;
        let dropped_view = GraphView::new(&dropped_graph, &cfg);
        let dropped = buffered_forward_bound(&bm, &base_vars, &buffer_vars, &mut tape, x, &dropped_view, opts, &mut rng)?;

        let (loss, report) = match q_frozen {
            Some(q) => {
                let qf = tape.constant(q.clone());
                let inputs = ObjectiveInputs {
                    q_frozen: qf,
                    qb_clean: clean.log_probs,
                    qb_dropped: dropped.log_probs,
                    train: &split.train,
                    labels: &data.labels,
                };
                let (loss, r) = objective(&mut tape, &obj, inputs)?;
                (loss, (r.total, r.bias, r.robust))
            }
            None => {
                let all: Vec<usize> = (0..data.num_nodes()).collect();
                let ce = tape.nll(clean.log_probs, &split.train, &targets)?;
                let robust = crate::losses::l_robust(&mut tape, clean.log_probs, dropped.log_probs, &all, tc.stop_grad_clean)?;
                let weighted = tape.scale(robust, tc.lambda);
                let loss = tape.add(ce, weighted)?;
                let values = (tape.value(loss).item()?, tape.value(ce).item()?, tape.value(robust).item()?);
                (loss, values)
            }
        };
        check_finite(epoch, report.0)?;
        let mut grads = tape.backward(loss)?;
        let vars: Vec<Var> = base_vars.iter().chain(&buffer_vars).copied().collect();
        let g = collect_grads(&mut grads, &vars);
        let mut slots: Vec<&mut Matrix> =
            bm.base.tensors.iter_mut().map(|t| &mut t.value).chain(bm.buffers.weights.iter_mut()).collect();
        adam.step(&mut slots, &g, tc.lr, tc.weight_decay)?;

        records.push(EpochRecord { epoch, train_loss: report.0, bias_term: report.1, robust_term: report.2, val_acc });
        if stop.should_stop(epoch) {
            break;
        }
    }
    let (best, history) = stop.finish(records);
    Ok((if tc.restore_best { best } else { bm }, history))
}

/// Cartesian buffer search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferSpace {
    pub lambdas: Vec<f64>,
    pub drop_edges: Vec<f64>,
    pub dropouts: Vec<f64>,
}

impl Default for BufferSpace {
    fn default() -> Self {
        Self {
            lambdas: vec![1.0, 0.5, 0.1],
            drop_edges: vec![0.2, 0.5, 0.7, 1.0],
            dropouts: vec![0.0, 0.2, 0.5, 0.7],
        }
    }
}

impl BufferSpace {
    /// Points in serialization order: λ outermost, dropout innermost.
    pub fn points(&self, template: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &lambda in &self.lambdas {
            for &drop_edge in &self.drop_edges {
                for &dropout in &self.dropouts {
                    out.push(TrainConfig { lambda, drop_edge, dropout, ..template.clone() });
                }
            }
        }
        out
    }
}

/// Base-model search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseSpace {
    pub hidden: Vec<usize>,
    pub dropouts: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub lrs: Vec<f64>,
}

impl Default for BaseSpace {
    fn default() -> Self {
        Self {
            hidden: vec![64, 256, 512],
            dropouts: vec![0.2, 0.3, 0.5, 0.7],
            weight_decays: vec![0.0, 5e-4, 5e-5],
            lrs: vec![1e-2, 1e-3, 5e-3],
        }
    }
}

impl BaseSpace {
    pub fn points(&self, cfg: &ModelConfig, tc: &TrainConfig) -> Vec<(ModelConfig, TrainConfig)> {
        let mut out = Vec::new();
        for &hidden in &self.hidden {
            for &dropout in &self.dropouts {
                for &weight_decay in &self.weight_decays {
                    for &lr in &self.lrs {
                        let c = ModelConfig { hidden, dropout, gin_hidden: hidden, ..cfg.clone() };
                        out.push((c, TrainConfig { lr, weight_decay, ..tc.clone() }));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry<P> {
    /// Position in the enumeration order.
    pub index: usize,
    pub point: P,
    pub scores: Vec<f64>,
    pub mean: f64,
}

/// Scores every point `seeds` times and ranks by mean score, best first.
///
/// Run `s` of point `i` receives seed `derive_seed(master, i · seeds + s)`.
/// Ties keep enumeration order.
pub fn grid_sweep<P, F>(points: Vec<P>, seeds: usize, master: u64, score: F) -> Result<Vec<SweepEntry<P>>>
where
    P: Send + Sync,
    F: Fn(&P, u64) -> Result<f64> + Sync,
{
    if seeds == 0 {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut entries = points
        .into_par_iter()
        .enumerate()
        .map(|(index, point)| {
            let scores = (0..seeds)
                .map(|s| score(&point, derive_seed(master, (index * seeds + s) as u64)))
                .collect::<Result<Vec<f64>>>()?;
            let mean = scores.iter().sum::<f64>() / seeds as f64;
            Ok(SweepEntry { index, point, scores, mean })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| b.mean.total_cmp(&a.mean).then(a.index.cmp(&b.index)));
    Ok(entries)
}

/// Buffer hyperparameter search on a fixed pretrained base.
pub fn buffer_sweep(
    base: &ModelParams,
    variant: BufferVariant,
    template: &TrainConfig,
    space: &BufferSpace,
    data: &DatasetBundle,
    split: &Split,
    seeds: usize,
    master: u64,
) -> Result<Vec<SweepEntry<TrainConfig>>> {
    let bm = attach(base.clone(), variant);
    grid_sweep(space.points(template), seeds, master, |tc, seed| {
        let tc = TrainConfig { seed, ..tc.clone() };
        let (_, history) = tune_buffer(&bm, &tc, data, split)?;
        Ok(history.best_val_acc)
    })
}

/// Base-model hyperparameter search.
pub fn base_sweep(
    cfg: &ModelConfig,
    template: &TrainConfig,
    space: &BaseSpace,
    data: &DatasetBundle,
    split: &Split,
    seeds: usize,
    master: u64,
) -> Result<Vec<SweepEntry<(ModelConfig, TrainConfig)>>> {
    grid_sweep(space.points(cfg, template), seeds, master, |(c, tc), seed| {
        let tc = TrainConfig { seed, ..tc.clone() };
        let (_, history) = pretrain(c, &tc, data, split)?;
        Ok(history.best_val_acc)
    })
}
