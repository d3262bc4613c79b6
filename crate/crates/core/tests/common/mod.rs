//! Helpers shared by the integration and acceptance targets.
#![allow(dead_code)]

use aggbuf::analysis::random_graph;
use aggbuf::buffer::{attach, buffered_forward_bound, BufferParams, BufferVariant, BufferedModel};
use aggbuf::graph::{drop_edges, NormKind, NormScheme};
use aggbuf::losses::{objective, Objective, ObjectiveInputs, ObjectiveKind};
use aggbuf::models::{predict, Arch, ForwardOptions, GraphView, ModelConfig, ModelParams};
use aggbuf::rng::{derive_seed, seeded, SeededRng};
use aggbuf::tensor::gradcheck::{check_gradients, GradCheck, STEP};
use aggbuf::tensor::{ActivationKind, Matrix};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(&mut *rng);
        scale * z
    })
}

pub struct GradCase {
    pub label: String,
    pub check: GradCheck,
    /// Draws discarded because the loss was flat (for example every ReLU
    /// dead), which leaves nothing to compare.
    pub redraws: usize,
}

/// Random composition `i`: every architecture, buffer variant and
/// objective appear once per 125 consecutive indices.
///
/// Base and buffer weights are all trainable and non-zero; the loss runs a
/// clean and an edge-dropped buffered forward (with fixed dropout masks)
/// into the objective. The stop-gradient option is left off: it replaces
/// the true gradient by a surrogate on purpose.
pub fn gradient_case(i: usize) -> aggbuf::Result<GradCase> {
    for redraws in 0..10 {
        let case = gradient_draw(i, seeded(derive_seed(0x9_0000 + i as u64, redraws as u64)))?;
        if case.check.grad_scale > 1e-8 {
            return Ok(GradCase { redraws, ..case });
        }
    }
    Err(aggbuf::Error::Contract(format!("composition {i} stayed flat after 10 draws")))
}

fn gradient_draw(i: usize, mut rng: SeededRng) -> aggbuf::Result<GradCase> {
    let arch = Arch::ALL[i % 5];
    let variant = BufferVariant::ALL[(i / 5) % 5];
    let kind = ObjectiveKind::ALL[(i / 25) % 5];

    let n = rng.random_range(4..=10);
    let graph = random_graph(n, rng.random_range(0.1..0.5), rng.random(), &mut rng)?;
    let (_, dropped) = drop_edges(&graph, 0.5, &mut rng)?;
    let (d_in, hidden, classes) = (rng.random_range(2..=4), rng.random_range(2..=4), rng.random_range(2..=3));
    let layers = rng.random_range(1..=3);
    let mut cfg = ModelConfig::new(arch, d_in, hidden, classes, layers);
    cfg.activation = ActivationKind::ALL[rng.random_range(0..5)];
    let kinds = [NormKind::Symmetric, NormKind::RandomWalk, NormKind::Regular];
    if matches!(arch, Arch::Gcn | Arch::Sgc) {
        cfg.norm = NormScheme::new(kinds[rng.random_range(0..3)], rng.random());
    }
    if arch == Arch::Gin {
        cfg.gin_hidden = rng.random_range(2..=4);
    }
    let base_dropout = if rng.random() { 0.3 } else { 0.0 };
    let buffer_dropout = if rng.random() { 0.3 } else { 0.0 };

    let mut base = ModelParams::init(&cfg, rng.random())?;
    for t in &mut base.tensors {
        t.value = gaussian(t.value.rows(), t.value.cols(), 0.6, &mut rng);
    }
    let zeros = BufferParams::zeros(&cfg, variant);
    let buffers: Vec<Matrix> = zeros.weights.iter().map(|w| gaussian(w.rows(), w.cols(), 0.4, &mut rng)).collect();

    let x = gaussian(n, d_in, 1.0, &mut rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let train: Vec<usize> = (0..n).filter(|v| v % 2 == 0).collect();
    let obj = Objective { kind, lambda: rng.random_range(0.1..1.0), stop_grad_clean: false };
    let (clean_view, dropped_view) = (GraphView::new(&graph, &cfg), GraphView::new(&dropped, &cfg));
    let q_frozen = predict(&base, &x, &clean_view)?;
    let template = attach(base.clone(), variant);
    let opts = ForwardOptions { base_dropout, buffer_dropout };
    let mask_seed: u64 = rng.random();
    let num_base = base.tensors.len();

    let mut params: Vec<Matrix> = base.tensors.iter().map(|t| t.value.clone()).collect();
    params.extend(buffers);
    let check = check_gradients(
        &params,
        |tape, vars| {
            let bm: &BufferedModel = &template;
            let xv = tape.constant(x.clone());
            let qf = tape.constant(q_frozen.clone());
            let (bv, wv) = vars.split_at(num_base);
            let mut masks = seeded(mask_seed);
            let clean = buffered_forward_bound(bm, bv, wv, tape, xv, &clean_view, opts, &mut masks)?;
            let perturbed = buffered_forward_bound(bm, bv, wv, tape, xv, &dropped_view, opts, &mut masks)?;
            let inputs = ObjectiveInputs {
                q_frozen: qf,
                qb_clean: clean.log_probs,
                qb_dropped: perturbed.log_probs,
                train: &train,
                labels: &labels,
            };
            Ok(objective(tape, &obj, inputs)?.0)
        },
        STEP,
    )?;
    let label = format!("{arch}/{}/{} n={n} L={layers} {}", variant.name(), kind.name(), cfg.activation);
    Ok(GradCase { label, check, redraws: 0 })
}
