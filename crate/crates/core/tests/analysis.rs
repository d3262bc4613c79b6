mod common;

use aggbuf::analysis::{
    buffer_condition_trial, check_buffer_conditions, empirical_discrepancy, exact_spectral_norm, random_graph,
    spectral_norm,
};
use aggbuf::buffer::BufferVariant;
use aggbuf::graph::{drop_edges, Graph};
use aggbuf::models::{Arch, ModelConfig, ModelParams};
use aggbuf::rng::seeded;
use aggbuf::tensor::Matrix;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn power_iteration_agrees_with_the_eigensolver() {
    let mut rng = seeded(100);
    for k in 0..100 {
        let m = common::gaussian(20, 20, 1.0, &mut rng);
        let exact = exact_spectral_norm(&m).unwrap();
        let estimate = spectral_norm(&m, 1e-15, 1_000_000).unwrap();
        assert!((estimate - exact).abs() <= 1e-8 * exact, "matrix {k}: {estimate} vs {exact}");
    }
}

fn dense_gcn_trace(params: &ModelParams, x: &Matrix, g: &Graph) -> Vec<Matrix> {
    let n = g.num_nodes();
    let mut a = Matrix::identity(n);
    for &(u, v) in g.edges() {
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    let a_hat = Matrix::from_fn(n, n, |i, j| a.get(i, j) / (deg[i] * deg[j]).sqrt());
    let mut trace = vec![x.clone()];
    let layers = params.config.layers;
    for l in 0..layers {
        let (w, b) = (&params.tensors[2 * l].value, &params.tensors[2 * l + 1].value);
        let z = a_hat.matmul(&trace[l]).unwrap().matmul(w).unwrap();
        let z = Matrix::from_fn(z.rows(), z.cols(), |i, j| z.get(i, j) + b.get(0, j));
        trace.push(if l + 1 < layers { z.map(|v| v.max(0.0)) } else { z });
    }
    trace
}

#[test]
fn layer_discrepancy_matches_a_dense_recomputation() {
    let mut rng = seeded(5);
    for _ in 0..10 {
        let g = random_graph(12, 0.3, true, &mut rng).unwrap();
        let keep: Vec<bool> = (0..g.num_edges()).map(|e| e != 0).collect();
        let dropped = g.masked(&aggbuf::graph::EdgeMask { keep, p: 0.0 }).unwrap();
        let cfg = ModelConfig::new(Arch::Gcn, 4, 6, 3, 3);
        let params = ModelParams::init(&cfg, rng.random()).unwrap();
        let x = common::gaussian(12, 4, 1.0, &mut rng);

        let got = empirical_discrepancy(&params, &x, &g, &dropped).unwrap();
        let (t1, t2) = (dense_gcn_trace(&params, &x, &g), dense_gcn_trace(&params, &x, &dropped));
        assert_eq!(got.len(), 4);
        assert_eq!(got[0], 0.0);
        for l in 1..4 {
            let diff = t1[l].sub(&t2[l]).unwrap();
            let expected = spectral_norm(&diff, 1e-15, 1_000_000).unwrap();
            assert!((got[l] - expected).abs() <= 1e-10 * expected.max(1.0), "layer {l}: {} vs {expected}", got[l]);
        }
        assert!(got[1] > 0.0);
    }
}

#[test]
fn mlp_ignores_the_graph() {
    let mut rng = seeded(6);
    let g = random_graph(10, 0.4, true, &mut rng).unwrap();
    let params = ModelParams::init(&ModelConfig::new(Arch::Mlp, 3, 5, 2, 3), 1).unwrap();
    let x = common::gaussian(10, 3, 1.0, &mut rng);
    let got = empirical_discrepancy(&params, &x, &g, &Graph::empty(10)).unwrap();
    assert!(got.iter().all(|&d| d == 0.0), "{got:?}");
}

#[test]
fn edge_aware_variants_on_many_trials() {
    for (variant, c1, c2) in [
        (BufferVariant::Full, true, true),
        (BufferVariant::SingleLayer, true, true),
        (BufferVariant::PlainAgg, true, false),
        (BufferVariant::JkNetStyle, false, false),
        (BufferVariant::ResidualStyle, false, false),
    ] {
        let r = check_buffer_conditions(variant, 300, 77).unwrap();
        assert_eq!(r.qualified, 300);
        if c1 {
            assert_eq!(r.c1_failures, 0, "{}", variant.name());
        } else {
            assert_eq!(r.c1_failures, r.qualified, "{}", variant.name());
        }
        if c2 {
            assert_eq!(r.c2_failures, 0, "{}", variant.name());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Removing edges can only shrink degrees, so every row scale
    /// `1/(d+1)` grows and so does the Frobenius norm.
    #[test]
    fn degree_scaled_buffer_norm_grows_under_drop_edge(seed in any::<u64>(), n in 2usize..16, p in 0.05f64..1.0) {
        let mut rng = seeded(seed);
        let g = random_graph(n, 0.4, true, &mut rng).unwrap();
        let (mask, dropped) = drop_edges(&g, p, &mut rng).unwrap();
        let h = common::gaussian(n, 3, 1.0, &mut rng);
        let w = common::gaussian(3, 2, 1.0, &mut rng);
        let hw = h.matmul(&w).unwrap();
        let reduced = (0..n).any(|i| dropped.neighbors(i).count() < g.neighbors(i).count() && hw.row(i).iter().any(|&v| v != 0.0));
        for variant in [BufferVariant::Full, BufferVariant::SingleLayer] {
            let t = buffer_condition_trial(variant, &g, &mask, std::slice::from_ref(&h), &w).unwrap();
            prop_assert!(t.clean_norm <= t.dropped_norm);
            prop_assert_eq!(t.stable(), reduced);
            prop_assert_eq!(t.differs, reduced);
        }
        for variant in [BufferVariant::JkNetStyle, BufferVariant::ResidualStyle] {
            let t = buffer_condition_trial(variant, &g, &mask, std::slice::from_ref(&h), &w).unwrap();
            prop_assert!(!t.differs);
            prop_assert_eq!(t.clean_norm, t.dropped_norm);
        }
    }
}
