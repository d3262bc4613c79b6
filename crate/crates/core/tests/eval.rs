use aggbuf::buffer::{attach, BufferVariant};
use aggbuf::eval::{accuracy, degree_groups, edge_removal_sweep, evaluate, homophily_groups, EvalOptions, Predictor};
use aggbuf::graph::{generate_sbm, node_degrees, SbmConfig};
use aggbuf::models::{Arch, ModelConfig};
use aggbuf::training::{pretrain, TrainConfig};
use proptest::prelude::*;

#[test]
fn full_keep_ratio_is_standard_evaluation() {
    let data = generate_sbm(&SbmConfig { n: 300, classes: 3, feature_dim: 8, seed: 3, num_splits: 1, ..SbmConfig::default() }).unwrap();
    let split = data.split("split_0").unwrap().clone();
    let cfg = ModelConfig::new(Arch::Sage, 8, 16, 3, 2);
    let tc = TrainConfig { max_epochs: 40, patience: 40, ..TrainConfig::pretrain_default() };
    let (base, _) = pretrain(&cfg, &tc, &data, &split).unwrap();
    let mut bm = attach(base.clone(), BufferVariant::Full);
    bm.buffers.weights[0].set(0, 0, 0.3);

    for model in [&base as &dyn Predictor, &bm] {
        let standard = accuracy(&model.predict_on(&data.features, &data.graph).unwrap(), &data.labels, &split.test).unwrap();
        let sweep = edge_removal_sweep(model, &data, &split.test, &[1.0, 0.5, 0.0], &[1, 2, 3]).unwrap();
        assert_eq!(sweep[0].accuracies, vec![standard; 3]);
        assert_eq!(sweep[0].std, 0.0);
        assert_eq!(sweep[2].accuracies[0], sweep[2].accuracies[1]);
        let again = edge_removal_sweep(model, &data, &split.test, &[1.0, 0.5, 0.0], &[1, 2, 3]).unwrap();
        assert_eq!(sweep, again);
    }

    let opts = EvalOptions { removal_ratios: vec![1.0, 0.25], removal_seeds: vec![4, 5] };
    let a = evaluate(&bm, &data, "split_0", 0, &opts).unwrap();
    let b = evaluate(&bm, &data, "split_0", 0, &opts).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.group_sizes.head, split.test.len() / 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn groups_are_disjoint_thirds(seed in any::<u64>(), n in 30usize..200) {
        let data = generate_sbm(&SbmConfig { n, classes: 3, feature_dim: 3, seed, num_splits: 1, ..SbmConfig::default() }).unwrap();
        let test = &data.split("split_0").unwrap().test;
        let (head, tail) = degree_groups(&data.graph, test);
        prop_assert_eq!(head.len(), test.len() / 3);
        prop_assert_eq!(tail.len(), test.len() / 3);
        prop_assert!(head.iter().all(|h| !tail.contains(h)));
        let deg = node_degrees(&data.graph);
        let min_head = head.iter().map(|&i| deg[i]).min().unwrap_or(usize::MAX);
        let max_tail = tail.iter().map(|&i| deg[i]).max().unwrap_or(0);
        prop_assert!(head.is_empty() || max_tail <= min_head);

        let (homo, hetero) = homophily_groups(&data.graph, &data.labels, test).unwrap();
        let defined = test.iter().filter(|&&i| deg[i] > 0).count();
        prop_assert_eq!(homo.len(), defined / 3);
        prop_assert_eq!(hetero.len(), defined / 3);
        prop_assert!(homo.iter().all(|h| !hetero.contains(h) && deg[*h] > 0));
    }
}
