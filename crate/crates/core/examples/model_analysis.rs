//! Bound constants of a trained model's own layers, checked on a subgraph of
//! its data, plus the layer-wise discrepancy under one DropEdge draw.

use aggbuf::analysis::{analyze_model, lipschitz_constant, BoundLayer, SuiteOptions};
use aggbuf::graph::{generate_sbm, SbmConfig};
use aggbuf::models::{Arch, ModelConfig};
use aggbuf::training::{pretrain, TrainConfig};

fn main() -> aggbuf::Result<()> {
    let data = generate_sbm(&SbmConfig { n: 600, classes: 3, feature_dim: 16, num_splits: 1, ..SbmConfig::default() })?;
    let split = data.split("split_0")?.clone();
    let opts = SuiteOptions { trials: 200, ..SuiteOptions::default() };
    for arch in [Arch::Gcn, Arch::Sage, Arch::Gin] {
        let cfg = ModelConfig::new(arch, 16, 32, 3, 2);
        let tc = TrainConfig { max_epochs: 200, patience: 30, ..TrainConfig::pretrain_default() };
        let (params, _) = pretrain(&cfg, &tc, &data, &split)?;
        let a = analyze_model(&params, &data.features, &data.graph, &opts)?;
        println!("{arch} (activation Lipschitz constant {})", lipschitz_constant(cfg.activation));
        for (l, r) in a.layer_bounds.iter().enumerate() {
            let layer = BoundLayer::from_params(&params, l + 1)?;
            println!(
                "  layer {}: in {:>3}  C1 {:>9.3}  C2 {:>10.3}  violations {}/{}",
                l + 1,
                layer.input_dim(),
                r.c1,
                r.c2,
                r.violations,
                r.trials
            );
        }
        let d: Vec<String> = a.discrepancy.iter().map(|v| format!("{v:.3}")).collect();
        println!("  discrepancy per layer at p = {}: [{}]", a.drop_edge, d.join(", "));
    }
    Ok(())
}
