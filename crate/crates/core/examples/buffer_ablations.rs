//! Buffer variants and tuning objectives on one pretrained GCN.
//!
//! Edge-aware variants scale their input by `1/(d+1)` and can compensate
//! for missing edges; the JK-style and residual variants cannot. The epoch
//! column is the early-stopping pick; epoch 0 means the zero buffers won.

use aggbuf::buffer::{attach, BufferVariant};
use aggbuf::eval::{edge_removal_sweep, Predictor};
use aggbuf::graph::{generate_sbm, SbmConfig};
use aggbuf::losses::{monitor_decomposition, ObjectiveKind};
use aggbuf::models::{Arch, ModelConfig};
use aggbuf::training::{pretrain, tune_buffer, TrainConfig};

fn main() -> aggbuf::Result<()> {
    let data = generate_sbm(&SbmConfig {
        n: 2000,
        classes: 4,
        p_in: 0.005,
        p_out: 0.0005,
        feature_dim: 128,
        separation: 2.0,
        seed: 1,
        num_splits: 1,
        ..SbmConfig::default()
    })?;
    let split = data.split("split_0")?.clone();
    let cfg = ModelConfig { dropout: 0.5, ..ModelConfig::new(Arch::Gcn, 128, 64, 4, 2) };
    let (base, _) = pretrain(&cfg, &TrainConfig::pretrain_default(), &data, &split)?;

    let report = |name: &str, epoch: usize, model: &dyn Predictor| -> aggbuf::Result<()> {
        let sweep = edge_removal_sweep(model, &data, &split.test, &[1.0, 0.5, 0.0], &[0, 1, 2])?;
        let (_, robust) = monitor_decomposition(|g| model.predict_on(&data.features, g), &data.graph, &data.labels, &split.test, 0.5, 10, 7)?;
        println!("{name:<24} epoch {epoch:>4}  keep 1.0 {:.4}  0.5 {:.4}  0.0 {:.4}  robust {robust:.4}", sweep[0].mean, sweep[1].mean, sweep[2].mean);
        Ok(())
    };
    report("base", 0, &base)?;

    let tc = TrainConfig { dropout: 0.5, ..TrainConfig::buffer_default() };
    for variant in BufferVariant::ALL {
        let mut bm = attach(base.clone(), variant);
        let (buffers, history) = tune_buffer(&bm, &tc, &data, &split)?;
        bm.set_buffers(buffers)?;
        report(&format!("variant {}", variant.name()), history.best_epoch, &bm)?;
    }
    for objective in ObjectiveKind::ALL {
        let mut bm = attach(base.clone(), BufferVariant::Full);
        let (buffers, history) = tune_buffer(&bm, &TrainConfig { objective, ..tc.clone() }, &data, &split)?;
        bm.set_buffers(buffers)?;
        report(&format!("objective {}", objective.name()), history.best_epoch, &bm)?;
    }
    Ok(())
}
