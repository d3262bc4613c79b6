//! Pretrain a GCN on a synthetic block model, attach an aggregation buffer,
//! tune it, and compare the two models on the clean graph and with every
//! edge removed.
//!
//! ```text
//! cargo run --release --example quickstart
//! ```

use aggbuf::buffer::{attach, BufferVariant};
use aggbuf::eval::{accuracy, Predictor};
use aggbuf::graph::{generate_sbm, Graph, SbmConfig};
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
    println!("{} nodes, {} edges", data.num_nodes(), data.graph.num_edges());

    let cfg = ModelConfig { dropout: 0.5, ..ModelConfig::new(Arch::Gcn, 128, 64, 4, 2) };
    let (base, history) = pretrain(&cfg, &TrainConfig::pretrain_default(), &data, &split)?;
    println!("pretrained: best epoch {}, val {:.4}", history.best_epoch, history.best_val_acc);

    // The base is frozen by attach; only the zero-initialised buffers train.
    let bm = attach(base.clone(), BufferVariant::Full);
    let tc = TrainConfig { lambda: 1.0, drop_edge: 0.5, dropout: 0.5, ..TrainConfig::buffer_default() };
    let (buffers, history) = tune_buffer(&bm, &tc, &data, &split)?;
    println!("tuned: best epoch {}, val {:.4}", history.best_epoch, history.best_val_acc);
    let mut tuned = bm;
    tuned.set_buffers(buffers)?;

    let edgeless = Graph::empty(data.num_nodes());
    for model in [&base as &dyn Predictor, &tuned] {
        let acc = |g: &Graph| -> aggbuf::Result<f64> {
            accuracy(&model.predict_on(&data.features, g)?, &data.labels, &split.test)
        };
        println!("{:<6} clean {:.4}  no edges {:.4}", model.tag(), acc(&data.graph)?, acc(&edgeless)?);
    }
    Ok(())
}
