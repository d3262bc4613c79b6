//! Rank buffer hyperparameters on a fixed base model. Every grid point gets
//! seeds derived from the master seed and its index, so the ranking is
//! reproducible and independent of the thread count.

use aggbuf::buffer::BufferVariant;
use aggbuf::graph::{generate_sbm, SbmConfig};
use aggbuf::models::{Arch, ModelConfig};
use aggbuf::training::{buffer_sweep, pretrain, BufferSpace, TrainConfig};

fn main() -> aggbuf::Result<()> {
    let data = generate_sbm(&SbmConfig { n: 800, classes: 4, feature_dim: 32, num_splits: 1, ..SbmConfig::default() })?;
    let split = data.split("split_0")?.clone();
    let cfg = ModelConfig { dropout: 0.5, ..ModelConfig::new(Arch::Gcn, 32, 64, 4, 2) };
    let (base, _) = pretrain(&cfg, &TrainConfig::pretrain_default(), &data, &split)?;

    let space = BufferSpace::default();
    let template = TrainConfig { max_epochs: 200, patience: 30, ..TrainConfig::buffer_default() };
    let ranked = buffer_sweep(&base, BufferVariant::Full, &template, &space, &data, &split, 2, 42)?;
    println!("{} points, top 5 by mean validation accuracy:", ranked.len());
    for e in ranked.iter().take(5) {
        let t = &e.point;
        println!("  {:.4}  lambda {:<4} drop_edge {:<4} dropout {:<4} scores {:?}", e.mean, t.lambda, t.drop_edge, t.dropout, e.scores);
    }
    Ok(())
}
