//! Save a base model and its buffers, reload them, and detach the buffers
//! to recover the base bit for bit.

use aggbuf::buffer::{attach, detach, BufferVariant};
use aggbuf::checkpoint::{load_any, load_model, read_buffers, save_buffers, save_model, AnyModel};
use aggbuf::graph::{generate_sbm, SbmConfig};
use aggbuf::models::{Arch, ModelConfig};
use aggbuf::training::{pretrain, tune_buffer, TrainConfig};

fn main() -> aggbuf::Result<()> {
    let dir = std::env::temp_dir().join("aggbuf-checkpoints");
    std::fs::create_dir_all(&dir)?;
    let data = generate_sbm(&SbmConfig { n: 300, classes: 3, feature_dim: 8, num_splits: 1, ..SbmConfig::default() })?;
    let split = data.split("split_0")?.clone();

    let cfg = ModelConfig::new(Arch::Sage, 8, 16, 3, 2);
    let (base, _) = pretrain(&cfg, &TrainConfig { max_epochs: 100, ..TrainConfig::pretrain_default() }, &data, &split)?;
    let base_path = dir.join("model.ckpt");
    save_model(&base, &base_path)?;
    println!("base {} ({} parameters)", base.content_hash(), base.num_parameters());

    let mut bm = attach(load_model(&base_path)?, BufferVariant::Full);
    let tc = TrainConfig { max_epochs: 50, patience: 50, restore_best: false, ..TrainConfig::buffer_default() };
    let (buffers, _) = tune_buffer(&bm, &tc, &data, &split)?;
    bm.set_buffers(buffers)?;
    let buffer_path = dir.join("buffer.ckpt");
    save_buffers(&bm, Some(&base_path), &buffer_path)?;

    let (_, meta) = read_buffers(&buffer_path)?;
    println!("buffer checkpoint: variant {}, base {}", meta.variant.name(), meta.base_hash);

    let AnyModel::Buffered(loaded) = load_any(&buffer_path)? else {
        unreachable!("a buffer checkpoint loads as a buffered model")
    };
    assert_eq!(loaded, bm);
    let restored = detach(loaded);
    assert_eq!(restored.content_hash(), base.content_hash());
    println!("detached model matches the saved base");
    Ok(())
}
