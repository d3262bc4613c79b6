//! Track the bias and robustness terms on test nodes while tuning a buffer,
//! and write the per-epoch training curves as CSV.
//!
//! ```text
//! cargo run --release --example robustness_curves -- curves.csv
//! ```

use aggbuf::buffer::{attach, BufferVariant};
use aggbuf::eval::{accuracy, write_curves_csv, Predictor};
use aggbuf::graph::{generate_sbm, SbmConfig};
use aggbuf::losses::monitor_decomposition;
use aggbuf::models::{Arch, ModelConfig};
use aggbuf::training::{pretrain, tune_buffer, TrainConfig};

fn main() -> aggbuf::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "curves.csv".into());
    let data = generate_sbm(&SbmConfig {
        n: 2000,
        classes: 4,
        p_in: 0.005,
        p_out: 0.0005,
        feature_dim: 128,
        separation: 2.0,
        num_splits: 1,
        ..SbmConfig::default()
    })?;
    let split = data.split("split_0")?.clone();
    let cfg = ModelConfig { dropout: 0.5, ..ModelConfig::new(Arch::Gcn, 128, 64, 4, 2) };
    let (base, _) = pretrain(&cfg, &TrainConfig::pretrain_default(), &data, &split)?;

    let monitor = |m: &dyn Predictor| -> aggbuf::Result<(f64, f64, f64)> {
        let (bias, robust) = monitor_decomposition(|g| m.predict_on(&data.features, g), &data.graph, &data.labels, &split.test, 0.5, 10, 99)?;
        let acc = accuracy(&m.predict_on(&data.features, &data.graph)?, &data.labels, &split.test)?;
        Ok((acc, bias, robust))
    };

    // Tune for increasing budgets to trace the test-set terms.
    println!("{:>6} {:>8} {:>8} {:>8}", "epochs", "acc", "bias", "robust");
    let bm = attach(base, BufferVariant::Full);
    let (acc, bias, robust) = monitor(&bm)?;
    println!("{:>6} {acc:>8.4} {bias:>8.4} {robust:>8.4}", 0);
    let mut last = None;
    for epochs in [10, 25, 50, 100, 200] {
        let tc = TrainConfig { max_epochs: epochs, patience: epochs, dropout: 0.5, restore_best: false, ..TrainConfig::buffer_default() };
        let (buffers, history) = tune_buffer(&bm, &tc, &data, &split)?;
        let mut tuned = bm.clone();
        tuned.set_buffers(buffers)?;
        let (acc, bias, robust) = monitor(&tuned)?;
        println!("{epochs:>6} {acc:>8.4} {bias:>8.4} {robust:>8.4}");
        last = Some(history);
    }
    if let Some(history) = last {
        write_curves_csv(&history.records, &out)?;
        println!("training curves of the longest run: {out}");
    }
    Ok(())
}
