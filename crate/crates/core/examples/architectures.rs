//! Train every supported architecture on the same split and report test
//! accuracy by degree group.

use aggbuf::eval::{evaluate, EvalOptions};
use aggbuf::graph::{generate_sbm, SbmConfig};
use aggbuf::models::{Arch, ModelConfig};
use aggbuf::tensor::ActivationKind;
use aggbuf::training::{pretrain, TrainConfig};

fn main() -> aggbuf::Result<()> {
    let data = generate_sbm(&SbmConfig { n: 1200, classes: 4, feature_dim: 32, separation: 1.5, num_splits: 1, ..SbmConfig::default() })?;
    let split = data.split("split_0")?.clone();
    let tc = TrainConfig { max_epochs: 400, patience: 50, ..TrainConfig::pretrain_default() };

    println!("{:<6} {:<8} {:>8} {:>8} {:>8} {:>7}", "arch", "act", "overall", "head", "tail", "params");
    for arch in Arch::ALL {
        for activation in [ActivationKind::Relu, ActivationKind::Gelu] {
            let cfg = ModelConfig { activation, dropout: 0.5, ..ModelConfig::new(arch, 32, 64, 4, 2) };
            let (params, _) = pretrain(&cfg, &tc, &data, &split)?;
            let r = evaluate(&params, &data, "split_0", 0, &EvalOptions::default())?;
            println!(
                "{:<6} {:<8} {:>8.4} {:>8.4} {:>8.4} {:>7}",
                arch, activation, r.overall, r.head, r.tail, params.num_parameters()
            );
        }
    }
    Ok(())
}
