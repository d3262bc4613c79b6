//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use aggbuf::analysis::{bound_suite, condition_suite, witness_suite, SuiteOptions};
use aggbuf::buffer::{attach, detach, BufferVariant};
use aggbuf::checkpoint::{load_any, load_model, AnyModel};
use aggbuf::cli;
use aggbuf::eval::{accuracy, edge_removal_sweep, Predictor};
use aggbuf::graph::{generate_sbm, SbmConfig};
use aggbuf::losses::monitor_decomposition;
use aggbuf::models::{Arch, ModelConfig};
use aggbuf::training::{pretrain, tune_buffer, TrainConfig};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

fn gradients() -> aggbuf::Result<Outcome> {
    let start = Instant::now();
    let cases = (0..125).map(common::gradient_case).collect::<aggbuf::Result<Vec<_>>>()?;
    let secs = start.elapsed().as_secs_f64();
    let worst = cases.iter().max_by(|a, b| a.check.max_rel_err.total_cmp(&b.check.max_rel_err)).unwrap();
    let entries: usize = cases.iter().map(|c| c.check.entries).sum();
    Ok(outcome(
        "autodiff gradients vs central differences",
        worst.check.max_rel_err < 1e-5 && secs < 60.0,
        format!(
            "{} compositions, {entries} entries, max rel err {:.2e} ({}), {secs:.1}s",
            cases.len(),
            worst.check.max_rel_err,
            worst.label
        ),
    ))
}

fn bounds(out: &mut Vec<Outcome>) -> aggbuf::Result<()> {
    let opts = SuiteOptions::default();
    let reports = bound_suite(&opts)?;
    let summarize = |prefix: &[&str]| {
        let picked: Vec<_> = reports.iter().filter(|r| prefix.iter().any(|p| r.arch == *p)).collect();
        let pass = picked.len() == prefix.len() && picked.iter().all(|r| r.violations == 0 && r.trials >= 1000);
        let detail = picked
            .iter()
            .map(|r| format!("{} {}/{} (max ratio {:.3})", r.arch, r.violations, r.trials, r.max_ratio))
            .collect::<Vec<_>>()
            .join(", ");
        (pass, detail)
    };
    let (pass, detail) = summarize(&["mlp-cascade-relu", "mlp-cascade-sigmoid"]);
    out.push(outcome("MLP cascade discrepancy bound", pass, format!("violations: {detail}")));
    let (pass, detail) = summarize(&["gcn-sym", "gcn-rw", "gcn-regular", "sage", "gin"]);
    out.push(outcome(
        "GNN layer discrepancy bounds under DropEdge",
        pass,
        format!("|V| <= {}, violations: {detail}", opts.max_nodes),
    ));

    let w = witness_suite(&opts)?;
    out.push(outcome(
        "zero-input-discrepancy witness for GCN",
        w.found == opts.witness_instances && w.instances == 50,
        format!("{}/{} found within {} attempts (max used {})", w.found, w.instances, opts.witness_attempts, w.max_attempts_used),
    ));

    let conditions = condition_suite(&opts)?;
    let get = |v: BufferVariant| conditions.iter().find(|c| c.variant == v).unwrap();
    let stable = [BufferVariant::Full, BufferVariant::SingleLayer]
        .iter()
        .all(|&v| get(v).qualified >= 1000 && get(v).c1_failures == 0 && get(v).c2_failures == 0);
    let unaware = [BufferVariant::JkNetStyle, BufferVariant::ResidualStyle]
        .iter()
        .all(|&v| get(v).qualified >= 1000 && get(v).c1_failures == get(v).qualified);
    let detail = conditions
        .iter()
        .map(|c| format!("{} C1 {}/{} C2 {}/{}", c.variant.name(), c.c1_failures, c.qualified, c.c2_failures, c.qualified))
        .collect::<Vec<_>>()
        .join(", ");
    out.push(outcome("buffer edge-awareness and stability conditions", stable && unaware, format!("failures: {detail}")));
    Ok(())
}

fn zero_init() -> aggbuf::Result<Outcome> {
    let sbm = SbmConfig { n: 300, classes: 3, feature_dim: 12, seed: 5, num_splits: 1, ..SbmConfig::default() };
    let data = generate_sbm(&sbm)?;
    let split = data.split("split_0")?.clone();
    let mut worst_step0 = 0.0f64;
    let mut restored = true;
    let mut checked = 0;
    for arch in Arch::ALL {
        let cfg = ModelConfig { dropout: 0.3, ..ModelConfig::new(arch, 12, 16, 3, 2) };
        let tc = TrainConfig { max_epochs: 60, patience: 20, seed: 1, ..TrainConfig::pretrain_default() };
        let (base, _) = pretrain(&cfg, &tc, &data, &split)?;
        let reference = base.predict_on(&data.features, &data.graph)?;
        for variant in BufferVariant::ALL {
            let bm = attach(base.clone(), variant);
            let step0 = bm.predict_on(&data.features, &data.graph)?;
            worst_step0 = worst_step0.max(step0.max_abs_diff(&reference)?);
            // keep the last step so the buffers are certainly non-zero
            let btc = TrainConfig { max_epochs: 15, patience: 15, seed: 2, restore_best: false, ..TrainConfig::buffer_default() };
            let (buffers, _) = tune_buffer(&bm, &btc, &data, &split)?;
            let mut tuned = bm.clone();
            tuned.set_buffers(buffers)?;
            let back = detach(tuned.clone());
            let same = back == base
                && back.content_hash() == base.content_hash()
                && back.predict_on(&data.features, &data.graph)? == reference;
            restored &= same && !tuned.buffers.is_zero();
            checked += 1;
        }
    }
    Ok(outcome(
        "zero-init equivalence and bitwise detach",
        worst_step0 == 0.0 && restored,
        format!("{checked} arch/variant pairs, max step-0 difference {worst_step0:e}, detach restored: {restored}"),
    ))
}

struct SeedResult {
    robust_before: f64,
    robust_after: f64,
    acc_base: f64,
    acc_buffered: f64,
    drop_base: f64,
    drop_buffered: f64,
}

/// Homophilous block model with sparse edges where a 2-layer GCN benefits
/// from the graph but many test nodes are low-degree.
fn synthetic_seed(seed: u64) -> aggbuf::Result<SeedResult> {
    let sbm = SbmConfig {
        n: 2000,
        classes: 4,
        p_in: 0.005,
        p_out: 0.0005,
        feature_dim: 128,
        separation: 2.0,
        noise: 1.0,
        seed,
        num_splits: 1,
    };
    let data = generate_sbm(&sbm)?;
    let split = data.split("split_0")?.clone();
    let cfg = ModelConfig { dropout: 0.5, ..ModelConfig::new(Arch::Gcn, 128, 64, 4, 2) };
    let tc = TrainConfig { seed, max_epochs: 1000, ..TrainConfig::pretrain_default() };
    let (base, _) = pretrain(&cfg, &tc, &data, &split)?;
    let bm = attach(base.clone(), BufferVariant::Full);
    let btc = TrainConfig { seed, max_epochs: 1000, lambda: 1.0, drop_edge: 0.5, dropout: 0.5, ..TrainConfig::buffer_default() };
    let (buffers, _) = tune_buffer(&bm, &btc, &data, &split)?;
    let mut tuned = bm.clone();
    tuned.set_buffers(buffers)?;

    let monitor = |m: &dyn Predictor| {
        monitor_decomposition(|g| m.predict_on(&data.features, g), &data.graph, &data.labels, &split.test, 0.5, 10, 99)
    };
    let (_, robust_before) = monitor(&bm)?;
    let (_, robust_after) = monitor(&tuned)?;
    let acc = |m: &dyn Predictor| -> aggbuf::Result<f64> {
        accuracy(&m.predict_on(&data.features, &data.graph)?, &data.labels, &split.test)
    };
    let drop = |m: &dyn Predictor| -> aggbuf::Result<f64> {
        let sweep = edge_removal_sweep(m, &data, &split.test, &[1.0, 0.0], &[seed])?;
        Ok(sweep[0].mean - sweep[1].mean)
    };
    Ok(SeedResult {
        robust_before,
        robust_after,
        acc_base: acc(&base)?,
        acc_buffered: acc(&tuned)?,
        drop_base: drop(&base)?,
        drop_buffered: drop(&tuned)?,
    })
}

fn synthetic(out: &mut Vec<Outcome>) -> aggbuf::Result<()> {
    let start = Instant::now();
    let runs = (0..5).map(synthetic_seed).collect::<aggbuf::Result<Vec<_>>>()?;
    let secs = start.elapsed().as_secs_f64();
    let mean = |f: &dyn Fn(&SeedResult) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let reduction = mean(&|r| 1.0 - r.robust_after / r.robust_before);
    let acc_delta = 100.0 * mean(&|r| r.acc_buffered - r.acc_base);
    out.push(outcome(
        "robustness term reduction on a synthetic block model",
        reduction >= 0.30 && acc_delta >= -0.3 && secs < 300.0,
        format!(
            "mean reduction {:.1}% (robust {:.4} -> {:.4}), accuracy {:+.2} points, {secs:.0}s for 5 seeds",
            100.0 * reduction,
            mean(&|r| r.robust_before),
            mean(&|r| r.robust_after),
            acc_delta
        ),
    ));
    let (drop_base, drop_buffered) = (mean(&|r| r.drop_base), mean(&|r| r.drop_buffered));
    out.push(outcome(
        "smaller accuracy drop from full to no edges",
        drop_buffered < drop_base,
        format!("GCN {:.2} points, GCN_B {:.2} points", 100.0 * drop_base, 100.0 * drop_buffered),
    ));
    Ok(())
}

fn pipeline(dir: &Path, threads: usize) -> aggbuf::Result<()> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    let d = |s: &str| dir.join(s).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["generate".into(), "--sbm".into(), "n=300,classes=3,d=16,separation=1.5".into(), "--seed".into(), "7".into(), "--out".into(), d("data")],
        vec!["pretrain".into(), "--data".into(), d("data"), "--hidden".into(), "16".into(), "--set".into(), "max_epochs=80".into(), "--set".into(), "patience=30".into(), "--out".into(), d("pre")],
        vec!["tune".into(), "--base".into(), d("pre/model.ckpt"), "--data".into(), d("data"), "--lambda".into(), "0.5".into(), "--drop-edge".into(), "0.2".into(), "--set".into(), "max_epochs=40".into(), "--set".into(), "patience=20".into(), "--set".into(), "buffer_dropout=0.5".into(), "--out".into(), d("tune")],
        vec!["eval".into(), "--model".into(), d("tune/buffer.ckpt"), "--data".into(), d("data"), "--removal".into(), "1.0,0.75,0.5,0.25,0.0".into(), "--out".into(), d("eval")],
        vec!["analyze".into(), "--trials".into(), "60".into(), "--set".into(), "instances=6".into(), "--set".into(), "witness_instances=6".into(), "--set".into(), "condition_trials=40".into(), "--out".into(), d("analyze")],
    ];
    for args in steps {
        let argv = std::iter::once("aggbuf".to_string()).chain(args.iter().cloned());
        let code = pool.install(|| cli::run(argv));
        if code != 0 {
            return Err(aggbuf::Error::Contract(format!("`{}` exited with {code}", args[0])));
        }
    }
    Ok(())
}

fn determinism() -> aggbuf::Result<Outcome> {
    let root = tempfile::tempdir()?;
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    pipeline(&a, 1)?;
    pipeline(&b, 4)?;
    let files = [
        "data/edges.bin",
        "data/features.bin",
        "data/splits.json",
        "pre/model.ckpt",
        "pre/history.jsonl",
        "pre/summary.json",
        "tune/history.jsonl",
        "tune/summary.json",
        "eval/report.json",
        "eval/base_report.json",
        "analyze/analysis.json",
    ];
    let mut differing: Vec<&str> = files.iter().copied().filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok()).collect();
    // buffer checkpoints record their base path, so compare their contents
    let buffers = |dir: &Path| match load_any(dir.join("tune/buffer.ckpt")) {
        Ok(AnyModel::Buffered(bm)) => Some(bm.buffers.content_hash()),
        _ => None,
    };
    if buffers(&a).is_none() || buffers(&a) != buffers(&b) {
        differing.push("tune/buffer.ckpt");
    }
    let base_hash = load_model(a.join("pre/model.ckpt"))?.content_hash();
    Ok(outcome(
        "byte-identical reports across runs and thread counts",
        differing.is_empty(),
        format!("{} artifacts compared (1 vs 4 threads), differing: {differing:?}, base {}", files.len() + 1, &base_hash[..12]),
    ))
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    let record = |r: aggbuf::Result<Outcome>, name: &'static str, results: &mut Vec<Outcome>| match r {
        Ok(o) => results.push(o),
        Err(e) => results.push(outcome(name, false, format!("error: {e}"))),
    };
    record(gradients(), "autodiff gradients vs central differences", &mut results);
    if let Err(e) = bounds(&mut results) {
        results.push(outcome("bound, witness and condition suites", false, format!("error: {e}")));
    }
    record(zero_init(), "zero-init equivalence and bitwise detach", &mut results);
    if let Err(e) = synthetic(&mut results) {
        results.push(outcome("synthetic block-model criteria", false, format!("error: {e}")));
    }
    record(determinism(), "byte-identical reports across runs and thread counts", &mut results);

    for r in &results {
        println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
