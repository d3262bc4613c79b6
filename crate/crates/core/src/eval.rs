//! Accuracy, degree and homophily grouping, edge-removal sweeps and report
//! files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::{predict_buffered, BufferedModel};
use crate::error::{Error, Result};
use crate::graph::{drop_edges, node_degrees, node_homophily, DatasetBundle, Graph};
use crate::models::{predict, GraphView, ModelParams};
use crate::rng::derived;
use crate::tensor::Matrix;
use crate::training::EpochRecord;

/// Anything that maps features on a graph to log-probabilities.
pub trait Predictor: Sync {
    fn predict_on(&self, x: &Matrix, g: &Graph) -> Result<Matrix>;
    fn tag(&self) -> String;
}

impl Predictor for ModelParams {
    fn predict_on(&self, x: &Matrix, g: &Graph) -> Result<Matrix> {
        predict(self, x, &GraphView::new(g, &self.config))
    }

    fn tag(&self) -> String {
        self.config.arch.name().to_uppercase()
    }
}

impl Predictor for BufferedModel {
    fn predict_on(&self, x: &Matrix, g: &Graph) -> Result<Matrix> {
        predict_buffered(self, x, &GraphView::new(g, self.config()))
    }

    fn tag(&self) -> String {
        format!("{}_B", self.config().arch.name().to_uppercase())
    }
}

/// Fraction of `nodes` whose argmax prediction (lowest index on ties) equals
/// the label.
pub fn accuracy(logq: &Matrix, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::Contract("accuracy over an empty node set".into()));
    }
    let mut correct = 0usize;
    for &i in nodes {
        if i >= logq.rows() || i >= labels.len() {
            return Err(Error::dim("accuracy", format!("node {i} out of range")));
        }
        correct += usize::from(logq.argmax_row(i) == labels[i]);
    }
    Ok(correct as f64 / nodes.len() as f64)
}

/// `(head, tail)`: the top and bottom `⌊n/3⌋` test nodes by `(degree, id)`.
pub fn degree_groups(g: &Graph, test: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let deg = node_degrees(g);
    let mut sorted = test.to_vec();
    sorted.sort_by_key(|&i| (deg[i], i));
    thirds(sorted)
}

/// `(homophilous, heterophilous)`: the top and bottom thirds by
/// `(homophily, id)`; isolated nodes are excluded first.
pub fn homophily_groups(g: &Graph, labels: &[usize], test: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let h = node_homophily(g, labels)?;
    let mut ranked: Vec<(f64, usize)> = test.iter().filter_map(|&i| h[i].map(|v| (v, i))).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(thirds(ranked.into_iter().map(|(_, i)| i).collect()))
}

fn thirds(sorted: Vec<usize>) -> (Vec<usize>, Vec<usize>) {
    let k = sorted.len() / 3;
    let low = sorted[..k].to_vec();
    let high = sorted[sorted.len() - k..].to_vec();
    (high, low)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalPoint {
    /// Fraction of edges kept.
    pub ratio: f64,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Test accuracy on random subgraphs keeping a fraction `ratio` of edges.
///
/// Ratio 1.0 evaluates the intact graph. Cell `(r, s)` samples its mask from
/// the generator derived from `(seeds[s], r)`.
pub fn edge_removal_sweep<P: Predictor + ?Sized>(
    model: &P,
    data: &DatasetBundle,
    test: &[usize],
    ratios: &[f64],
    seeds: &[u64],
) -> Result<Vec<RemovalPoint>> {
    if let Some(&r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::InvalidRate { what: "edge removal keep ratio", rate: r });
    }
    if seeds.is_empty() {
        return Err(Error::Config("edge removal sweep needs at least one seed".into()));
    }
    let cells: Vec<(usize, usize)> = (0..ratios.len()).flat_map(|r| (0..seeds.len()).map(move |s| (r, s))).collect();
    let accs = cells
        .par_iter()
        .map(|&(r, s)| {
            let ratio = ratios[r];
            let logq = if ratio == 1.0 {
                model.predict_on(&data.features, &data.graph)?
            } else {
                let (_, kept) = drop_edges(&data.graph, 1.0 - ratio, &mut derived(seeds[s], r as u64))?;
                model.predict_on(&data.features, &kept)?
            };
            accuracy(&logq, &data.labels, test)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ratios
        .iter()
        .enumerate()
        .map(|(r, &ratio)| {
            let accuracies = accs[r * seeds.len()..(r + 1) * seeds.len()].to_vec();
            let (mean, std) = mean_std(&accuracies);
            RemovalPoint { ratio, accuracies, mean, std }
        })
        .collect())
}

/// Mean and unbiased standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSizes {
    pub test: usize,
    pub head: usize,
    pub tail: usize,
    pub homophilous: usize,
    pub heterophilous: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub seed: u64,
    pub split: String,
    pub overall: f64,
    pub head: f64,
    pub tail: f64,
    pub homophilous: f64,
    pub heterophilous: f64,
    pub group_sizes: GroupSizes,
    pub removal: Vec<RemovalPoint>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub removal_ratios: Vec<f64>,
    pub removal_seeds: Vec<u64>,
}

fn group_accuracy(logq: &Matrix, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() { Ok(f64::NAN) } else { accuracy(logq, labels, nodes) }
}

/// Overall, grouped and (optionally) edge-removal test accuracy.
pub fn evaluate<P: Predictor + ?Sized>(
    model: &P,
    data: &DatasetBundle,
    split: &str,
    seed: u64,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let test = &data.split(split)?.test;
    let logq = model.predict_on(&data.features, &data.graph)?;
    let (head, tail) = degree_groups(&data.graph, test);
    let (homo, hetero) = homophily_groups(&data.graph, &data.labels, test)?;
    let removal = if opts.removal_ratios.is_empty() {
        Vec::new()
    } else {
        let seeds = if opts.removal_seeds.is_empty() { vec![seed] } else { opts.removal_seeds.clone() };
        edge_removal_sweep(model, data, test, &opts.removal_ratios, &seeds)?
    };
    Ok(MetricsReport {
        model: model.tag(),
        seed,
        split: split.to_string(),
        overall: accuracy(&logq, &data.labels, test)?,
        head: group_accuracy(&logq, &data.labels, &head)?,
        tail: group_accuracy(&logq, &data.labels, &tail)?,
        homophilous: group_accuracy(&logq, &data.labels, &homo)?,
        heterophilous: group_accuracy(&logq, &data.labels, &hetero)?,
        group_sizes: GroupSizes {
            test: test.len(),
            head: head.len(),
            tail: tail.len(),
            homophilous: homo.len(),
            heterophilous: hetero.len(),
        },
        removal,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<MetricsReport>,
    pub aggregate: BTreeMap<String, Stat>,
}

impl Report {
    pub fn new(runs: Vec<MetricsReport>) -> Self {
        let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &runs {
            let scalars = [
                ("overall", r.overall),
                ("head", r.head),
                ("tail", r.tail),
                ("homophilous", r.homophilous),
                ("heterophilous", r.heterophilous),
            ];
            for (k, v) in scalars {
                columns.entry(k.to_string()).or_default().push(v);
            }
            for p in &r.removal {
                columns.entry(format!("removal_{:.2}", p.ratio)).or_default().push(p.mean);
            }
        }
        let aggregate = columns
            .into_iter()
            .map(|(k, v)| {
                let (mean, std) = mean_std(&v);
                (k, Stat { mean, std })
            })
            .collect();
        Self { runs, aggregate }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Writes `{runs, aggregate}` as pretty JSON and returns the report.
pub fn emit_report(runs: Vec<MetricsReport>, path: impl AsRef<Path>) -> Result<Report> {
    let report = Report::new(runs);
    fs::write(path, report.to_json()? + "\n")?;
    Ok(report)
}

/// Epoch curves as CSV for external plotting.
pub fn write_curves_csv(records: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "epoch,train_loss,bias_term,robust_term,val_acc")?;
    for r in records {
        writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, r.bias_term, r.robust_term, r.val_acc)?;
    }
    Ok(())
}
