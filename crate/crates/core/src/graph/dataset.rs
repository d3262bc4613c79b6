//! Dataset directory format (all binaries little-endian):
//!
//! - `meta.json`: `{"name", "num_nodes", "num_features", "num_classes"}`
//! - `edges.bin`: `(u: u32, v: u32)` pairs, one per undirected edge
//! - `features.bin`: `num_nodes × num_features` `f32`, row-major
//! - `labels.bin`: `num_nodes` `u16` class indices
//! - `splits.json`: `{"split_<k>": {"train": [..], "val": [..], "test": [..]}}`

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    fn validate(&self, n: usize) -> std::result::Result<(), String> {
        let mut seen = HashSet::new();
        for &id in self.train.iter().chain(&self.val).chain(&self.test) {
            if id >= n {
                return Err(format!("node id {id} out of range"));
            }
            if !seen.insert(id) {
                return Err(format!("node {id} appears in more than one split list"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub graph: Graph,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: BTreeMap<String, Split>,
}

impl DatasetBundle {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn split(&self, name: &str) -> Result<&Split> {
        self.splits
            .get(name)
            .ok_or_else(|| Error::Config(format!("dataset `{}` has no split `{name}`", self.name)))
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            num_nodes: self.num_nodes(),
            num_features: self.features.cols(),
            num_classes: self.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        let fail = |m: String| Err(Error::Contract(format!("dataset `{}`: {m}", self.name)));
        if self.features.rows() != n {
            return fail(format!("{} feature rows for {n} nodes", self.features.rows()));
        }
        if !self.features.is_finite() {
            return fail("non-finite feature".into());
        }
        if self.labels.len() != n {
            return fail(format!("{} labels for {n} nodes", self.labels.len()));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return fail(format!("label {l} out of range"));
        }
        for (name, s) in &self.splits {
            if let Err(m) = s.validate(n) {
                return fail(format!("split {name}: {m}"));
            }
        }
        Ok(())
    }
}

pub fn save_dataset(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    bundle.validate()?;
    if bundle.num_nodes() > u32::MAX as usize || bundle.num_classes > u16::MAX as usize + 1 {
        return Err(Error::Unsupported("dataset too large for the binary format".into()));
    }
    fs::create_dir_all(dir)?;
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&bundle.meta())?)?;

    let mut edges = Vec::with_capacity(bundle.graph.num_edges() * 8);
    for &(u, v) in bundle.graph.edges() {
        edges.extend_from_slice(&(u as u32).to_le_bytes());
        edges.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fs::write(dir.join("edges.bin"), edges)?;

    let features: Vec<u8> = bundle.features.data().iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
    fs::write(dir.join("features.bin"), features)?;

    let labels: Vec<u8> = bundle.labels.iter().flat_map(|&l| (l as u16).to_le_bytes()).collect();
    fs::write(dir.join("labels.bin"), labels)?;

    fs::write(dir.join("splits.json"), serde_json::to_vec(&bundle.splits)?)?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let read = |name: &str| fs::read(dir.join(name)).map_err(|e| Error::load(dir.join(name), e.to_string()));

    let meta: DatasetMeta = serde_json::from_slice(&read("meta.json")?)
        .map_err(|e| Error::load(dir.join("meta.json"), format!("malformed header: {e}")))?;
    let n = meta.num_nodes;

    let raw = read("edges.bin")?;
    if raw.len() % 8 != 0 {
        return Err(Error::load(dir.join("edges.bin"), format!("length {} is not a multiple of 8", raw.len())));
    }
    let mut pairs = Vec::with_capacity(raw.len() / 8);
    for chunk in raw.chunks_exact(8) {
        let u = u32::from_le_bytes(chunk[..4].try_into().unwrap()) as usize;
        let v = u32::from_le_bytes(chunk[4..].try_into().unwrap()) as usize;
        if u >= n || v >= n {
            return Err(Error::load(dir.join("edges.bin"), format!("edge ({u}, {v}) with {n} nodes")));
        }
        pairs.push((u, v));
    }
    let graph = Graph::from_edges(n, pairs)?;

    let raw = read("features.bin")?;
    let expected = n * meta.num_features * 4;
    if raw.len() != expected {
        return Err(Error::load(
            dir.join("features.bin"),
            format!("length mismatch: {} bytes, expected {expected}", raw.len()),
        ));
    }
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    let features = Matrix::new(n, meta.num_features, data)?;

    let raw = read("labels.bin")?;
    if raw.len() != n * 2 {
        return Err(Error::load(
            dir.join("labels.bin"),
            format!("length mismatch: {} bytes, expected {}", raw.len(), n * 2),
        ));
    }
    let labels: Vec<usize> = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as usize).collect();
    if let Some(&l) = labels.iter().find(|&&l| l >= meta.num_classes) {
        return Err(Error::load(
            dir.join("labels.bin"),
            format!("label {l} out of range for {} classes", meta.num_classes),
        ));
    }

    let splits: BTreeMap<String, Split> = serde_json::from_slice(&read("splits.json")?)
        .map_err(|e| Error::load(dir.join("splits.json"), format!("malformed splits: {e}")))?;
    for (name, s) in &splits {
        s.validate(n).map_err(|m| Error::load(dir.join("splits.json"), format!("{name}: {m}")))?;
    }

    Ok(DatasetBundle { name: meta.name, graph, features, labels, num_classes: meta.num_classes, splits })
}
