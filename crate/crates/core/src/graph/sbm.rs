use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetBundle, Graph, Split};
use crate::error::{Error, Result};
use crate::rng::{derived, seeded};
use crate::tensor::Matrix;

/// Stochastic block model with Gaussian class-conditional features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub n: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Length of each class-mean vector.
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
    pub num_splits: usize,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            classes: 4,
            p_in: 0.02,
            p_out: 0.002,
            feature_dim: 16,
            separation: 1.0,
            noise: 1.0,
            seed: 0,
            num_splits: 10,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sbm: {m}")));
        if self.n == 0 || self.classes == 0 {
            return bad("n and classes must be positive");
        }
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return bad("need 0 <= p_out <= p_in <= 1");
        }
        if !(self.noise > 0.0) {
            return bad("noise must be positive");
        }
        if self.feature_dim < self.classes {
            return bad("feature_dim must be at least the number of classes");
        }
        if self.num_splits == 0 {
            return bad("num_splits must be positive");
        }
        Ok(())
    }

    /// Parses `key=value` pairs separated by commas, e.g. `n=1000,classes=4`.
    pub fn parse_overrides(&mut self, spec: &str) -> Result<()> {
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("sbm: expected key=value, got `{part}`")))?;
            let v = v.trim();
            let num = |what: &str| -> Result<f64> {
                v.parse::<f64>().map_err(|_| Error::Config(format!("sbm: bad {what} `{v}`")))
            };
            let int = |what: &str| -> Result<usize> {
                v.parse::<usize>().map_err(|_| Error::Config(format!("sbm: bad {what} `{v}`")))
            };
            match k.trim() {
                "n" => self.n = int("n")?,
                "classes" | "c" => self.classes = int("classes")?,
                "p_in" => self.p_in = num("p_in")?,
                "p_out" => self.p_out = num("p_out")?,
                "feature_dim" | "d" => self.feature_dim = int("feature_dim")?,
                "separation" | "mu" => self.separation = num("separation")?,
                "noise" | "sigma" => self.noise = num("noise")?,
                "seed" => self.seed = int("seed")? as u64,
                "splits" => self.num_splits = int("splits")?,
                other => return Err(Error::Config(format!("sbm: unknown key `{other}`"))),
            }
        }
        Ok(())
    }
}

/// Samples a block-model dataset.
///
/// Labels are balanced (`i mod C`, then shuffled). Class `c` has mean
/// `separation · e_c`; features are rounded through `f32` so the bundle
/// survives a save/load round trip unchanged.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<DatasetBundle> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);

    let mut labels: Vec<usize> = (0..cfg.n).map(|i| i % cfg.classes).collect();
    labels.shuffle(&mut rng);

    let mut edges = Vec::new();
    for u in 0..cfg.n {
        for v in (u + 1)..cfg.n {
            let p = if labels[u] == labels[v] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::from_edges(cfg.n, edges)?;

    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(format!("sbm noise: {e}")))?;
    let features = Matrix::from_fn(cfg.n, cfg.feature_dim, |i, j| {
        let mean = if j == labels[i] { cfg.separation } else { 0.0 };
        (mean + noise.sample(&mut rng)) as f32 as f64
    });

    let splits = (0..cfg.num_splits)
        .map(|k| (format!("split_{k}"), random_split(cfg.n, &mut derived(cfg.seed, k as u64))))
        .collect();

    Ok(DatasetBundle {
        name: format!("sbm-n{}-c{}-s{}", cfg.n, cfg.classes, cfg.seed),
        graph,
        features,
        labels,
        num_classes: cfg.classes,
        splits,
    })
}

/// Random 10% / 10% / 80% train/val/test partition.
pub fn random_split<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Split {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let n_train = (n as f64 * 0.1).round() as usize;
    let n_val = (n as f64 * 0.1).round() as usize;
    let mut train = ids[..n_train].to_vec();
    let mut val = ids[n_train..n_train + n_val].to_vec();
    let mut test = ids[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Split { train, val, test }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let cfg = SbmConfig { n: 120, seed: 5, ..Default::default() };
        assert_eq!(generate_sbm(&cfg).unwrap(), generate_sbm(&cfg).unwrap());
    }

    #[test]
    fn no_inter_class_edges_when_p_out_zero() {
        let cfg = SbmConfig { n: 200, classes: 2, p_in: 0.1, p_out: 0.0, ..Default::default() };
        let b = generate_sbm(&cfg).unwrap();
        assert!(b.graph.num_edges() > 0);
        assert!(b.graph.edges().iter().all(|&(u, v)| b.labels[u] == b.labels[v]));
    }

    #[test]
    fn split_proportions() {
        let cfg = SbmConfig { n: 1000, ..Default::default() };
        let b = generate_sbm(&cfg).unwrap();
        let s = &b.splits["split_0"];
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (100, 100, 800));
        assert_eq!(b.splits.len(), 10);
        b.validate().unwrap();
    }

    #[test]
    fn overrides_parse() {
        let mut cfg = SbmConfig::default();
        cfg.parse_overrides("n=1000, classes=4,p_in=0.03").unwrap();
        assert_eq!((cfg.n, cfg.classes, cfg.p_in), (1000, 4, 0.03));
        assert!(cfg.parse_overrides("bogus=1").is_err());
        let bad = SbmConfig { p_out: 0.5, p_in: 0.1, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
