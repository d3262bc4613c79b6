use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// `A`
    Regular,
    /// `D⁻¹A`
    RandomWalk,
    /// `D^{-1/2} A D^{-1/2}`
    Symmetric,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Regular => "regular",
            Self::RandomWalk => "rw",
            Self::Symmetric => "sym",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "regular" | "reg" | "none" => Ok(Self::Regular),
            "rw" | "random_walk" | "randomwalk" => Ok(Self::RandomWalk),
            "sym" | "symmetric" => Ok(Self::Symmetric),
            _ => Err(Error::Unsupported(format!("normalization `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormScheme {
    pub kind: NormKind,
    /// Normalise `A + I` instead of `A`.
    pub add_self_loops: bool,
}

impl NormScheme {
    pub const fn new(kind: NormKind, add_self_loops: bool) -> Self {
        Self { kind, add_self_loops }
    }

    pub const fn symmetric() -> Self {
        Self::new(NormKind::Symmetric, true)
    }

    pub const fn random_walk() -> Self {
        Self::new(NormKind::RandomWalk, true)
    }

    pub const fn raw() -> Self {
        Self::new(NormKind::Regular, false)
    }
}

impl Default for NormScheme {
    fn default() -> Self {
        Self::symmetric()
    }
}

/// Normalised aggregation matrix for `g`.
///
/// Fails when a node has no neighbours, no self-loop, and a normalised scheme
/// is requested.
pub fn normalize(g: &Graph, scheme: NormScheme) -> Result<CsrMatrix> {
    build(g, scheme, true)
}

/// Like [`normalize`], but isolated nodes without self-loops keep an all-zero
/// row.
pub fn normalize_or_zero(g: &Graph, scheme: NormScheme) -> CsrMatrix {
    build(g, scheme, false).expect("lenient normalisation cannot fail")
}

fn build(g: &Graph, scheme: NormScheme, strict: bool) -> Result<CsrMatrix> {
    let n = g.num_nodes();
    let loop_w = if scheme.add_self_loops { 1.0 } else { 0.0 };
    let deg: Vec<f64> = (0..n).map(|i| g.adjacency().row_nnz(i) as f64 + loop_w).collect();
    if strict && scheme.kind != NormKind::Regular {
        if let Some(node) = deg.iter().position(|&d| d == 0.0) {
            return Err(Error::DegreeZero { node });
        }
    }
    let inv = |d: f64, f: fn(f64) -> f64| if d > 0.0 { f(d) } else { 0.0 };
    let weight = |i: usize, j: usize| -> f64 {
        match scheme.kind {
            NormKind::Regular => 1.0,
            NormKind::RandomWalk => inv(deg[i], |d| 1.0 / d),
            NormKind::Symmetric => inv(deg[i], |d| 1.0 / d.sqrt()) * inv(deg[j], |d| 1.0 / d.sqrt()),
        }
    };
    let mut triplets = Vec::with_capacity(g.adjacency().nnz() + n);
    for i in 0..n {
        if scheme.add_self_loops {
            triplets.push((i, i, weight(i, i)));
        }
        for j in g.neighbors(i) {
            triplets.push((i, j, weight(i, j)));
        }
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_symmetric_with_loops_is_one_third() {
        let g = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let a = normalize(&g, NormScheme::symmetric()).unwrap();
        assert_eq!(a.nnz(), 9);
        for &v in a.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn random_walk_rows_are_stochastic() {
        let g = Graph::from_edges(5, [(0, 1), (0, 2), (0, 3), (3, 4)]).unwrap();
        for loops in [true, false] {
            let a = normalize(&g, NormScheme::new(NormKind::RandomWalk, loops)).unwrap();
            for s in a.row_sums() {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isolated_node_without_loops() {
        let g = Graph::from_edges(3, [(0, 1)]).unwrap();
        let scheme = NormScheme::new(NormKind::Symmetric, false);
        assert!(matches!(normalize(&g, scheme), Err(Error::DegreeZero { node: 2 })));
        let lenient = normalize_or_zero(&g, scheme);
        assert_eq!(lenient.row_nnz(2), 0);
        // regular scheme never divides
        assert!(normalize(&g, NormScheme::raw()).is_ok());
    }
}
