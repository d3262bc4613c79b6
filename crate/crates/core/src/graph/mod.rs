//! Undirected graphs, aggregation normalisation, DropEdge sampling,
//! structural statistics, synthetic block-model data and the on-disk
//! dataset format.

mod dataset;
mod normalize;
mod sbm;

use std::sync::Arc;

use rand::Rng;

pub use dataset::{load_dataset, save_dataset, DatasetBundle, DatasetMeta, Split};
pub use normalize::{normalize, normalize_or_zero, NormKind, NormScheme};
pub use sbm::{generate_sbm, SbmConfig};

use crate::error::{Error, Result};
use crate::tensor::CsrMatrix;

/// Simple undirected graph: symmetric 0/1 adjacency, no self-loops, no
/// duplicate edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    adjacency: Arc<CsrMatrix>,
    /// Canonical edge list, `u < v`, sorted.
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from raw pairs: symmetrises, removes duplicates and drops
    /// self-loops.
    pub fn from_edges(num_nodes: usize, raw: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges = Vec::new();
        for (u, v) in raw {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::dim("Graph::from_edges", format!("edge ({u}, {v}) with {num_nodes} nodes")));
            }
            if u != v {
                edges.push((u.min(v), u.max(v)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self::from_canonical(num_nodes, edges))
    }

    /// `edges` must already be canonical, sorted and deduplicated.
    fn from_canonical(num_nodes: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut triplets = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in &edges {
            triplets.push((u, v, 1.0));
            triplets.push((v, u, 1.0));
        }
        let adjacency = CsrMatrix::from_triplets(num_nodes, num_nodes, triplets).expect("edges are in bounds");
        Self { num_nodes, adjacency: Arc::new(adjacency), edges }
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self::from_canonical(num_nodes, Vec::new())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &Arc<CsrMatrix> {
        &self.adjacency
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.row(i).map(|(j, _)| j)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency.get(u, v) != 0.0
    }

    pub fn is_subgraph_of(&self, other: &Graph) -> bool {
        self.num_nodes == other.num_nodes && self.edges.iter().all(|&(u, v)| other.has_edge(u, v))
    }

    /// Subgraph keeping edges whose flag is set.
    pub fn masked(&self, mask: &EdgeMask) -> Result<Graph> {
        if mask.keep.len() != self.edges.len() {
            return Err(Error::dim("Graph::masked", format!("{} flags for {} edges", mask.keep.len(), self.edges.len())));
        }
        let edges = self.edges.iter().zip(&mask.keep).filter(|(_, &k)| k).map(|(&e, _)| e).collect();
        Ok(Self::from_canonical(self.num_nodes, edges))
    }

    /// Applies a node relabelling `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.num_nodes {
            return Err(Error::dim("Graph::permuted", "permutation length differs from node count"));
        }
        Self::from_edges(self.num_nodes, self.edges.iter().map(|&(u, v)| (perm[u], perm[v])))
    }
}

/// Keep flags for each canonical undirected edge; both directions of an edge
/// share one flag.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMask {
    pub keep: Vec<bool>,
    pub p: f64,
}

impl EdgeMask {
    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// DropEdge: keeps every undirected edge independently with probability `1 − p`.
pub fn drop_edges<R: Rng + ?Sized>(g: &Graph, p: f64, rng: &mut R) -> Result<(EdgeMask, Graph)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidRate { what: "drop_edges", rate: p });
    }
    let keep_prob = 1.0 - p;
    let keep: Vec<bool> = (0..g.num_edges()).map(|_| rng.random::<f64>() < keep_prob).collect();
    let mask = EdgeMask { keep, p };
    let dropped = g.masked(&mask)?;
    Ok((mask, dropped))
}

/// Neighbour counts, excluding self-loops.
pub fn node_degrees(g: &Graph) -> Vec<usize> {
    (0..g.num_nodes()).map(|i| g.adjacency().row_nnz(i)).collect()
}

/// Fraction of each node's neighbours that share its label; `None` on
/// isolated nodes.
pub fn node_homophily(g: &Graph, labels: &[usize]) -> Result<Vec<Option<f64>>> {
    if labels.len() != g.num_nodes() {
        return Err(Error::dim("node_homophily", format!("{} labels for {} nodes", labels.len(), g.num_nodes())));
    }
    Ok((0..g.num_nodes())
        .map(|i| {
            let deg = g.adjacency().row_nnz(i);
            (deg > 0).then(|| {
                let same = g.neighbors(i).filter(|&j| labels[j] == labels[i]).count();
                same as f64 / deg as f64
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn path(n: usize) -> Graph {
        Graph::from_edges(n, (0..n - 1).map(|i| (i, i + 1))).unwrap()
    }

    #[test]
    fn construction_symmetrises_and_dedups() {
        let g = Graph::from_edges(3, [(0, 1), (1, 0), (2, 2), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert!(g.has_edge(1, 0) && g.has_edge(0, 1));
        assert!(!g.has_edge(2, 2));
        assert!(Graph::from_edges(2, [(0, 5)]).is_err());
    }

    #[test]
    fn degrees() {
        assert_eq!(node_degrees(&path(3)), vec![1, 2, 1]);
        assert_eq!(node_degrees(&Graph::empty(4)), vec![0; 4]);
    }

    #[test]
    fn homophily_cases() {
        let g = path(4);
        let h = node_homophily(&g, &[0, 0, 0, 0]).unwrap();
        assert!(h.iter().all(|v| *v == Some(1.0)));
        let h = node_homophily(&g, &[0, 1, 0, 1]).unwrap();
        assert!(h.iter().all(|v| *v == Some(0.0)));
        let iso = Graph::from_edges(3, [(0, 1)]).unwrap();
        assert_eq!(node_homophily(&iso, &[0, 0, 1]).unwrap()[2], None);
    }

    #[test]
    fn homophily_matches_neighbour_scan() {
        // 5 nodes: 0-1, 0-2, 0-3, 3-4, 1-2
        let g = Graph::from_edges(5, [(0, 1), (0, 2), (0, 3), (3, 4), (1, 2)]).unwrap();
        let labels = [0, 0, 1, 1, 0];
        let h = node_homophily(&g, &labels).unwrap();
        // node 0: neighbours 1,2,3 -> labels 0,1,1 -> 1/3
        // node 1: 0,2 -> 0,1 -> 1/2 ; node 2: 0,1 -> 0,0 -> 0
        // node 3: 0,4 -> 0,0 -> 0 ; node 4: 3 -> 1 -> 0
        let expected = [1.0 / 3.0, 0.5, 0.0, 0.0, 0.0];
        for (got, want) in h.iter().zip(expected) {
            assert!((got.unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn drop_edges_extremes() {
        let g = path(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(drop_edges(&g, 0.0, &mut rng).unwrap().1, g);
        assert_eq!(drop_edges(&g, 1.0, &mut rng).unwrap().1.num_edges(), 0);
        assert!(drop_edges(&g, 1.5, &mut rng).is_err());
    }
}
