//! Undirected graph substrate: adjacency, features, labels, hop structure,
//! and label-agreement statistics.
//!
//! The graph is stored in compressed sparse row form. Construction
//! symmetrizes and deduplicates the edge list and drops self-loops, so every
//! neighbor list is sorted, self-loop-free, and mirrored by the reverse
//! entry. Hop distances are unweighted BFS distances; hop `k` of a node is
//! the set of nodes at distance exactly `k` (hop 0 is the node itself), so
//! the hops of a node partition its connected component.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Undirected graph with dense per-node features and optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    /// CSR row offsets, length `num_nodes + 1`.
    offsets: Vec<usize>,
    /// Concatenated sorted neighbor lists.
    neighbors: Vec<u32>,
    /// `num_nodes x feature_dim` feature matrix.
    features: Array2<f64>,
    /// Per-node class labels in `0..class_count`, when present.
    labels: Option<Vec<u32>>,
    /// Number of classes labels may take (0 when unlabeled).
    class_count: usize,
}

/// Nodes at exactly distance `k` from a center node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopSet {
    /// The node the distances are measured from.
    pub center: u32,
    /// The hop distance.
    pub k: usize,
    /// Sorted node ids at distance exactly `k` from `center`.
    pub members: Vec<u32>,
}

impl Graph {
    /// Builds a graph from an explicit edge list.
    ///
    /// The node count is the feature row count. Edges are symmetrized and
    /// deduplicated; self-loops are dropped. Edge endpoints must lie in
    /// `0..num_nodes`; labels, when given, must have one entry per node and
    /// lie in `0..class_count`.
    pub fn new(
        edges: &[(u32, u32)],
        features: Array2<f64>,
        labels: Option<Vec<u32>>,
        class_count: usize,
    ) -> Result<Graph> {
        let n = features.nrows();
        if let Some(ls) = &labels {
            if ls.len() != n {
                return Err(Error::Shape(format!(
                    "{} labels for {} feature rows",
                    ls.len(),
                    n
                )));
            }
            for &l in ls {
                if (l as usize) >= class_count {
                    return Err(Error::LabelRange {
                        label: l as i64,
                        classes: class_count,
                    });
                }
            }
        }

        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u as usize >= n || v as usize >= n {
                return Err(Error::Shape(format!(
                    "edge ({u}, {v}) references a node outside the {n} feature rows"
                )));
            }
            if u == v {
                continue; // self-loops are not stored
            }
            adj[u as usize].push(v);
            adj[v as usize].push(u);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }

        let class_count = if labels.is_some() { class_count } else { 0 };
        Ok(Graph {
            offsets,
            neighbors,
            features,
            labels,
            class_count,
        })
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    /// True when the graph has no nodes.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature dimensionality.
    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Sorted neighbor list of `u`.
    pub fn neighbors(&self, u: u32) -> Result<&[u32]> {
        self.check_node(u)?;
        let u = u as usize;
        Ok(&self.neighbors[self.offsets[u]..self.offsets[u + 1]])
    }

    /// Degree of `u`.
    pub fn degree(&self, u: u32) -> Result<usize> {
        Ok(self.neighbors(u)?.len())
    }

    /// Feature row of `u`.
    pub fn feature(&self, u: u32) -> Result<ArrayView1<'_, f64>> {
        self.check_node(u)?;
        Ok(self.features.row(u as usize))
    }

    /// Full feature matrix view.
    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    /// Labels, when present.
    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Label of `u`; errors when the graph is unlabeled.
    pub fn label(&self, u: u32) -> Result<u32> {
        self.check_node(u)?;
        self.labels
            .as_ref()
            .map(|ls| ls[u as usize])
            .ok_or_else(|| Error::Config("graph has no labels".into()))
    }

    /// Number of classes (0 when unlabeled).
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Replaces the feature matrix (row count must match the node count).
    pub fn with_features(mut self, features: Array2<f64>) -> Result<Graph> {
        if features.nrows() != self.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} nodes",
                features.nrows(),
                self.len()
            )));
        }
        self.features = features;
        Ok(self)
    }

    /// Attaches labels (one per node, each in `0..class_count`).
    pub fn with_labels(mut self, labels: Vec<u32>, class_count: usize) -> Result<Graph> {
        if labels.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.len()
            )));
        }
        for &l in &labels {
            if (l as usize) >= class_count {
                return Err(Error::LabelRange {
                    label: l as i64,
                    classes: class_count,
                });
            }
        }
        self.labels = Some(labels);
        self.class_count = class_count;
        Ok(self)
    }

    fn check_node(&self, u: u32) -> Result<()> {
        if (u as usize) < self.len() {
            Ok(())
        } else {
            Err(Error::NodeRange {
                id: u as usize,
                nodes: self.len(),
            })
        }
    }
}

/// BFS layers of `u` out to distance `max_k`.
///
/// Element `k` holds the sorted nodes at distance exactly `k`; element 0 is
/// `[u]`. Layers past the component's eccentricity are empty.
pub fn hop_layers(g: &Graph, u: u32, max_k: usize) -> Result<Vec<Vec<u32>>> {
    g.check_node(u)?;
    let mut dist = vec![usize::MAX; g.len()];
    let mut layers: Vec<Vec<u32>> = vec![Vec::new(); max_k + 1];
    dist[u as usize] = 0;
    layers[0].push(u);
    let mut frontier = vec![u];
    for k in 1..=max_k {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in g.neighbors(v).expect("frontier nodes are in range") {
                if dist[w as usize] == usize::MAX {
                    dist[w as usize] = k;
                    next.push(w);
                }
            }
        }
        next.sort_unstable();
        layers[k] = next.clone();
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(layers)
}

/// Nodes at exactly distance `k` from `u` (hop 0 is `{u}` itself).
pub fn k_hop(g: &Graph, u: u32, k: usize) -> Result<HopSet> {
    let layers = hop_layers(g, u, k)?;
    Ok(HopSet {
        center: u,
        k,
        members: layers.into_iter().nth(k).unwrap_or_default(),
    })
}

/// Fraction of undirected edges whose endpoints share a label.
///
/// Each edge is counted once. Errors when the graph is unlabeled or has no
/// edges.
pub fn edge_homophily(g: &Graph) -> Result<f64> {
    let labels = g
        .labels()
        .ok_or_else(|| Error::Config("edge homophily needs labels".into()))?;
    if g.edge_count() == 0 {
        return Err(Error::Degenerate("graph has no edges".into()));
    }
    let mut same = 0usize;
    let mut total = 0usize;
    for u in 0..g.len() as u32 {
        for &v in g.neighbors(u)? {
            if v > u {
                total += 1;
                if labels[u as usize] == labels[v as usize] {
                    same += 1;
                }
            }
        }
    }
    Ok(same as f64 / total as f64)
}

/// Fraction of `u`'s neighbors sharing `u`'s label.
///
/// Errors when the graph is unlabeled or `u` has no neighbors.
pub fn node_homophily(g: &Graph, u: u32) -> Result<f64> {
    let label = g.label(u)?;
    let labels = g.labels().expect("label() checked presence");
    let nbrs = g.neighbors(u)?;
    if nbrs.is_empty() {
        return Err(Error::Degenerate(format!("node {u} has no neighbors")));
    }
    let same = nbrs
        .iter()
        .filter(|&&v| labels[v as usize] == label)
        .count();
    Ok(same as f64 / nbrs.len() as f64)
}

/// Fraction of `u`'s k-hop members sharing `u`'s label (`C_u^k`).
///
/// Hop 0 is 1 by definition. Errors when the graph is unlabeled or the hop
/// set is empty.
pub fn hop_consistency(g: &Graph, u: u32, k: usize) -> Result<f64> {
    let label = g.label(u)?;
    if k == 0 {
        return Ok(1.0);
    }
    let labels = g.labels().expect("label() checked presence");
    let hop = k_hop(g, u, k)?;
    if hop.members.is_empty() {
        return Err(Error::Degenerate(format!(
            "node {u} has an empty {k}-hop set"
        )));
    }
    let same = hop
        .members
        .iter()
        .filter(|&&v| labels[v as usize] == label)
        .count();
    Ok(same as f64 / hop.members.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// Path graph 0-1-2-3 with labels [0, 0, 1, 1].
    fn path4() -> Graph {
        let feats = Array2::zeros((4, 2));
        Graph::new(&[(0, 1), (1, 2), (2, 3)], feats, Some(vec![0, 0, 1, 1]), 2).unwrap()
    }

    #[test]
    fn construction_symmetrizes_dedupes_and_drops_self_loops() {
        let feats = Array2::zeros((3, 1));
        let g = Graph::new(&[(0, 1), (1, 0), (0, 1), (2, 2)], feats, None, 0).unwrap();
        assert_eq!(g.neighbors(0).unwrap(), &[1]);
        assert_eq!(g.neighbors(1).unwrap(), &[0]);
        assert_eq!(g.neighbors(2).unwrap(), &[] as &[u32]);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn edge_outside_feature_rows_is_shape_error() {
        let feats = Array2::zeros((2, 1));
        let err = Graph::new(&[(0, 5)], feats, None, 0).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "got {err:?}");
    }

    #[test]
    fn label_count_mismatch_is_shape_error() {
        let feats = Array2::zeros((3, 1));
        let err = Graph::new(&[(0, 1)], feats, Some(vec![0, 1]), 2).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "got {err:?}");
    }

    #[test]
    fn label_value_outside_classes_is_range_error() {
        let feats = Array2::zeros((2, 1));
        let err = Graph::new(&[(0, 1)], feats, Some(vec![0, 7]), 2).unwrap_err();
        assert!(matches!(err, Error::LabelRange { .. }), "got {err:?}");
    }

    #[test]
    fn hops_of_path_graph() {
        let g = path4();
        assert_eq!(k_hop(&g, 0, 0).unwrap().members, vec![0]);
        assert_eq!(k_hop(&g, 0, 1).unwrap().members, vec![1]);
        assert_eq!(k_hop(&g, 0, 2).unwrap().members, vec![2]);
        assert_eq!(k_hop(&g, 0, 3).unwrap().members, vec![3]);
        assert!(k_hop(&g, 0, 4).unwrap().members.is_empty());
    }

    #[test]
    fn k_hop_rejects_out_of_range_node() {
        let g = path4();
        assert!(matches!(
            k_hop(&g, 9, 1).unwrap_err(),
            Error::NodeRange { id: 9, nodes: 4 }
        ));
    }

    #[test]
    fn edge_homophily_counts_each_edge_once() {
        // Edges: (0,1) same, (1,2) diff, (2,3) same -> 2/3.
        let g = path4();
        let h = edge_homophily(&g).unwrap();
        assert!((h - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn edge_homophily_errors_without_edges_or_labels() {
        let g = Graph::new(&[], Array2::zeros((2, 1)), Some(vec![0, 1]), 2).unwrap();
        assert!(matches!(edge_homophily(&g).unwrap_err(), Error::Degenerate(_)));
        let g = path4();
        let unlabeled = Graph::new(&[(0, 1)], Array2::zeros((2, 1)), None, 0).unwrap();
        assert!(matches!(edge_homophily(&unlabeled).unwrap_err(), Error::Config(_)));
        drop(g);
    }

    #[test]
    fn node_homophily_of_interior_node() {
        let g = path4();
        // Node 1 neighbors {0, 2}: one same label, one different.
        assert!((node_homophily(&g, 1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hop_consistency_hop0_is_one_and_empty_hop_errors() {
        let g = path4();
        assert_eq!(hop_consistency(&g, 0, 0).unwrap(), 1.0);
        assert!((hop_consistency(&g, 0, 2).unwrap() - 0.0).abs() < 1e-15);
        assert!(matches!(
            hop_consistency(&g, 0, 9).unwrap_err(),
            Error::Degenerate(_)
        ));
    }
}
