//! Predefined token-list templates.
//!
//! A token list is an ordered sequence of feature-space vectors extracted
//! around a center node, each carrying provenance: exactly which nodes
//! contributed and with what weight. Three constructions live here:
//!
//! - [`none_tokens`]: the single raw feature of the center.
//! - [`ho_tokens`]: hop-overview tokens, where token `k` is the k-step
//!   parameter-free neighborhood mean. Provenance weights are exact
//!   rationals (products of reciprocal degrees).
//! - [`nd_tokens`]: node-detail tokens from a sampled fixed-shape
//!   computational tree, flattened breadth-first; every slot is one node's
//!   raw feature.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::hopmatrix::rational_to_f64;
use crate::rng::{self, tags};

/// Maximum relative error allowed between a stored token vector and the
/// provenance-weighted sum of raw features it claims to equal.
pub const TOKEN_RECON_REL_TOL: f64 = 1e-12;

/// An ordered list of tokens around one center node, with full provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenList {
    /// Node the list was built around.
    pub center: u32,
    /// Token vectors, one row each, in template order.
    pub tokens: Array2<f64>,
    /// For each token, the contributing nodes and their exact weights.
    /// Weights sum to the token's mass: 1 for mean-aggregated tokens,
    /// occurrence counts (here always 1 per slot) for sampled-tree tokens.
    pub provenance: Vec<Vec<(u32, BigRational)>>,
}

impl TokenList {
    /// Number of tokens in the list.
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    /// True when the list holds no tokens (never produced by the templates).
    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    /// Feature dimension of each token.
    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    /// Borrow one token vector.
    pub fn token(&self, i: usize) -> ArrayView1<'_, f64> {
        self.tokens.row(i)
    }

    /// Exact sum of provenance weights for one token.
    pub fn mass(&self, i: usize) -> BigRational {
        self.provenance[i]
            .iter()
            .fold(BigRational::zero(), |acc, (_, w)| acc + w)
    }

    /// Verifies that every token equals its provenance-weighted feature sum
    /// within [`TOKEN_RECON_REL_TOL`] and that no provenance list is empty.
    pub fn check_consistency(&self, g: &Graph) -> Result<()> {
        if self.provenance.len() != self.len() {
            return Err(Error::Shape(format!(
                "token list has {} tokens but {} provenance entries",
                self.len(),
                self.provenance.len()
            )));
        }
        for (i, entries) in self.provenance.iter().enumerate() {
            if entries.is_empty() {
                return Err(Error::Shape(format!("token {i} has empty provenance")));
            }
            let mut recon = vec![0.0; self.dim()];
            for (v, w) in entries {
                let wf = rational_to_f64(w);
                for (c, r) in g.feature(*v)?.iter().zip(recon.iter_mut()) {
                    *r += wf * c;
                }
            }
            let scale = recon
                .iter()
                .fold(1.0_f64, |acc, r| acc.max(r.abs()));
            for (c, (t, r)) in self.token(i).iter().zip(recon.iter()).enumerate() {
                if (t - r).abs() > TOKEN_RECON_REL_TOL * scale {
                    return Err(Error::Shape(format!(
                        "token {i} component {c} is {t} but provenance reconstructs {r}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A fixed-shape sampled computational tree rooted at one node.
///
/// `layers[k]` holds the node ids filling level `k + 1` of the tree, in
/// breadth-first slot order; its length is `sample_sizes[0] * … *
/// sample_sizes[k]`. The parent of `layers[0][s]` is `root`; the parent of
/// `layers[k][s]` for `k > 0` is `layers[k - 1][s / sample_sizes[k]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NdTree {
    /// Center node the tree expands from.
    pub root: u32,
    /// Slots per expansion step, outermost first.
    pub sample_sizes: Vec<usize>,
    /// Sampled node ids per level below the root.
    pub layers: Vec<Vec<u32>>,
}

impl NdTree {
    /// Total number of slots including the root.
    pub fn slot_count(&self) -> usize {
        1 + self.layers.iter().map(Vec::len).sum::<usize>()
    }
}

/// Builds the trivial single-token list `[x_u]`.
pub fn none_tokens(g: &Graph, u: u32) -> Result<TokenList> {
    let x = g.feature(u)?;
    let tokens = x.to_owned().insert_axis(ndarray::Axis(0));
    Ok(TokenList {
        center: u,
        tokens,
        provenance: vec![vec![(u, BigRational::one())]],
    })
}

/// Exact contribution weights of every node to the k-step neighborhood mean
/// at `u`, for k = 0..=depth. Entry `k` maps node → weight; weights in each
/// map sum to exactly 1.
fn mean_aggregation_weights(
    g: &Graph,
    u: u32,
    depth: usize,
) -> Result<Vec<BTreeMap<u32, BigRational>>> {
    let mut levels = Vec::with_capacity(depth + 1);
    let mut current = BTreeMap::new();
    current.insert(u, BigRational::one());
    levels.push(current.clone());
    for _ in 0..depth {
        let mut next: BTreeMap<u32, BigRational> = BTreeMap::new();
        for (&v, w) in &current {
            let deg = g.degree(v)?;
            if deg == 0 {
                return Err(Error::Degenerate(format!(
                    "node {v} has no neighbors, so the neighborhood mean at {u} is undefined"
                )));
            }
            let share = w / BigRational::from_integer(BigInt::from(deg));
            for &nb in g.neighbors(v)? {
                next.entry(nb)
                    .and_modify(|acc| *acc += &share)
                    .or_insert_with(|| share.clone());
            }
        }
        levels.push(next.clone());
        current = next;
    }
    Ok(levels)
}

/// Builds hop-overview tokens `T_0..T_L`: token `k` is the k-step
/// parameter-free mean aggregation at `u`, with exact rational provenance.
pub fn ho_tokens(g: &Graph, u: u32, hops: usize) -> Result<TokenList> {
    let levels = mean_aggregation_weights(g, u, hops)?;
    let dim = g.feature_dim();
    let mut tokens = Array2::zeros((hops + 1, dim));
    let mut provenance = Vec::with_capacity(hops + 1);
    for (k, level) in levels.iter().enumerate() {
        let mut entries = Vec::with_capacity(level.len());
        for (&v, w) in level {
            let wf = rational_to_f64(w);
            let x = g.feature(v)?;
            for (c, val) in x.iter().enumerate() {
                tokens[[k, c]] += wf * val;
            }
            entries.push((v, w.clone()));
        }
        provenance.push(entries);
    }
    Ok(TokenList {
        center: u,
        tokens,
        provenance,
    })
}

/// Samples the fixed-shape computational tree at `u` and flattens it
/// breadth-first into a token list (root token first, then each level's
/// slots left to right). Each slot is filled by uniform sampling without
/// replacement from the parent's neighborhood; when the neighborhood has
/// fewer than `sizes[k]` nodes, every neighbor is taken in id order and the
/// remaining slots repeat the parent.
pub fn nd_tokens(
    g: &Graph,
    u: u32,
    sizes: &[usize],
    seed: u64,
) -> Result<(TokenList, NdTree)> {
    g.feature(u)?; // validates the id
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config(
            "every tree level must request at least one slot".into(),
        ));
    }
    let mut rng = rng::site_stream(seed, tags::ND_TREE, u as u64, 0);
    let mut layers: Vec<Vec<u32>> = Vec::with_capacity(sizes.len());
    let mut parents = vec![u];
    for &want in sizes {
        let mut layer = Vec::with_capacity(parents.len() * want);
        for &p in &parents {
            let nbrs = g.neighbors(p)?;
            if nbrs.len() >= want {
                let mut picked: Vec<usize> = sample(&mut rng, nbrs.len(), want).into_vec();
                picked.sort_unstable();
                layer.extend(picked.into_iter().map(|i| nbrs[i]));
            } else {
                layer.extend_from_slice(nbrs);
                layer.extend(std::iter::repeat(p).take(want - nbrs.len()));
            }
        }
        parents = layer.clone();
        layers.push(layer);
    }

    let dim = g.feature_dim();
    let total = 1 + layers.iter().map(Vec::len).sum::<usize>();
    let mut tokens = Array2::zeros((total, dim));
    let mut provenance = Vec::with_capacity(total);
    let mut row = 0;
    for v in std::iter::once(u).chain(layers.iter().flatten().copied()) {
        tokens.row_mut(row).assign(&g.feature(v)?);
        provenance.push(vec![(v, BigRational::one())]);
        row += 1;
    }
    let tree = NdTree {
        root: u,
        sample_sizes: sizes.to_vec(),
        layers,
    };
    Ok((
        TokenList {
            center: u,
            tokens,
            provenance,
        },
        tree,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::hop_layers;
    use crate::hopmatrix::{m_ho, m_nd};
    use crate::synth::generate_regular_tree;
    use ndarray::array;

    fn rat(num: i64, den: i64) -> BigRational {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn path3() -> Graph {
        // a(0) - b(1) - c(2)
        Graph::new(
            &[(0, 1), (1, 2)],
            array![[1.0, 0.0], [0.0, 1.0], [3.0, 0.0]],
            None,
            0,
        )
        .unwrap()
    }

    #[test]
    fn none_is_a_single_raw_token() {
        let g = path3();
        let t = none_tokens(&g, 1).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.token(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(t.provenance[0], vec![(1, BigRational::one())]);
        t.check_consistency(&g).unwrap();
    }

    #[test]
    fn ho_on_a_path_averages_the_endpoints() {
        let g = path3();
        let t = ho_tokens(&g, 1, 1).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.token(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(t.token(1).to_vec(), vec![2.0, 0.0]);
        assert_eq!(
            t.provenance[1],
            vec![(0, rat(1, 2)), (2, rat(1, 2))]
        );
        t.check_consistency(&g).unwrap();
    }

    #[test]
    fn ho_respects_irregular_degrees() {
        // Star: center 0 with leaves 1, 2, 3. Two steps from leaf 1 land on
        // the mean of all leaves.
        let g = Graph::new(
            &[(0, 1), (0, 2), (0, 3)],
            array![[0.0], [1.0], [2.0], [4.0]],
            None,
            0,
        )
        .unwrap();
        let t = ho_tokens(&g, 1, 2).unwrap();
        assert_eq!(
            t.provenance[2],
            vec![(1, rat(1, 3)), (2, rat(1, 3)), (3, rat(1, 3))]
        );
        assert!((t.token(2)[0] - 7.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ho_masses_are_exactly_one_even_with_cycles() {
        // Triangle plus a pendant: cycles and irregular degrees together.
        let g = Graph::new(
            &[(0, 1), (1, 2), (2, 0), (2, 3)],
            array![[1.0], [2.0], [3.0], [4.0]],
            None,
            0,
        )
        .unwrap();
        for u in 0..4 {
            let t = ho_tokens(&g, u, 4).unwrap();
            for k in 0..=4 {
                assert_eq!(t.mass(k), BigRational::one(), "u={u} k={k}");
            }
            t.check_consistency(&g).unwrap();
        }
    }

    #[test]
    fn ho_weights_match_the_overview_table_on_a_regular_tree() {
        for n in [2usize, 3] {
            let g = generate_regular_tree(n, 4).unwrap();
            let hops = 3;
            let table = m_ho(n, hops).unwrap();
            let t = ho_tokens(&g, 0, hops).unwrap();
            let layers = hop_layers(&g, 0, hops).unwrap();
            let hop_of = |v: u32| layers.iter().position(|l| l.contains(&v)).unwrap();
            for k in 0..=hops {
                for (v, w) in &t.provenance[k] {
                    assert_eq!(
                        *w,
                        table.entry(k, hop_of(*v)),
                        "n={n} token {k} node {v}"
                    );
                }
            }
            // One-hop weight after three steps matches the closed form.
            let one_hop = g.neighbors(0).unwrap()[0];
            let w = t.provenance[3]
                .iter()
                .find(|(v, _)| *v == one_hop)
                .map(|(_, w)| w.clone())
                .unwrap();
            let n_i = i64::try_from(n).unwrap();
            assert_eq!(w, rat(2 * n_i - 1, n_i * n_i * n_i));
        }
    }

    #[test]
    fn ho_rejects_isolated_nodes_in_range() {
        let g = Graph::new(&[(0, 1)], array![[1.0], [2.0], [3.0]], None, 0).unwrap();
        // Node 2 is isolated; the first averaging step has no input.
        assert!(matches!(
            ho_tokens(&g, 2, 1),
            Err(Error::Degenerate(_))
        ));
        // Depth 0 never touches a neighborhood.
        assert!(ho_tokens(&g, 2, 0).is_ok());
    }

    #[test]
    fn nd_pads_small_neighborhoods_with_the_parent() {
        let g = path3();
        let (t, tree) = nd_tokens(&g, 0, &[3], 7).unwrap();
        assert_eq!(tree.layers, vec![vec![1, 0, 0]]);
        assert_eq!(t.len(), 4);
        assert_eq!(t.token(2).to_vec(), vec![1.0, 0.0]);
        t.check_consistency(&g).unwrap();
    }

    #[test]
    fn nd_layer_sizes_multiply_and_parents_line_up() {
        let g = generate_regular_tree(3, 3).unwrap();
        let (t, tree) = nd_tokens(&g, 0, &[2, 2], 11).unwrap();
        assert_eq!(tree.layers[0].len(), 2);
        assert_eq!(tree.layers[1].len(), 4);
        assert_eq!(t.len(), 7);
        assert_eq!(tree.slot_count(), 7);
        // Every layer-2 entry is a neighbor of (or equal to) its parent.
        for (s, &v) in tree.layers[1].iter().enumerate() {
            let p = tree.layers[0][s / 2];
            let ok = g.neighbors(p).unwrap().contains(&v) || v == p;
            assert!(ok, "slot {s} node {v} parent {p}");
        }
    }

    #[test]
    fn nd_is_deterministic_in_the_seed() {
        let g = generate_regular_tree(4, 3).unwrap();
        let (a, ta) = nd_tokens(&g, 0, &[2, 2, 2], 5).unwrap();
        let (b, tb) = nd_tokens(&g, 0, &[2, 2, 2], 5).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
        let (_, tc) = nd_tokens(&g, 0, &[2, 2, 2], 6).unwrap();
        assert_ne!(ta, tc, "different seeds should sample different trees");
    }

    #[test]
    fn nd_occurrence_counts_match_the_detail_table() {
        // With every slot count equal to the branching factor, sampling
        // degenerates to full expansion, and each individual hop-j node must
        // appear in layer i exactly as often as the detail table says.
        for n in [2usize, 3] {
            let depth = 4;
            let g = generate_regular_tree(n, depth + 1).unwrap();
            let sizes = vec![n; depth];
            let (_, tree) = nd_tokens(&g, 0, &sizes, 3).unwrap();
            let table = m_nd(n, depth).unwrap();
            let layers = hop_layers(&g, 0, depth).unwrap();
            for (level, slots) in tree.layers.iter().enumerate() {
                let mut counts: BTreeMap<u32, i64> = BTreeMap::new();
                for &v in slots {
                    *counts.entry(v).or_insert(0) += 1;
                }
                for (hop, ring) in layers.iter().enumerate() {
                    for &v in ring {
                        let seen = counts.get(&v).copied().unwrap_or(0);
                        assert_eq!(
                            BigRational::from_integer(BigInt::from(seen)),
                            table.entry(level + 1, hop),
                            "n={n} level {} node {v} at hop {hop}",
                            level + 1
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn nd_rejects_zero_slot_requests_and_bad_centers() {
        let g = path3();
        assert!(matches!(
            nd_tokens(&g, 0, &[2, 0], 1),
            Err(Error::Config(_))
        ));
        assert!(nd_tokens(&g, 9, &[1], 1).is_err());
    }
}
