//! Synthetic graph generators: stochastic block models with controllable
//! label agreement, and regular trees for closed-form checks.
//!
//! Both generators are bit-deterministic given their configuration and seed:
//! edges and feature noise draw from separate fixed streams so the same seed
//! always realizes the same graph.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{site_stream, tags};

/// Configuration for the two-parameter stochastic block model.
///
/// Nodes split into `class_count` blocks. Each unordered node pair gets an
/// edge independently with probability `p_intra` (same block) or `p_inter`
/// (different blocks). Features are per-class Gaussians: class `c`'s mean is
/// a fixed vector, pairwise `class_mean_separation` apart, plus iid noise of
/// standard deviation `noise_std`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SbmConfig {
    pub class_count: usize,
    pub nodes_per_class: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feature_dim: usize,
    pub class_mean_separation: f64,
    pub noise_std: f64,
}

impl SbmConfig {
    /// Checks every field for validity.
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 {
            return Err(Error::Config("class_count must be at least 1".into()));
        }
        if self.nodes_per_class == 0 {
            return Err(Error::Config("nodes_per_class must be at least 1".into()));
        }
        for (name, p) in [("p_intra", self.p_intra), ("p_inter", self.p_inter)] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::Config(format!("{name} = {p} is not in [0, 1]")));
            }
        }
        if self.feature_dim < self.class_count {
            return Err(Error::Config(format!(
                "feature_dim {} cannot hold {} orthogonal class means",
                self.feature_dim, self.class_count
            )));
        }
        if !(self.class_mean_separation.is_finite() && self.class_mean_separation >= 0.0) {
            return Err(Error::Config("class_mean_separation must be >= 0".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        Ok(())
    }

    /// The fixed mean vector of class `c`: a scaled axis vector, so that all
    /// pairwise mean distances equal `class_mean_separation` exactly.
    pub fn class_mean(&self, c: usize, dim: usize) -> Vec<f64> {
        let mut m = vec![0.0; dim];
        m[c] = self.class_mean_separation / std::f64::consts::SQRT_2;
        m
    }
}

/// Samples a block-model graph with equal class sizes.
pub fn generate_sbm(cfg: &SbmConfig, seed: u64) -> Result<Graph> {
    let sizes = vec![cfg.nodes_per_class; cfg.class_count];
    generate_sbm_with_sizes(cfg, &sizes, seed)
}

/// Samples a block-model graph with explicit per-class sizes.
///
/// `cfg.nodes_per_class` is ignored; everything else behaves as in
/// [`generate_sbm`]. Class `c` occupies a contiguous id range, in order.
pub fn generate_sbm_with_sizes(cfg: &SbmConfig, class_sizes: &[usize], seed: u64) -> Result<Graph> {
    cfg.validate()?;
    if class_sizes.len() != cfg.class_count {
        return Err(Error::Config(format!(
            "{} class sizes for {} classes",
            class_sizes.len(),
            cfg.class_count
        )));
    }
    if class_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config("every class needs at least one node".into()));
    }

    let n: usize = class_sizes.iter().sum();
    let mut labels = Vec::with_capacity(n);
    for (c, &s) in class_sizes.iter().enumerate() {
        labels.extend(std::iter::repeat(c as u32).take(s));
    }

    // Edges: one Bernoulli draw per unordered pair, in fixed (i, j) order.
    let mut edge_rng = site_stream(seed, tags::SBM_EDGES, 0, 0);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] {
                cfg.p_intra
            } else {
                cfg.p_inter
            };
            if edge_rng.gen::<f64>() < p {
                edges.push((i as u32, j as u32));
            }
        }
    }

    // Features: class mean plus iid Gaussian noise, row by row.
    let mut feat_rng = site_stream(seed, tags::SBM_FEATURES, 0, 0);
    let mut features = Array2::zeros((n, cfg.feature_dim));
    for i in 0..n {
        let mean = cfg.class_mean(labels[i] as usize, cfg.feature_dim);
        for d in 0..cfg.feature_dim {
            let noise: f64 = StandardNormal.sample(&mut feat_rng);
            features[[i, d]] = mean[d] + cfg.noise_std * noise;
        }
    }

    Graph::new(&edges, features, Some(labels), cfg.class_count)
}

/// Builds the rooted regular tree: the root (id 0) has `branching` children,
/// every other internal node has `branching - 1` children, so all non-leaf
/// nodes have degree `branching`. Nodes are numbered breadth-first.
///
/// The returned graph has zero-width features and no labels; attach features
/// with [`Graph::with_features`] when needed.
pub fn generate_regular_tree(branching: usize, depth: usize) -> Result<Graph> {
    if branching < 2 {
        return Err(Error::Config(format!(
            "branching factor {branching} must be at least 2"
        )));
    }
    let mut edges: Vec<(u32, u32)> = Vec::new();
    let mut next_id: u32 = 1;
    let mut frontier: Vec<u32> = vec![0];
    for level in 0..depth {
        let children_per = if level == 0 { branching } else { branching - 1 };
        let mut next_frontier = Vec::with_capacity(frontier.len() * children_per);
        for &parent in &frontier {
            for _ in 0..children_per {
                edges.push((parent, next_id));
                next_frontier.push(next_id);
                next_id += 1;
            }
        }
        frontier = next_frontier;
    }
    let n = next_id as usize;
    Graph::new(&edges, Array2::zeros((n, 0)), None, 0)
}
