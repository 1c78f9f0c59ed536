//! Representation-smoothness metric and per-template smoothness bounds.
//!
//! Smoothness here is the Frobenius distance between a node's raw feature
//! and its attention-weighted neighborhood aggregate. Each template admits
//! an upper bound on that distance in terms of per-hop sizes, label
//! consistencies, a feature Lipschitz constant, and the same/different-label
//! attention affinities (`gamma`/`eta`). The bounds hold in the
//! class-aligned regime where same-label affinity dominates (`gamma ≥ eta`),
//! which is what the empirical estimators measure.
//!
//! One naming note: the literature overloads a single letter for both the
//! hop count and the Lipschitz constant; here they are always `hop_count`
//! (or an array length) and `lipschitz`.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use ndarray::{Array2, ArrayView1};

use crate::attention::ProjectionWeights;
use crate::error::{Error, Result};
use crate::graph::{hop_layers, Graph};
use crate::hopmatrix::{rational_to_f64, PhiVector};

/// Per-hop structural inputs shared by all three bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Number of nodes in each hop (or sampled group), hop 0 first.
    pub hop_sizes: Vec<usize>,
    /// Fraction of each hop sharing the center's label, in `[0, 1]`.
    pub consistencies: Vec<f64>,
    /// Lipschitz constant of features with respect to label distance.
    pub lipschitz: f64,
    /// Mean attention affinity toward differently-labeled nodes.
    pub eta: f64,
    /// Mean attention affinity toward same-labeled nodes; must be positive.
    pub gamma: f64,
}

impl BoundInputs {
    /// Validates and bundles the inputs.
    pub fn new(
        hop_sizes: Vec<usize>,
        consistencies: Vec<f64>,
        lipschitz: f64,
        eta: f64,
        gamma: f64,
    ) -> Result<Self> {
        if hop_sizes.len() != consistencies.len() {
            return Err(Error::Shape(format!(
                "{} hop sizes but {} consistencies",
                hop_sizes.len(),
                consistencies.len()
            )));
        }
        if consistencies.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Domain(
                "every consistency must lie in [0, 1]".into(),
            ));
        }
        if !lipschitz.is_finite() || lipschitz < 0.0 {
            return Err(Error::Domain(format!(
                "lipschitz must be finite and nonnegative, got {lipschitz}"
            )));
        }
        if !eta.is_finite() || eta < 0.0 {
            return Err(Error::Domain(format!(
                "eta must be finite and nonnegative, got {eta}"
            )));
        }
        if !gamma.is_finite() || gamma <= 0.0 {
            return Err(Error::Domain(format!(
                "gamma must be finite and positive, got {gamma}"
            )));
        }
        Ok(Self {
            hop_sizes,
            consistencies,
            lipschitz,
            eta,
            gamma,
        })
    }

    /// Number of hops described (hop 0 included).
    pub fn len(&self) -> usize {
        self.hop_sizes.len()
    }

    /// True when no hops are described.
    pub fn is_empty(&self) -> bool {
        self.hop_sizes.is_empty()
    }
}

/// Frobenius distance between `u_feature` and the attention-weighted mean
/// of `features` rows under `attention`.
pub fn smoothness(
    u_feature: ArrayView1<'_, f64>,
    attention: &BTreeMap<u32, f64>,
    features: &Array2<f64>,
) -> Result<f64> {
    let dim = u_feature.len();
    if features.ncols() != dim {
        return Err(Error::Shape(format!(
            "feature matrix has {} columns, center has {dim}",
            features.ncols()
        )));
    }
    let mut agg = vec![0.0; dim];
    for (&v, &w) in attention {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Domain(format!(
                "attention weight for node {v} must be finite and nonnegative, got {w}"
            )));
        }
        if (v as usize) >= features.nrows() {
            return Err(Error::NodeRange {
                id: v as usize,
                nodes: features.nrows(),
            });
        }
        for (a, x) in agg.iter_mut().zip(features.row(v as usize).iter()) {
            *a += w * x;
        }
    }
    let sq: f64 = u_feature
        .iter()
        .zip(agg.iter())
        .map(|(x, a)| (x - a) * (x - a))
        .sum();
    Ok(sq.sqrt())
}

/// Smoothness bound for hop-overview aggregation:
/// `√2 · lipschitz · Σ_i α̂_i · |hop i| · (1 − C_i)`.
pub fn bound_ho(alpha_hat: &[f64], b: &BoundInputs) -> Result<f64> {
    if alpha_hat.len() != b.len() {
        return Err(Error::Shape(format!(
            "{} effective weights but {} hops",
            alpha_hat.len(),
            b.len()
        )));
    }
    if alpha_hat.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::Domain(
            "effective attention weights must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = alpha_hat
        .iter()
        .zip(b.hop_sizes.iter().zip(b.consistencies.iter()))
        .map(|(a, (&n, c))| a * n as f64 * (1.0 - c))
        .sum();
    Ok(SQRT_2 * b.lipschitz * total)
}

/// Smoothness bound for detail-tree aggregation:
/// `√2 · lipschitz / (1 + (1/(R−1)) · (eta/gamma))` where
/// `R = Σ φ_i |hop i| / Σ φ_i |hop i| C_i`. When every described node shares
/// the center's label (`R = 1`) there is no inconsistent mass and the bound
/// is 0; when none does, the ratio term vanishes and the bound is
/// `√2 · lipschitz`.
pub fn bound_nd(phi: &PhiVector, b: &BoundInputs) -> Result<f64> {
    if phi.len() != b.len() {
        return Err(Error::Shape(format!(
            "{} hop-mass weights but {} hops",
            phi.len(),
            b.len()
        )));
    }
    let mut inconsistent = 0.0; // Σ φ|hop|(1−C)
    let mut consistent = 0.0; // Σ φ|hop|C
    for i in 0..b.len() {
        let mass = rational_to_f64(&phi.value(i)) * b.hop_sizes[i] as f64;
        consistent += mass * b.consistencies[i];
        inconsistent += mass * (1.0 - b.consistencies[i]);
    }
    if consistent + inconsistent <= 0.0 {
        return Err(Error::Domain(
            "every hop is empty; the aggregation bound is undefined".into(),
        ));
    }
    if inconsistent == 0.0 {
        return Ok(0.0);
    }
    if consistent == 0.0 {
        return Ok(SQRT_2 * b.lipschitz);
    }
    Ok(SQRT_2 * b.lipschitz / (1.0 + (consistent / inconsistent) * (b.eta / b.gamma)))
}

/// Smoothness bound for gated aggregation. `s_hat` is the gate's softmax
/// output over hops 0..=L; it is rescaled by the token count so the weights
/// average to 1 before entering
/// `√2 · lipschitz · Σ ŝ_i |G_i| (1−C_i) / (Σ |G_i| (1−C_i) + (eta/gamma) Σ |G_i| C_i)`.
pub fn bound_lgtl(s_hat: &[f64], b: &BoundInputs) -> Result<f64> {
    if s_hat.len() != b.len() {
        return Err(Error::Shape(format!(
            "{} gate weights but {} hops",
            s_hat.len(),
            b.len()
        )));
    }
    if s_hat.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Domain(
            "gate weights must be finite and nonnegative".into(),
        ));
    }
    let scale = s_hat.len() as f64;
    let mut numer = 0.0;
    let mut denom = 0.0;
    for i in 0..b.len() {
        let size = b.hop_sizes[i] as f64;
        let c = b.consistencies[i];
        numer += scale * s_hat[i] * size * (1.0 - c);
        denom += size * (1.0 - c) + (b.eta / b.gamma) * size * c;
    }
    if denom <= 0.0 {
        return Err(Error::Domain(
            "every hop is empty; the gated bound is undefined".into(),
        ));
    }
    Ok(SQRT_2 * b.lipschitz * numer / denom)
}

/// Empirical attention affinities at `u`: means of `exp(q_u·k_v/√h)` over
/// differently-labeled (`eta`) and same-labeled (`gamma`) nodes within
/// `hops` of `u` (hop 0 excluded).
pub fn estimate_eta_gamma(
    g: &Graph,
    u: u32,
    w: &ProjectionWeights,
    hops: usize,
) -> Result<(f64, f64)> {
    let labels = g
        .labels()
        .ok_or_else(|| Error::Config("affinity estimation needs labels".into()))?;
    if g.feature_dim() != w.width() {
        return Err(Error::Shape(format!(
            "features have dimension {} but projections expect {}",
            g.feature_dim(),
            w.width()
        )));
    }
    let q = g.feature(u)?.dot(&w.wq);
    let scale = (w.width() as f64).sqrt().recip();
    let layers = hop_layers(g, u, hops)?;
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for ring in layers.iter().skip(1) {
        for &v in ring {
            let k = g.feature(v)?.dot(&w.wk);
            let affinity = (q.dot(&k) * scale).exp();
            if labels[v as usize] == labels[u as usize] {
                same.push(affinity);
            } else {
                diff.push(affinity);
            }
        }
    }
    if same.is_empty() || diff.is_empty() {
        return Err(Error::Domain(format!(
            "node {u} has {} same-label and {} different-label nodes within {hops} hops; both classes are needed",
            same.len(),
            diff.len()
        )));
    }
    let gamma = same.iter().sum::<f64>() / same.len() as f64;
    let eta = diff.iter().sum::<f64>() / diff.len() as f64;
    Ok((eta, gamma))
}

/// Empirical feature Lipschitz constant with respect to label distance:
/// the maximum of `‖x_u − x_v‖ / √2` over differently-labeled node pairs
/// (one-hot labels are `√2` apart).
pub fn estimate_lipschitz(g: &Graph) -> Result<f64> {
    let labels = g
        .labels()
        .ok_or_else(|| Error::Config("Lipschitz estimation needs labels".into()))?;
    let mut best: Option<f64> = None;
    for u in 0..g.len() {
        for v in (u + 1)..g.len() {
            if labels[u] == labels[v] {
                continue;
            }
            let du = g.feature(u as u32)?;
            let dv = g.feature(v as u32)?;
            let dist: f64 = du
                .iter()
                .zip(dv.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let ratio = dist / SQRT_2;
            best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
        }
    }
    best.ok_or_else(|| {
        Error::Domain("no differently-labeled pairs; Lipschitz ratio is undefined".into())
    })
}

/// Per-hop sizes and label consistencies at `u` for hops `0..=hops`.
/// Hop 0 is the node itself (size 1, consistency 1). Empty hops report
/// size 0 with vacuous consistency 1.
pub fn hop_profile(g: &Graph, u: u32, hops: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let labels = g
        .labels()
        .ok_or_else(|| Error::Config("hop profiling needs labels".into()))?;
    let layers = hop_layers(g, u, hops)?;
    let mut sizes = Vec::with_capacity(hops + 1);
    let mut consistencies = Vec::with_capacity(hops + 1);
    for ring in &layers {
        sizes.push(ring.len());
        if ring.is_empty() {
            consistencies.push(1.0);
        } else {
            let same = ring
                .iter()
                .filter(|&&v| labels[v as usize] == labels[u as usize])
                .count();
            consistencies.push(same as f64 / ring.len() as f64);
        }
    }
    Ok((sizes, consistencies))
}
