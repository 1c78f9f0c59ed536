//! The learnable tokenizer: gate, within-hop selection, attention
//! adjustment, and the composed forward pass.
//!
//! The pipeline at a center node `u` with `L` hops:
//!
//! 1. A single-layer graph-attention **gate** over `u` and its 1-hop
//!    neighborhood produces an `(L+1)`-dimensional embedding, softmaxed into
//!    hop weights `ŝ_u`. Only `u`'s output row matters, and one attention
//!    layer at `u` depends only on `u`'s incident edges, so the computation
//!    walks exactly `u`'s star — equal to running the layer on the full
//!    induced subgraph.
//! 2. Per hop `i ≥ 1`, a **selection** attention layer over a sampled star
//!    (`u` plus up to `n_i` hop-`i` nodes, self-loop included) yields
//!    weights `β`; token `T_i = Σ_v β_v x_v`. `T_0 = x_u`.
//! 3. One scaled dot-product attention layer over the token list gives raw
//!    hop attention `α` (center row); [`adjust_attention`] rescales it by
//!    the gate: `α̂_i = α_i ŝ_i / Σ_k α_k ŝ_k`.
//! 4. The representation is `z_u = Σ_i α̂_i T_i W_V`.
//!
//! Empty hops produce a zero token flagged degenerate rather than an error,
//! so fringe nodes still forward. A frozen variant scales tokens by `ŝ`
//! up front and leaves the attention layer untouched; its effective per-hop
//! weights are `α_i ŝ_i` without renormalization. Cluster tokens built from
//! personalized-PageRank scores can be appended for compatibility with
//! models expecting extra tokens.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{attend, softmax, ProjectionWeights};
use crate::error::{Error, Result};
use crate::graph::{k_hop, Graph};
use crate::hopmatrix::{
    effective_attention_ho, m_ho, phi, rational_to_f64, tree_hop_size,
};
use crate::rng::{self, tags};
use crate::templates::TokenList;

/// Negative-side slope of the LeakyReLU in both attention layers.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Which learnable stages run; the others are frozen to uniform weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Gate and selection both learn.
    Full,
    /// Hop weights `ŝ` frozen uniform; selection still learns.
    NoGate,
    /// Within-hop weights `β` frozen uniform; gate still learns.
    NoSelection,
}

impl Ablation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoGate => "no_gate",
            Ablation::NoSelection => "no_selection",
        }
    }
}

/// One single-head graph-attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    /// Input→output projection, `d_in × d_out`.
    pub w: Array2<f64>,
    /// Edge-scoring vector of length `2·d_out`: the first half weighs the
    /// center's projection, the second half the companion's.
    pub a: Array1<f64>,
    /// Negative-side slope of the LeakyReLU on edge scores.
    pub leaky_slope: f64,
}

impl GatLayer {
    /// Wraps a projection and scoring vector, checking shapes and finiteness.
    pub fn new(w: Array2<f64>, a: Array1<f64>, leaky_slope: f64) -> Result<Self> {
        if a.len() != 2 * w.ncols() {
            return Err(Error::Shape(format!(
                "scoring vector has length {}, expected {} for output width {}",
                a.len(),
                2 * w.ncols(),
                w.ncols()
            )));
        }
        if w.iter().chain(a.iter()).any(|v| !v.is_finite()) || !leaky_slope.is_finite() {
            return Err(Error::Domain(
                "attention layer parameters must be finite".into(),
            ));
        }
        Ok(Self { w, a, leaky_slope })
    }

    /// All-zero parameters: every edge scores 0, so attention is uniform.
    pub fn zeroed(d_in: usize, d_out: usize) -> Self {
        Self {
            w: Array2::zeros((d_in, d_out)),
            a: Array1::zeros(2 * d_out),
            leaky_slope: LEAKY_SLOPE,
        }
    }

    /// Gaussian initialization with standard deviation `1/√d_in`.
    pub fn random<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let std = (d_in.max(1) as f64).sqrt().recip();
        let normal = Normal::new(0.0, std).expect("finite std");
        Self {
            w: Array2::from_shape_fn((d_in, d_out), |_| normal.sample(rng)),
            a: Array1::from_shape_fn(2 * d_out, |_| normal.sample(rng)),
            leaky_slope: LEAKY_SLOPE,
        }
    }

    /// Output width.
    pub fn out_dim(&self) -> usize {
        self.w.ncols()
    }

    /// Input width.
    pub fn in_dim(&self) -> usize {
        self.w.nrows()
    }
}

fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Forward state of one attention star (center plus companions).
#[derive(Debug, Clone)]
pub(crate) struct StarCache {
    /// Node ids, center first.
    pub(crate) members: Vec<u32>,
    /// Raw features, rows aligned with `members`.
    pub(crate) feats: Array2<f64>,
    /// `feats · W` (empty when the scoring layer was skipped).
    pub(crate) proj: Array2<f64>,
    /// Pre-softmax edge scores (empty when skipped).
    pub(crate) pre: Vec<f64>,
    /// Attention over members (center's self-loop first).
    pub(crate) att: Vec<f64>,
}

/// Runs one attention layer on a star of raw feature rows (center first).
fn star_attention(layer: &GatLayer, members: Vec<u32>, feats: Array2<f64>) -> StarCache {
    let proj = feats.dot(&layer.w);
    let out = layer.out_dim();
    let a_center = layer.a.slice(ndarray::s![..out]);
    let a_other = layer.a.slice(ndarray::s![out..]);
    let base: f64 = a_center.dot(&proj.row(0));
    let pre: Vec<f64> = (0..proj.nrows())
        .map(|j| leaky_relu(base + a_other.dot(&proj.row(j)), layer.leaky_slope))
        .collect();
    let att = softmax(&pre);
    StarCache {
        members,
        feats,
        proj,
        pre,
        att,
    }
}

fn uniform_star(members: Vec<u32>, feats: Array2<f64>) -> StarCache {
    let n = members.len();
    StarCache {
        members,
        feats,
        proj: Array2::zeros((0, 0)),
        pre: Vec::new(),
        att: vec![1.0 / n as f64; n],
    }
}

fn gather_feats(g: &Graph, members: &[u32]) -> Result<Array2<f64>> {
    let mut feats = Array2::zeros((members.len(), g.feature_dim()));
    for (row, &v) in members.iter().enumerate() {
        feats.row_mut(row).assign(&g.feature(v)?);
    }
    Ok(feats)
}

/// Gate hop weights at `u`: one attention layer over `u`'s star (self-loop
/// plus 1-hop neighbors), softmax of `u`'s `(hops+1)`-dimensional embedding.
/// An isolated node runs on its self-loop alone.
pub fn gate_scores(g: &Graph, u: u32, gate: &GatLayer, hops: usize) -> Result<Vec<f64>> {
    let (s_hat, _, _) = gate_scores_cached(g, u, gate, hops)?;
    Ok(s_hat)
}

pub(crate) fn gate_scores_cached(
    g: &Graph,
    u: u32,
    gate: &GatLayer,
    hops: usize,
) -> Result<(Vec<f64>, Vec<f64>, StarCache)> {
    if gate.out_dim() != hops + 1 {
        return Err(Error::Shape(format!(
            "gate outputs {} scores but {} hops need {}",
            gate.out_dim(),
            hops,
            hops + 1
        )));
    }
    if gate.in_dim() != g.feature_dim() {
        return Err(Error::Shape(format!(
            "gate expects {}-dimensional features, graph has {}",
            gate.in_dim(),
            g.feature_dim()
        )));
    }
    let mut members = vec![u];
    members.extend_from_slice(g.neighbors(u)?);
    let feats = gather_feats(g, &members)?;
    let star = star_attention(gate, members, feats);
    let emb: Vec<f64> = (0..gate.out_dim())
        .map(|c| {
            star.att
                .iter()
                .zip(star.proj.column(c))
                .map(|(a, p)| a * p)
                .sum()
        })
        .collect();
    let s_hat = softmax(&emb);
    Ok((s_hat, emb, star))
}

/// Deterministically samples up to `want` hop-`i` nodes around `u`.
pub(crate) fn sample_hop_members(
    g: &Graph,
    u: u32,
    hop: usize,
    want: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    let ring = k_hop(g, u, hop)?.members;
    if ring.len() <= want {
        return Ok(ring);
    }
    let mut rng = rng::site_stream(seed, tags::HOP_SAMPLE, u as u64, hop as u64);
    let mut picked: Vec<usize> = index_sample(&mut rng, ring.len(), want).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| ring[i]).collect())
}

/// One selected hop token.
#[derive(Debug, Clone, PartialEq)]
pub struct HopSelection {
    /// `Σ_v β_v x_v` over the star (zero vector for an empty hop).
    pub token: Array1<f64>,
    /// Within-hop weights over the star, self-loop included; sums to 1.
    pub beta: BTreeMap<u32, f64>,
    /// True when hop `i` was empty and the token is a placeholder.
    pub degenerate: bool,
}

/// Selects and aggregates one hop token: samples up to `n_i` hop-`i` nodes,
/// scores the star with the selection layer, and returns the β-weighted
/// feature sum. An empty hop yields a zero token with self-only β, flagged
/// degenerate.
pub fn select_hop_token(
    g: &Graph,
    u: u32,
    hop: usize,
    n_i: usize,
    selection: &GatLayer,
    seed: u64,
) -> Result<HopSelection> {
    if hop == 0 {
        return Err(Error::Config(
            "hop 0 is the raw center token; selection starts at hop 1".into(),
        ));
    }
    let members = sample_hop_members(g, u, hop, n_i, seed)?;
    let (star, degenerate) = selection_star(g, u, &members, selection, Ablation::Full)?;
    Ok(hop_selection_from_star(&star, degenerate))
}

fn selection_star(
    g: &Graph,
    u: u32,
    sampled: &[u32],
    selection: &GatLayer,
    ablation: Ablation,
) -> Result<(StarCache, bool)> {
    if selection.in_dim() != g.feature_dim() {
        return Err(Error::Shape(format!(
            "selection expects {}-dimensional features, graph has {}",
            selection.in_dim(),
            g.feature_dim()
        )));
    }
    if sampled.is_empty() {
        // Empty hop: self-loop only, and the token will be zeroed.
        let members = vec![u];
        let feats = gather_feats(g, &members)?;
        return Ok((uniform_star(members, feats), true));
    }
    let mut members = vec![u];
    members.extend_from_slice(sampled);
    let feats = gather_feats(g, &members)?;
    let star = if ablation == Ablation::NoSelection {
        uniform_star(members, feats)
    } else {
        star_attention(selection, members, feats)
    };
    Ok((star, false))
}

fn hop_selection_from_star(star: &StarCache, degenerate: bool) -> HopSelection {
    let dim = star.feats.ncols();
    let mut beta = BTreeMap::new();
    let mut token = Array1::zeros(dim);
    if degenerate {
        beta.insert(star.members[0], 1.0);
    } else {
        for (j, &v) in star.members.iter().enumerate() {
            beta.insert(v, star.att[j]);
            token.scaled_add(star.att[j], &star.feats.row(j));
        }
    }
    HopSelection {
        token,
        beta,
        degenerate,
    }
}

/// Rescales raw hop attention by gate weights:
/// `α̂_i = α_i ŝ_i / Σ_k α_k ŝ_k`. The denominator is the plain dot
/// product — the only reading that keeps `α̂` on the simplex.
pub fn adjust_attention(alpha: &[f64], s_hat: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() != s_hat.len() {
        return Err(Error::Shape(format!(
            "{} attention weights but {} gate weights",
            alpha.len(),
            s_hat.len()
        )));
    }
    let dot: f64 = alpha.iter().zip(s_hat).map(|(a, s)| a * s).sum();
    if !(dot.is_finite() && dot > 0.0) {
        return Err(Error::Domain(format!(
            "attention and gate weights have dot product {dot}; adjustment needs it positive"
        )));
    }
    Ok(alpha
        .iter()
        .zip(s_hat)
        .map(|(a, s)| a * s / dot)
        .collect())
}

/// Everything the composed forward pass produces at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct LgtlOutput {
    /// The hop tokens actually attended over (gate-scaled in the frozen
    /// variant), with per-node provenance.
    pub tokens: TokenList,
    /// Gate hop weights `ŝ_u` (simplex).
    pub gate_weights: Vec<f64>,
    /// Per-hop within-hop weights; hop 0 is `{u: 1}`.
    pub within_hop: Vec<BTreeMap<u32, f64>>,
    /// Raw center-row attention `α_u` over the tokens (simplex).
    pub raw_attention: Vec<f64>,
    /// Effective per-hop weights: the adjusted simplex vector `α̂_u` for the
    /// standard forward, or the unnormalized products `α_i ŝ_i` for the
    /// frozen variant.
    pub adjusted: Vec<f64>,
    /// Final representation `z_u`.
    pub representation: Array1<f64>,
    /// Hop indices that were empty and produced placeholder tokens.
    pub degenerate_hops: Vec<usize>,
}

/// Per-node sampling context: which nodes feed the gate and each hop star.
/// Built once per (graph, node, seed) so repeated forward passes during
/// training see identical structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeContext {
    /// Center node.
    pub center: u32,
    /// Sampled hop members per hop `1..=L` (possibly empty).
    pub hop_members: Vec<Vec<u32>>,
}

impl NodeContext {
    /// Samples the per-hop stars for `u`.
    pub fn build(
        g: &Graph,
        u: u32,
        hop_count: usize,
        sample_sizes: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if sample_sizes.len() != hop_count {
            return Err(Error::Shape(format!(
                "{} sample sizes for {} hops",
                sample_sizes.len(),
                hop_count
            )));
        }
        let mut hop_members = Vec::with_capacity(hop_count);
        for (i, &n_i) in sample_sizes.iter().enumerate() {
            if n_i == 0 {
                return Err(Error::Config(
                    "every hop must sample at least one node".into(),
                ));
            }
            hop_members.push(sample_hop_members(g, u, i + 1, n_i, seed)?);
        }
        Ok(Self {
            center: u,
            hop_members,
        })
    }
}

/// Forward state kept for the training backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LgtlCache {
    pub(crate) gate: Option<(StarCache, Vec<f64>)>, // star + raw embedding
    pub(crate) stars: Vec<StarCache>,               // per hop 1..=L
    pub(crate) degenerate: Vec<bool>,               // per hop 1..=L
    pub(crate) tokens: Array2<f64>,
    pub(crate) s_hat: Vec<f64>,
    pub(crate) alpha: Vec<f64>,
    pub(crate) adjusted: Vec<f64>,
    pub(crate) keys: Array2<f64>,
    pub(crate) values: Array2<f64>,
    pub(crate) q0: Array1<f64>,
    pub(crate) z: Array1<f64>,
}

/// All parameters of the learnable tokenizer plus its backbone and readout.
#[derive(Debug, Clone, PartialEq)]
pub struct LgtlParams {
    /// Number of hops `L`; the token list has `L+1` entries.
    pub hop_count: usize,
    /// Per-hop sample budgets `n_1..n_L`.
    pub sample_sizes: Vec<usize>,
    /// Hop-weight gate (output width `L+1`).
    pub gate: GatLayer,
    /// Within-hop selection layer.
    pub selection: GatLayer,
    /// Backbone attention projections.
    pub projections: ProjectionWeights,
    /// Readout: `class_count × feature_dim`, applied to `z_u`.
    pub classifier: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    feature_dim: usize,
    class_count: usize,
    hop_count: usize,
    sample_sizes: Vec<usize>,
    selection_width: usize,
    values: Vec<f64>,
}

impl LgtlParams {
    /// Random initialization from a dedicated seed stream.
    pub fn init(
        feature_dim: usize,
        class_count: usize,
        hop_count: usize,
        sample_sizes: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng::site_stream(seed, tags::PARAM_INIT, 0, 0);
        let std = (feature_dim.max(1) as f64).sqrt().recip();
        let normal = Normal::new(0.0, std).expect("finite std");
        let params = Self {
            hop_count,
            sample_sizes,
            gate: GatLayer::random(feature_dim, hop_count + 1, &mut rng),
            selection: GatLayer::random(feature_dim, feature_dim, &mut rng),
            projections: ProjectionWeights::random(feature_dim, &mut rng),
            classifier: Array2::from_shape_fn((class_count, feature_dim), |_| {
                normal.sample(&mut rng)
            }),
        };
        params.validate(feature_dim, class_count)?;
        Ok(params)
    }

    /// All-zero parameters: uniform gate, uniform selection, zero logits.
    pub fn zeroed(
        feature_dim: usize,
        class_count: usize,
        hop_count: usize,
        sample_sizes: Vec<usize>,
    ) -> Result<Self> {
        let params = Self {
            hop_count,
            sample_sizes,
            gate: GatLayer::zeroed(feature_dim, hop_count + 1),
            selection: GatLayer::zeroed(feature_dim, feature_dim),
            projections: ProjectionWeights::new(
                Array2::zeros((feature_dim, feature_dim)),
                Array2::zeros((feature_dim, feature_dim)),
                Array2::zeros((feature_dim, feature_dim)),
            )?,
            classifier: Array2::zeros((class_count, feature_dim)),
        };
        params.validate(feature_dim, class_count)?;
        Ok(params)
    }

    /// Checks internal shape consistency against the data dimensions.
    pub fn validate(&self, feature_dim: usize, class_count: usize) -> Result<()> {
        if self.sample_sizes.len() != self.hop_count {
            return Err(Error::Shape(format!(
                "{} sample sizes for {} hops",
                self.sample_sizes.len(),
                self.hop_count
            )));
        }
        if self.gate.out_dim() != self.hop_count + 1 {
            return Err(Error::Shape(format!(
                "gate outputs {} scores; {} hops need {}",
                self.gate.out_dim(),
                self.hop_count,
                self.hop_count + 1
            )));
        }
        if self.gate.in_dim() != feature_dim
            || self.selection.in_dim() != feature_dim
            || self.projections.width() != feature_dim
            || self.classifier.ncols() != feature_dim
        {
            return Err(Error::Shape(format!(
                "parameter blocks disagree with feature dimension {feature_dim}"
            )));
        }
        if self.classifier.nrows() != class_count {
            return Err(Error::Shape(format!(
                "classifier has {} rows for {class_count} classes",
                self.classifier.nrows()
            )));
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn flat_len(&self) -> usize {
        self.gate.w.len()
            + self.gate.a.len()
            + self.selection.w.len()
            + self.selection.a.len()
            + 3 * self.projections.wq.len()
            + self.classifier.len()
    }

    /// Serializes every parameter into one vector, block order: gate
    /// projection, gate scorer, selection projection, selection scorer,
    /// query, key, value, classifier; each block row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        out.extend(self.gate.w.iter());
        out.extend(self.gate.a.iter());
        out.extend(self.selection.w.iter());
        out.extend(self.selection.a.iter());
        out.extend(self.projections.wq.iter());
        out.extend(self.projections.wk.iter());
        out.extend(self.projections.wv.iter());
        out.extend(self.classifier.iter());
        out
    }

    /// Overwrites every parameter from a flat vector laid out as
    /// [`Self::to_flat`] produces.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.flat_len() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.flat_len()
            )));
        }
        let mut at = 0;
        let mut take = |len: usize| {
            let slice = &values[at..at + len];
            at += len;
            slice.to_vec()
        };
        let len = self.gate.w.len();
        fill(&mut self.gate.w, &take(len));
        let len = self.gate.a.len();
        fill1(&mut self.gate.a, &take(len));
        let len = self.selection.w.len();
        fill(&mut self.selection.w, &take(len));
        let len = self.selection.a.len();
        fill1(&mut self.selection.a, &take(len));
        let len = self.projections.wq.len();
        fill(&mut self.projections.wq, &take(len));
        let len = self.projections.wk.len();
        fill(&mut self.projections.wk, &take(len));
        let len = self.projections.wv.len();
        fill(&mut self.projections.wv, &take(len));
        let len = self.classifier.len();
        fill(&mut self.classifier, &take(len));
        Ok(())
    }

    /// Writes the parameters as a single JSON file with a shape header.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = ParamsFile {
            feature_dim: self.gate.in_dim(),
            class_count: self.classifier.nrows(),
            hop_count: self.hop_count,
            sample_sizes: self.sample_sizes.clone(),
            selection_width: self.selection.out_dim(),
            values: self.to_flat(),
        };
        let text = serde_json::to_string(&file)
            .map_err(|e| Error::Config(format!("could not encode parameters: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Reads parameters written by [`Self::save`].
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: ParamsFile = serde_json::from_str(&text)
            .map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: 0,
                msg: format!("invalid parameter file: {e}"),
            })?;
        let mut params = Self {
            hop_count: file.hop_count,
            sample_sizes: file.sample_sizes.clone(),
            gate: GatLayer::zeroed(file.feature_dim, file.hop_count + 1),
            selection: GatLayer::zeroed(file.feature_dim, file.selection_width),
            projections: ProjectionWeights::identity(file.feature_dim),
            classifier: Array2::zeros((file.class_count, file.feature_dim)),
        };
        params.set_flat(&file.values)?;
        params.validate(file.feature_dim, file.class_count)?;
        Ok(params)
    }
}

fn fill(target: &mut Array2<f64>, values: &[f64]) {
    for (t, v) in target.iter_mut().zip(values) {
        *t = *v;
    }
}

fn fill1(target: &mut Array1<f64>, values: &[f64]) {
    for (t, v) in target.iter_mut().zip(values) {
        *t = *v;
    }
}

/// Composed forward pass at `u` with fresh hop sampling from `seed`.
pub fn lgtl_forward(g: &Graph, u: u32, p: &LgtlParams, seed: u64) -> Result<LgtlOutput> {
    let ctx = NodeContext::build(g, u, p.hop_count, &p.sample_sizes, seed)?;
    let (out, _) = lgtl_forward_cached(g, p, &ctx, Ablation::Full)?;
    Ok(out)
}

/// Forward pass over a prebuilt sampling context.
pub(crate) fn lgtl_forward_cached(
    g: &Graph,
    p: &LgtlParams,
    ctx: &NodeContext,
    ablation: Ablation,
) -> Result<(LgtlOutput, LgtlCache)> {
    let u = ctx.center;
    let dim = g.feature_dim();
    let hops = p.hop_count;
    if ctx.hop_members.len() != hops {
        return Err(Error::Shape(format!(
            "context has {} hop stars for {} hops",
            ctx.hop_members.len(),
            hops
        )));
    }

    // Gate.
    let (s_hat, gate) = if ablation == Ablation::NoGate {
        (vec![1.0 / (hops + 1) as f64; hops + 1], None)
    } else {
        let (s_hat, emb, star) = gate_scores_cached(g, u, &p.gate, hops)?;
        (s_hat, Some((star, emb)))
    };

    // Tokens.
    let mut tokens = Array2::zeros((hops + 1, dim));
    tokens.row_mut(0).assign(&g.feature(u)?);
    let mut within_hop = vec![BTreeMap::from([(u, 1.0)])];
    let mut provenance = vec![vec![(u, BigRational::one())]];
    let mut stars = Vec::with_capacity(hops);
    let mut degenerate = Vec::with_capacity(hops);
    let mut degenerate_hops = Vec::new();
    for (i, members) in ctx.hop_members.iter().enumerate() {
        let (star, degen) = selection_star(g, u, members, &p.selection, ablation)?;
        let sel = hop_selection_from_star(&star, degen);
        tokens.row_mut(i + 1).assign(&sel.token);
        if degen {
            degenerate_hops.push(i + 1);
            provenance.push(vec![(u, BigRational::zero())]);
        } else {
            provenance.push(
                star.members
                    .iter()
                    .zip(&star.att)
                    .map(|(&v, &b)| {
                        (
                            v,
                            BigRational::from_float(b).unwrap_or_else(BigRational::zero),
                        )
                    })
                    .collect(),
            );
        }
        within_hop.push(sel.beta);
        stars.push(star);
        degenerate.push(degen);
    }

    let token_list = TokenList {
        center: u,
        tokens: tokens.clone(),
        provenance,
    };

    // Backbone attention, center row.
    let attn = attend(&token_list, &p.projections)?;
    let alpha = attn.center_attention();
    let adjusted = adjust_attention(&alpha, &s_hat)?;

    // Representation.
    let values = token_list.tokens.dot(&p.projections.wv);
    let mut z = Array1::zeros(dim);
    for (i, w) in adjusted.iter().enumerate() {
        z.scaled_add(*w, &values.row(i));
    }

    let keys = token_list.tokens.dot(&p.projections.wk);
    let q0 = token_list.tokens.row(0).dot(&p.projections.wq);
    let cache = LgtlCache {
        gate,
        stars,
        degenerate,
        tokens,
        s_hat: s_hat.clone(),
        alpha: alpha.clone(),
        adjusted: adjusted.clone(),
        keys,
        values,
        q0,
        z: z.clone(),
    };
    let out = LgtlOutput {
        tokens: token_list,
        gate_weights: s_hat,
        within_hop,
        raw_attention: alpha,
        adjusted,
        representation: z,
        degenerate_hops,
    };
    Ok((out, cache))
}

/// Frozen-adjustment forward: tokens are pre-scaled by the gate weights
/// (`T̃_i = ŝ_i T_i`) and the attention layer runs unmodified on the scaled
/// list. The reported effective weights are `α_i ŝ_i`, so the output equals
/// `Σ_i α_i ŝ_i T_i W_V` without renormalization — the inference-only
/// approximation of the adjusted pipeline.
pub fn lgtl_frozen_forward(
    g: &Graph,
    u: u32,
    p: &LgtlParams,
    seed: u64,
) -> Result<LgtlOutput> {
    let ctx = NodeContext::build(g, u, p.hop_count, &p.sample_sizes, seed)?;
    let (base, _) = lgtl_forward_cached(g, p, &ctx, Ablation::Full)?;
    let s_hat = base.gate_weights.clone();

    let mut scaled = base.tokens.tokens.clone();
    let mut provenance = Vec::with_capacity(scaled.nrows());
    for (i, s) in s_hat.iter().enumerate() {
        let mut row = scaled.row_mut(i);
        row *= *s;
        let scale = BigRational::from_float(*s).unwrap_or_else(BigRational::zero);
        provenance.push(
            base.tokens.provenance[i]
                .iter()
                .map(|(v, w)| (*v, w * &scale))
                .collect(),
        );
    }
    let token_list = TokenList {
        center: u,
        tokens: scaled,
        provenance,
    };
    let attn = attend(&token_list, &p.projections)?;
    let alpha = attn.center_attention();
    let effective: Vec<f64> = alpha.iter().zip(&s_hat).map(|(a, s)| a * s).collect();

    // z = Σ_i α_i (ŝ_i T_i) W_V = Σ_i (α_i ŝ_i) T_i W_V.
    let values = token_list.tokens.dot(&p.projections.wv);
    let mut z = Array1::zeros(g.feature_dim());
    for (i, a) in alpha.iter().enumerate() {
        z.scaled_add(*a, &values.row(i));
    }

    Ok(LgtlOutput {
        tokens: token_list,
        gate_weights: s_hat,
        within_hop: base.within_hop,
        raw_attention: alpha,
        adjusted: effective,
        representation: z,
        degenerate_hops: base.degenerate_hops,
    })
}

/// Effective weights that realize a fixed aggregation scheme inside the
/// gated pipeline: a gate vector, the per-hop attention mass after
/// adjustment, and within-hop weights. The weight a single hop-`k` node
/// receives is `hop_mass[k] · beta[k][slot]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecializedWeights {
    /// Gate weights `ŝ` that realize the scheme (simplex).
    pub s_hat: Vec<f64>,
    /// Per-hop attention mass after adjustment.
    pub hop_mass: Vec<f64>,
    /// Within-hop weight of each node, per hop.
    pub beta: Vec<Vec<f64>>,
}

impl SpecializedWeights {
    /// Composed weight of one node: hop mass times its within-hop share.
    pub fn per_node_weight(&self, hop: usize, slot: usize) -> f64 {
        self.hop_mass[hop] * self.beta[hop][slot]
    }
}

/// Realizes iterated-mean aggregation in the gated pipeline on an
/// `n`-regular tree: uniform within-hop weights `1/|hop k|` and a gate
/// chosen so the adjusted hop mass times the uniform share reproduces the
/// per-node effective attention of the mean-aggregated token list under
/// backbone attention `alpha`.
pub fn specialize_to_ho(n: usize, hops: usize, alpha: &[f64]) -> Result<SpecializedWeights> {
    if alpha.len() != hops + 1 {
        return Err(Error::Shape(format!(
            "{} backbone weights for {} hops",
            alpha.len(),
            hops
        )));
    }
    if alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
        return Err(Error::Config(
            "realizing the gate needs strictly positive backbone attention on every hop".into(),
        ));
    }
    let table = m_ho(n, hops)?;
    let alpha_hat = effective_attention_ho(alpha, &table)?;
    let mut hop_mass = Vec::with_capacity(hops + 1);
    let mut beta = Vec::with_capacity(hops + 1);
    let mut raw_gate = Vec::with_capacity(hops + 1);
    for (k, a_hat) in alpha_hat.iter().enumerate() {
        let size = rational_to_f64(&BigRational::from_integer(tree_hop_size(n, k)));
        let mass = a_hat * size;
        hop_mass.push(mass);
        beta.push(vec![1.0 / size; size as usize]);
        raw_gate.push(mass / alpha[k]);
    }
    let total: f64 = raw_gate.iter().sum();
    let s_hat = raw_gate.into_iter().map(|r| r / total).collect();
    Ok(SpecializedWeights {
        s_hat,
        hop_mass,
        beta,
    })
}

/// Realizes sampled-tree aggregation in the gated pipeline: within-hop
/// weights are the normalized direct scores, the hop mass is the hop's
/// total direct score scaled by the flattened occurrence weight `φ`, and
/// the gate is `φ` normalized (adjusting per-hop totals by a φ-proportional
/// gate reproduces exactly that mass when the scores come from a softmax
/// over the flattened list).
pub fn specialize_to_nd(
    n: usize,
    hops: usize,
    direct_scores: &[Vec<f64>],
) -> Result<SpecializedWeights> {
    if direct_scores.len() != hops + 1 {
        return Err(Error::Shape(format!(
            "{} hop score groups for {} hops",
            direct_scores.len(),
            hops
        )));
    }
    let weights = phi(n, hops)?;
    let phi_f: Vec<f64> = weights.to_f64();
    let phi_total: f64 = phi_f.iter().sum();
    let mut hop_mass = Vec::with_capacity(hops + 1);
    let mut beta = Vec::with_capacity(hops + 1);
    for (k, group) in direct_scores.iter().enumerate() {
        if group.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Domain(
                "direct scores must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = group.iter().sum();
        if group.is_empty() {
            hop_mass.push(0.0);
            beta.push(Vec::new());
            continue;
        }
        if total <= 0.0 {
            return Err(Error::Domain(format!(
                "hop {k} scores sum to {total}; normalization needs a positive total"
            )));
        }
        hop_mass.push(phi_f[k] * total);
        beta.push(group.iter().map(|s| s / total).collect());
    }
    let s_hat = phi_f.iter().map(|p| p / phi_total).collect();
    Ok(SpecializedWeights {
        s_hat,
        hop_mass,
        beta,
    })
}

/// Personalized PageRank by power iteration: restart mass `1 - damping` at
/// `u`, the rest follows the uniform random walk; dangling mass returns to
/// `u`. Scores sum to 1.
pub fn personalized_pagerank(
    g: &Graph,
    u: u32,
    damping: f64,
    iters: usize,
) -> Result<BTreeMap<u32, f64>> {
    g.feature(u)?;
    if !(damping > 0.0 && damping < 1.0) {
        return Err(Error::Config(format!(
            "damping must lie strictly between 0 and 1, got {damping}"
        )));
    }
    let n = g.len();
    let mut p = vec![0.0; n];
    p[u as usize] = 1.0;
    for _ in 0..iters {
        let mut next = vec![0.0; n];
        next[u as usize] = 1.0 - damping;
        for (v, &mass) in p.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let nbrs = g.neighbors(v as u32)?;
            if nbrs.is_empty() {
                next[u as usize] += damping * mass;
            } else {
                let share = damping * mass / nbrs.len() as f64;
                for &nb in nbrs {
                    next[nb as usize] += share;
                }
            }
        }
        p = next;
    }
    let total: f64 = p.iter().sum();
    Ok(p.into_iter()
        .enumerate()
        .filter(|(_, s)| *s > 0.0)
        .map(|(v, s)| (v as u32, s / total))
        .collect())
}

/// Appends cluster summary tokens to a token list. Base tokens are
/// pre-scaled by the gate weights (the frozen-style composition, so one
/// plain attention layer over the extended list reproduces the gated
/// aggregation); each cluster contributes `Σ_{v∈cluster} score_v · x_v`.
/// Empty clusters are skipped; their indices are returned.
pub fn append_cluster_tokens(
    g: &Graph,
    tokens: &TokenList,
    clusters: &[Vec<u32>],
    scores: &[BTreeMap<u32, f64>],
    s_hat: &[f64],
) -> Result<(TokenList, Vec<usize>)> {
    if s_hat.len() != tokens.len() {
        return Err(Error::Shape(format!(
            "{} gate weights for {} tokens",
            s_hat.len(),
            tokens.len()
        )));
    }
    if scores.len() != clusters.len() {
        return Err(Error::Shape(format!(
            "{} score maps for {} clusters",
            scores.len(),
            clusters.len()
        )));
    }
    let dim = tokens.dim();
    let mut skipped = Vec::new();
    let mut rows: Vec<Array1<f64>> = Vec::new();
    let mut provenance: Vec<Vec<(u32, BigRational)>> = Vec::new();

    for (i, s) in s_hat.iter().enumerate() {
        rows.push(tokens.token(i).to_owned() * *s);
        let scale = BigRational::from_float(*s).unwrap_or_else(BigRational::zero);
        provenance.push(
            tokens.provenance[i]
                .iter()
                .map(|(v, w)| (*v, w * &scale))
                .collect(),
        );
    }
    for (j, cluster) in clusters.iter().enumerate() {
        if cluster.is_empty() {
            skipped.push(j);
            continue;
        }
        let mut token = Array1::zeros(dim);
        let mut entries = Vec::new();
        for &v in cluster {
            let w = scores[j].get(&v).copied().unwrap_or(0.0);
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Domain(format!(
                    "cluster {j} score for node {v} must be finite and nonnegative"
                )));
            }
            token.scaled_add(w, &g.feature(v)?);
            entries.push((
                v,
                BigRational::from_float(w).unwrap_or_else(BigRational::zero),
            ));
        }
        rows.push(token);
        provenance.push(entries);
    }

    let mut out = Array2::zeros((rows.len(), dim));
    for (r, row) in rows.iter().enumerate() {
        out.row_mut(r).assign(row);
    }
    Ok((
        TokenList {
            center: tokens.center,
            tokens: out,
            provenance,
        },
        skipped,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hopmatrix::effective_attention_nd;
    use crate::synth::{generate_sbm, SbmConfig};
    use ndarray::array;

    fn path3() -> Graph {
        Graph::new(
            &[(0, 1), (1, 2)],
            array![[1.0, 0.0], [0.0, 1.0], [3.0, 0.5]],
            None,
            0,
        )
        .unwrap()
    }

    fn small_sbm(seed: u64) -> Graph {
        generate_sbm(
            &SbmConfig {
                class_count: 2,
                nodes_per_class: 15,
                p_intra: 0.3,
                p_inter: 0.15,
                feature_dim: 4,
                class_mean_separation: 2.0,
                noise_std: 0.4,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_gate_is_uniform() {
        let g = path3();
        let gate = GatLayer::zeroed(2, 3);
        let s = gate_scores(&g, 1, &gate, 2).unwrap();
        for v in &s {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gate_softmax_arithmetic_and_shift_invariance() {
        // Isolated node: the star is the self-loop, so the raw scores are
        // x_u·W directly (attention over one member is 1).
        let g = Graph::new(&[(1, 2)], array![[1.0], [0.0], [0.0]], None, 0).unwrap();
        let ln2 = 2.0f64.ln();
        let gate = GatLayer::new(
            array![[ln2, 0.0]],
            Array1::zeros(4),
            LEAKY_SLOPE,
        )
        .unwrap();
        let s = gate_scores(&g, 0, &gate, 1).unwrap();
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s[1] - 1.0 / 3.0).abs() < 1e-12);
        // Adding a constant to both raw scores changes nothing.
        let shifted = GatLayer::new(
            array![[ln2 + 5.0, 5.0]],
            Array1::zeros(4),
            LEAKY_SLOPE,
        )
        .unwrap();
        let s2 = gate_scores(&g, 0, &shifted, 1).unwrap();
        for (a, b) in s.iter().zip(&s2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_splits_evenly_when_scores_are_flat() {
        let g = path3();
        let sel = GatLayer::zeroed(2, 2);
        let hs = select_hop_token(&g, 0, 1, 3, &sel, 5).unwrap();
        assert!(!hs.degenerate);
        assert_eq!(hs.beta.len(), 2);
        for w in hs.beta.values() {
            assert!((w - 0.5).abs() < 1e-15);
        }
        // Token = (x_0 + x_1) / 2.
        assert!((hs.token[0] - 0.5).abs() < 1e-15);
        assert!((hs.token[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn selection_weights_are_equal_across_identical_features() {
        let g = Graph::new(
            &[(0, 1), (0, 2), (0, 3)],
            array![[1.0], [2.0], [2.0], [2.0]],
            None,
            0,
        )
        .unwrap();
        let mut rng = rng::seeded(3);
        let sel = GatLayer::random(1, 2, &mut rng);
        let hs = select_hop_token(&g, 0, 1, 3, &sel, 5).unwrap();
        let ws: Vec<f64> = [1u32, 2, 3].iter().map(|v| hs.beta[v]).collect();
        assert!((ws[0] - ws[1]).abs() < 1e-15);
        assert!((ws[1] - ws[2]).abs() < 1e-15);
    }

    #[test]
    fn selection_token_stays_in_the_convex_hull() {
        let g = small_sbm(1);
        let mut rng = rng::seeded(5);
        let sel = GatLayer::random(4, 4, &mut rng);
        for u in [0u32, 7, 20] {
            let hs = select_hop_token(&g, u, 2, 4, &sel, 9).unwrap();
            let total: f64 = hs.beta.values().sum();
            assert!((total - 1.0).abs() < 1e-9);
            for c in 0..4 {
                let lo = hs
                    .beta
                    .keys()
                    .map(|&v| g.feature(v).unwrap()[c])
                    .fold(f64::INFINITY, f64::min);
                let hi = hs
                    .beta
                    .keys()
                    .map(|&v| g.feature(v).unwrap()[c])
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(hs.token[c] >= lo - 1e-12 && hs.token[c] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn empty_hops_are_flagged_not_fatal() {
        let g = path3();
        let sel = GatLayer::zeroed(2, 2);
        let hs = select_hop_token(&g, 0, 5, 3, &sel, 1).unwrap();
        assert!(hs.degenerate);
        assert_eq!(hs.token.to_vec(), vec![0.0, 0.0]);
        assert_eq!(hs.beta, BTreeMap::from([(0u32, 1.0)]));
    }

    #[test]
    fn adjustment_examples() {
        // Uniform gate: unchanged.
        let out = adjust_attention(&[0.2, 0.8], &[0.5, 0.5]).unwrap();
        assert!((out[0] - 0.2).abs() < 1e-12 && (out[1] - 0.8).abs() < 1e-12);
        // One-hot attention stays one-hot.
        let out = adjust_attention(&[0.0, 1.0], &[0.3, 0.7]).unwrap();
        assert_eq!(out, vec![0.0, 1.0]);
        // Pinned arithmetic case.
        let out = adjust_attention(&[0.5, 0.5], &[0.8, 0.2]).unwrap();
        assert!((out[0] - 0.8).abs() < 1e-12 && (out[1] - 0.2).abs() < 1e-12);
        // Zero overlap is undefined.
        assert!(adjust_attention(&[1.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn forward_with_no_hops_is_a_projection() {
        let g = path3();
        let mut p = LgtlParams::init(2, 2, 0, vec![], 11).unwrap();
        p.projections = ProjectionWeights::new(
            Array2::eye(2),
            Array2::eye(2),
            array![[2.0, 0.0], [0.0, 2.0]],
        )
        .unwrap();
        let out = lgtl_forward(&g, 2, &p, 1).unwrap();
        assert_eq!(out.raw_attention, vec![1.0]);
        assert_eq!(out.adjusted, vec![1.0]);
        assert_eq!(out.representation.to_vec(), vec![6.0, 1.0]);
    }

    #[test]
    fn uniform_gate_reduces_to_plain_attention() {
        let g = small_sbm(2);
        let mut p = LgtlParams::init(4, 2, 2, vec![3, 3], 13).unwrap();
        p.gate = GatLayer::zeroed(4, 3); // uniform ŝ
        let out = lgtl_forward(&g, 4, &p, 21).unwrap();
        let plain = attend(&out.tokens, &p.projections).unwrap();
        for (a, b) in out.raw_attention.iter().zip(&out.adjusted) {
            assert!((a - b).abs() < 1e-12);
        }
        let z = plain.center_output();
        for (a, b) in out.representation.iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_recomposes_from_its_own_parts() {
        let g = small_sbm(3);
        let p = LgtlParams::init(4, 2, 2, vec![4, 4], 17).unwrap();
        let out = lgtl_forward(&g, 9, &p, 23).unwrap();
        // Simplex checks.
        let sums = [
            out.gate_weights.iter().sum::<f64>(),
            out.raw_attention.iter().sum::<f64>(),
            out.adjusted.iter().sum::<f64>(),
        ];
        for s in sums {
            assert!((s - 1.0).abs() < 1e-9);
        }
        for beta in &out.within_hop {
            let s: f64 = beta.values().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        // z recomposed independently.
        let mut z = Array1::zeros(4);
        for (i, w) in out.adjusted.iter().enumerate() {
            let vi = out.tokens.token(i).dot(&p.projections.wv);
            z.scaled_add(*w, &vi);
        }
        for (a, b) in out.representation.iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        out.tokens.check_consistency(&g).unwrap();
    }

    #[test]
    fn forward_matches_standalone_ops() {
        let g = small_sbm(4);
        let p = LgtlParams::init(4, 2, 2, vec![3, 3], 29).unwrap();
        let seed = 31;
        let out = lgtl_forward(&g, 5, &p, seed).unwrap();
        let s = gate_scores(&g, 5, &p.gate, 2).unwrap();
        assert_eq!(out.gate_weights, s);
        for hop in 1..=2usize {
            let hs = select_hop_token(&g, 5, hop, 3, &p.selection, seed).unwrap();
            assert_eq!(out.within_hop[hop], hs.beta);
            for (a, b) in out.tokens.token(hop).iter().zip(hs.token.iter()) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn frozen_forward_satisfies_the_scaling_identity() {
        let g = small_sbm(5);
        let p = LgtlParams::init(4, 2, 2, vec![3, 3], 37).unwrap();
        let seed = 41;
        let frozen = lgtl_frozen_forward(&g, 8, &p, seed).unwrap();
        let base = lgtl_forward(&g, 8, &p, seed).unwrap();
        // z = Σ (α_i ŝ_i) T_i W_V over the *unscaled* tokens.
        let mut z = Array1::zeros(4);
        for (i, eff) in frozen.adjusted.iter().enumerate() {
            let vi = base.tokens.token(i).dot(&p.projections.wv);
            z.scaled_add(*eff, &vi);
        }
        for (a, b) in frozen.representation.iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        // Per-node expansion: Σ_i Σ_v (α_i ŝ_i β_{i,v}) x_v W_V.
        let mut zz = Array1::zeros(4);
        for (i, eff) in frozen.adjusted.iter().enumerate() {
            if base.degenerate_hops.contains(&i) {
                continue;
            }
            for (&v, &b) in &base.within_hop[i] {
                let xv = g.feature(v).unwrap().dot(&p.projections.wv);
                zz.scaled_add(eff * b, &xv);
            }
        }
        for (a, b) in frozen.representation.iter().zip(zz.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn near_zero_gate_weight_silences_a_hop() {
        let g = path3();
        // Gate driven to put vanishing weight on hop 1: huge negative score.
        let mut p = LgtlParams::zeroed(2, 2, 1, vec![2]).unwrap();
        p.gate = GatLayer::new(
            array![[400.0, -400.0], [0.0, 0.0]],
            Array1::zeros(4),
            LEAKY_SLOPE,
        )
        .unwrap();
        p.projections = ProjectionWeights::identity(2);
        let out = lgtl_frozen_forward(&g, 0, &p, 1).unwrap();
        assert!(out.gate_weights[1] < 1e-100);
        // Hop 1 contributes (α_1 ŝ_1) T_1, which is numerically nothing.
        let x0 = g.feature(0).unwrap();
        let expect = &x0 * (out.adjusted[0]);
        for (a, b) in out.representation.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ablations_freeze_the_right_stage() {
        let g = small_sbm(6);
        let p = LgtlParams::init(4, 2, 2, vec![3, 3], 43).unwrap();
        let ctx = NodeContext::build(&g, 3, 2, &[3, 3], 47).unwrap();
        let (no_gate, _) = lgtl_forward_cached(&g, &p, &ctx, Ablation::NoGate).unwrap();
        for s in &no_gate.gate_weights {
            assert!((s - 1.0 / 3.0).abs() < 1e-15);
        }
        let (no_sel, _) = lgtl_forward_cached(&g, &p, &ctx, Ablation::NoSelection).unwrap();
        for beta in no_sel.within_hop.iter().skip(1) {
            let first = *beta.values().next().unwrap();
            for w in beta.values() {
                assert!((w - first).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn parameters_roundtrip_through_flat_and_disk() {
        let p = LgtlParams::init(3, 2, 2, vec![2, 3], 51).unwrap();
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.flat_len());
        let mut q = LgtlParams::zeroed(3, 2, 2, vec![2, 3]).unwrap();
        q.set_flat(&flat).unwrap();
        assert_eq!(p, q);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        p.save(&path).unwrap();
        let r = LgtlParams::load(&path).unwrap();
        assert_eq!(p, r);
    }

    #[test]
    fn mean_aggregation_specialization_matches_the_table() {
        for (n, hops) in [(2usize, 2usize), (3, 3)] {
            let alpha = vec![1.0 / (hops + 1) as f64; hops + 1];
            let sw = specialize_to_ho(n, hops, &alpha).unwrap();
            let table = m_ho(n, hops).unwrap();
            let expect = effective_attention_ho(&alpha, &table).unwrap();
            for k in 0..=hops {
                for slot in 0..sw.beta[k].len() {
                    assert!(
                        (sw.per_node_weight(k, slot) - expect[k]).abs() < 1e-10,
                        "n={n} hop {k}"
                    );
                }
            }
            // The gate really realizes the adjusted mass.
            let adjusted = adjust_attention(&alpha, &sw.s_hat).unwrap();
            for (a, b) in adjusted.iter().zip(&sw.hop_mass) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampled_tree_specialization_matches_phi_scaling() {
        // Depth 1: identity scaling.
        let sw = specialize_to_nd(3, 1, &[vec![0.6], vec![0.2, 0.2]]).unwrap();
        assert!((sw.per_node_weight(0, 0) - 0.6).abs() < 1e-12);
        assert!((sw.per_node_weight(1, 0) - 0.2).abs() < 1e-12);
        // Depth 3 matches the φ-scaled reference.
        let n = 2;
        let hops = 3;
        let direct = vec![
            vec![0.4],
            vec![0.05, 0.03],
            vec![0.02, 0.02],
            vec![0.01, 0.015],
        ];
        let sw = specialize_to_nd(n, hops, &direct).unwrap();
        let reference =
            effective_attention_nd(&direct, &phi(n, hops).unwrap()).unwrap();
        for k in 0..=hops {
            for (slot, want) in reference[k].iter().enumerate() {
                assert!(
                    (sw.per_node_weight(k, slot) - want).abs() < 1e-10,
                    "hop {k} slot {slot}"
                );
            }
        }
    }

    #[test]
    fn pagerank_fixed_points() {
        let g = Graph::new(&[(0, 1)], array![[1.0], [2.0]], None, 0).unwrap();
        let p = personalized_pagerank(&g, 0, 0.5, 100).unwrap();
        assert!((p[&0] - 2.0 / 3.0).abs() < 1e-8);
        assert!((p[&1] - 1.0 / 3.0).abs() < 1e-8);
        // Tiny damping keeps nearly all mass at the restart node.
        let p = personalized_pagerank(&g, 0, 1e-6, 50).unwrap();
        assert!(p[&0] > 0.999);
        // Scores always sum to 1.
        let g2 = small_sbm(7);
        let p = personalized_pagerank(&g2, 3, 0.85, 60).unwrap();
        let total: f64 = p.values().sum();
        assert!((total - 1.0).abs() < 1e-8);
        assert!(personalized_pagerank(&g, 0, 1.5, 10).is_err());
    }

    #[test]
    fn cluster_tokens_append_and_reduce() {
        let g = path3();
        let p = LgtlParams::zeroed(2, 2, 1, vec![2]).unwrap();
        let out = lgtl_forward(&g, 1, &p, 3).unwrap();
        let s_hat = out.gate_weights.clone();

        // No clusters: scaled base only.
        let (same, skipped) =
            append_cluster_tokens(&g, &out.tokens, &[], &[], &s_hat).unwrap();
        assert!(skipped.is_empty());
        assert_eq!(same.len(), out.tokens.len());

        // Uniform scores over a two-node cluster give the mean feature.
        let cluster = vec![0u32, 2];
        let scores = BTreeMap::from([(0u32, 0.5), (2u32, 0.5)]);
        let (ext, skipped) = append_cluster_tokens(
            &g,
            &out.tokens,
            &[cluster, vec![]],
            &[scores, BTreeMap::new()],
            &s_hat,
        )
        .unwrap();
        assert_eq!(skipped, vec![1]);
        assert_eq!(ext.len(), out.tokens.len() + 1);
        let mean = (g.feature(0).unwrap().to_owned() + g.feature(2).unwrap()) / 2.0;
        for (a, b) in ext.token(ext.len() - 1).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Zero attention on the cluster token reproduces the scaled-base
        // aggregation: base rows are bit-identical.
        for i in 0..same.len() {
            assert_eq!(ext.token(i).to_vec(), same.token(i).to_vec());
        }
        ext.check_consistency(&g).unwrap();
    }
}
