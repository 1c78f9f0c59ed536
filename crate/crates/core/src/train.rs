//! Desk-scale supervised training for node classification: full-batch
//! gradient descent over any of the four token-list constructions, with
//! exact analytic gradients, finite-difference verification, and ablation
//! switches.
//!
//! Design choices that keep runs reproducible:
//!
//! - Plain full-batch gradient descent, no momentum or adaptive state, so a
//!   run is a pure function of (graph, splits, config, seed).
//! - Per-node gradient evaluations may fan out across threads, but results
//!   come back in node order and are folded sequentially, so accumulation
//!   order — and therefore every bit of the result — is fixed.
//! - Hop sampling is frozen per node by default (the loss surface is
//!   stationary); a flag re-draws samples each epoch.
//! - Argmax ties resolve to the lowest class index.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attention::{attend, softmax};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::lgtl::{
    lgtl_forward_cached, Ablation, LgtlCache, LgtlParams, NodeContext, StarCache,
};
use crate::parallel;
use crate::rng::{self, tags};
use crate::templates::{ho_tokens, nd_tokens, none_tokens, TokenList};

/// Which token-list construction feeds the shared attention backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    /// Center feature only.
    None,
    /// Iterated-mean hop tokens.
    Ho,
    /// Sampled-tree per-slot tokens.
    Nd,
    /// The learnable gate + selection pipeline.
    Lgtl,
}

impl TemplateKind {
    /// Stable lower-case name, used in CSV output and CLI parsing.
    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateKind::None => "none",
            TemplateKind::Ho => "ho",
            TemplateKind::Nd => "nd",
            TemplateKind::Lgtl => "lgtl",
        }
    }
}

impl std::str::FromStr for TemplateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TemplateKind::None),
            "ho" => Ok(TemplateKind::Ho),
            "nd" => Ok(TemplateKind::Nd),
            "lgtl" => Ok(TemplateKind::Lgtl),
            other => Err(Error::Config(format!(
                "unknown template '{other}' (expected none, ho, nd, or lgtl)"
            ))),
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_gate" => Ok(Ablation::NoGate),
            "no_selection" => Ok(Ablation::NoSelection),
            other => Err(Error::Config(format!(
                "unknown ablation '{other}' (expected full, no_gate, or no_selection)"
            ))),
        }
    }
}

/// Whether the shared attention projections receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneMode {
    /// Query/key/value projections train along with everything else.
    Trainable,
    /// Projections stay at their initialization; comparisons between token
    /// lists then isolate the list itself.
    Frozen,
}

impl std::str::FromStr for BackboneMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trainable" => Ok(BackboneMode::Trainable),
            "frozen" => Ok(BackboneMode::Frozen),
            other => Err(Error::Config(format!(
                "unknown backbone mode '{other}' (expected trainable or frozen)"
            ))),
        }
    }
}

/// Full training configuration.
///
/// Deserializes leniently: absent fields take their [`Default`] values, so a
/// JSON config may name only the fields it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub template: TemplateKind,
    pub ablation: Ablation,
    pub backbone: BackboneMode,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a new best validation micro-F1.
    pub early_stop_patience: usize,
    pub hop_count: usize,
    pub sample_sizes: Vec<usize>,
    pub seed: u64,
    /// Re-draw hop samples every epoch instead of freezing them per node.
    pub resample_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            template: TemplateKind::Lgtl,
            ablation: Ablation::Full,
            backbone: BackboneMode::Trainable,
            learning_rate: 1e-2,
            epochs: 500,
            early_stop_patience: 50,
            hop_count: 2,
            sample_sizes: vec![5, 5],
            seed: 0,
            resample_each_epoch: false,
        }
    }
}

impl TrainConfig {
    /// Checks field validity.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.sample_sizes.len() != self.hop_count {
            return Err(Error::Config(format!(
                "{} sample sizes for {} hops",
                self.sample_sizes.len(),
                self.hop_count
            )));
        }
        Ok(())
    }

    fn epoch_seed(&self, epoch: usize) -> u64 {
        if self.resample_each_epoch {
            self.seed
                .wrapping_add((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        } else {
            self.seed
        }
    }
}

/// Train/validation/test node partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl SplitSpec {
    /// Random split by shuffling all node ids: `train_frac` to train,
    /// `val_frac` to validation, the rest to test.
    pub fn random(g: &Graph, train_frac: f64, val_frac: f64, seed: u64) -> Result<Self> {
        if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0) {
            return Err(Error::Config(format!(
                "split fractions ({train_frac}, {val_frac}) must be positive and leave room for test"
            )));
        }
        let n = g.len();
        let mut ids: Vec<u32> = (0..n as u32).collect();
        let mut rng = rng::site_stream(seed, tags::SPLIT, 0, 0);
        ids.shuffle(&mut rng);
        let n_train = ((n as f64) * train_frac).round() as usize;
        let n_val = ((n as f64) * val_frac).round() as usize;
        if n_train == 0 || n_train + n_val >= n {
            return Err(Error::Config(format!(
                "graph with {n} nodes is too small for a ({train_frac}, {val_frac}) split"
            )));
        }
        Ok(Self {
            train: ids[..n_train].to_vec(),
            val: ids[n_train..n_train + n_val].to_vec(),
            test: ids[n_train + n_val..].to_vec(),
        })
    }

    /// Checks the three lists are disjoint and reference existing nodes.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for &v in self.train.iter().chain(&self.val).chain(&self.test) {
            if v as usize >= g.len() {
                return Err(Error::NodeRange {
                    id: v as usize,
                    nodes: g.len(),
                });
            }
            if !seen.insert(v) {
                return Err(Error::Config(format!(
                    "node {v} appears in more than one split"
                )));
            }
        }
        Ok(())
    }
}

/// Classification quality on a node set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Micro-averaged F1; equals accuracy for single-label classification.
    pub micro_f1: f64,
    /// Unweighted mean of per-class F1; classes absent from both truth and
    /// prediction contribute 0.
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// One row of the training curve: loss before the update of this epoch and
/// validation quality after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_micro_f1: f64,
    pub val_macro_f1: f64,
}

/// Computes micro/macro F1 from aligned truth/prediction vectors.
pub fn metrics_from_predictions(truth: &[u32], pred: &[u32], class_count: usize) -> Result<Metrics> {
    if truth.is_empty() || truth.len() != pred.len() {
        return Err(Error::Domain(format!(
            "metrics need matching nonempty label lists, got {} truths and {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    let micro = correct as f64 / truth.len() as f64;

    let mut tp = vec![0usize; class_count];
    let mut fp = vec![0usize; class_count];
    let mut fn_ = vec![0usize; class_count];
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fn_[t as usize] += 1;
        }
    }
    let mut macro_sum = 0.0;
    for c in 0..class_count {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            macro_sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Ok(Metrics {
        micro_f1: micro,
        macro_f1: macro_sum / class_count as f64,
        accuracy: micro,
    })
}

// ---------------------------------------------------------------------------
// Forward evaluation shared by loss, gradients, and prediction.
// ---------------------------------------------------------------------------

/// Precomputed per-node forward inputs. Fixed templates freeze their token
/// list once; the learnable pipeline freezes its sampling context. Built
/// once per training run (or per epoch under resampling) so the loss
/// surface is stationary and repeated epochs don't redo graph traversals.
enum NodeInput {
    Fixed(TokenList),
    Gated(NodeContext),
}

fn prepare_input(g: &Graph, cfg: &TrainConfig, u: u32, seed: u64) -> Result<NodeInput> {
    Ok(match cfg.template {
        TemplateKind::None => NodeInput::Fixed(none_tokens(g, u)?),
        TemplateKind::Ho => NodeInput::Fixed(ho_tokens(g, u, cfg.hop_count)?),
        TemplateKind::Nd => NodeInput::Fixed(nd_tokens(g, u, &cfg.sample_sizes, seed)?.0),
        TemplateKind::Lgtl => NodeInput::Gated(NodeContext::build(
            g,
            u,
            cfg.hop_count,
            &cfg.sample_sizes,
            seed,
        )?),
    })
}

fn prepare_inputs(
    g: &Graph,
    cfg: &TrainConfig,
    nodes: &[u32],
    seed: u64,
) -> Result<Vec<NodeInput>> {
    parallel::map(nodes, |&u| prepare_input(g, cfg, u, seed))
        .into_iter()
        .collect()
}

enum Fwd {
    /// Tokens are constants; only the backbone and classifier have gradients.
    Fixed {
        tokens: Array2<f64>,
        keys: Array2<f64>,
        values: Array2<f64>,
        q0: Array1<f64>,
        alpha: Vec<f64>,
        z: Array1<f64>,
    },
    /// Full learnable pipeline with its cached intermediates.
    Gated(Box<LgtlCache>),
}

struct NodeEval {
    logits: Vec<f64>,
    fwd: Fwd,
}

fn fixed_forward(tokens: &TokenList, p: &LgtlParams) -> Result<Fwd> {
    let attn = attend(tokens, &p.projections)?;
    let alpha = attn.center_attention();
    let values = tokens.tokens.dot(&p.projections.wv);
    let mut z = Array1::zeros(tokens.dim());
    for (i, a) in alpha.iter().enumerate() {
        z.scaled_add(*a, &values.row(i));
    }
    let keys = tokens.tokens.dot(&p.projections.wk);
    let q0 = tokens.tokens.row(0).dot(&p.projections.wq);
    Ok(Fwd::Fixed {
        tokens: tokens.tokens.clone(),
        keys,
        values,
        q0,
        alpha,
        z,
    })
}

fn node_eval(
    g: &Graph,
    cfg: &TrainConfig,
    p: &LgtlParams,
    input: &NodeInput,
) -> Result<NodeEval> {
    let fwd = match input {
        NodeInput::Fixed(tokens) => fixed_forward(tokens, p)?,
        NodeInput::Gated(ctx) => {
            let (_, cache) = lgtl_forward_cached(g, p, ctx, cfg.ablation)?;
            Fwd::Gated(Box::new(cache))
        }
    };
    let z = match &fwd {
        Fwd::Fixed { z, .. } => z,
        Fwd::Gated(c) => &c.z,
    };
    let logits: Vec<f64> = (0..p.classifier.nrows())
        .map(|c| p.classifier.row(c).dot(z))
        .collect();
    Ok(NodeEval { logits, fwd })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn argmax_lowest(v: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best as u32
}

/// Predicted class of one node (argmax logits, ties to the lowest index).
pub fn predict(g: &Graph, cfg: &TrainConfig, p: &LgtlParams, u: u32) -> Result<u32> {
    let input = prepare_input(g, cfg, u, cfg.seed)?;
    let eval = node_eval(g, cfg, p, &input)?;
    Ok(argmax_lowest(&eval.logits))
}

/// Evaluates classification quality on `nodes`.
pub fn evaluate(g: &Graph, cfg: &TrainConfig, p: &LgtlParams, nodes: &[u32]) -> Result<Metrics> {
    let inputs = prepare_inputs(g, cfg, nodes, cfg.seed)?;
    evaluate_prepared(g, cfg, p, nodes, &inputs)
}

fn evaluate_prepared(
    g: &Graph,
    cfg: &TrainConfig,
    p: &LgtlParams,
    nodes: &[u32],
    inputs: &[NodeInput],
) -> Result<Metrics> {
    if nodes.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty node list".into()));
    }
    let idx: Vec<usize> = (0..nodes.len()).collect();
    let preds: Vec<Result<(u32, u32)>> = parallel::map(&idx, |&i| {
        let eval = node_eval(g, cfg, p, &inputs[i])?;
        Ok((g.label(nodes[i])?, argmax_lowest(&eval.logits)))
    });
    let mut truth = Vec::with_capacity(nodes.len());
    let mut pred = Vec::with_capacity(nodes.len());
    for r in preds {
        let (t, y) = r?;
        truth.push(t);
        pred.push(y);
    }
    metrics_from_predictions(&truth, &pred, g.class_count())
}

// ---------------------------------------------------------------------------
// Analytic gradients.
// ---------------------------------------------------------------------------

struct Grads {
    gate_w: Array2<f64>,
    gate_a: Array1<f64>,
    sel_w: Array2<f64>,
    sel_a: Array1<f64>,
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    classifier: Array2<f64>,
}

impl Grads {
    fn zeros_like(p: &LgtlParams) -> Self {
        Self {
            gate_w: Array2::zeros(p.gate.w.raw_dim()),
            gate_a: Array1::zeros(p.gate.a.raw_dim()),
            sel_w: Array2::zeros(p.selection.w.raw_dim()),
            sel_a: Array1::zeros(p.selection.a.raw_dim()),
            wq: Array2::zeros(p.projections.wq.raw_dim()),
            wk: Array2::zeros(p.projections.wk.raw_dim()),
            wv: Array2::zeros(p.projections.wv.raw_dim()),
            classifier: Array2::zeros(p.classifier.raw_dim()),
        }
    }

    /// Same block order as [`LgtlParams::to_flat`].
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.gate_w.iter());
        out.extend(self.gate_a.iter());
        out.extend(self.sel_w.iter());
        out.extend(self.sel_a.iter());
        out.extend(self.wq.iter());
        out.extend(self.wk.iter());
        out.extend(self.wv.iter());
        out.extend(self.classifier.iter());
        out
    }
}

fn outer_add(target: &mut Array2<f64>, scale: f64, col: &Array1<f64>, row: &Array1<f64>) {
    for (r, cv) in col.iter().enumerate() {
        let mut t = target.row_mut(r);
        t.scaled_add(scale * cv, row);
    }
}

/// Backward pass through one attention star: given d(att) and the cached
/// forward state, accumulates gradients for the layer's scoring vector and
/// projection. `a` is the layer's scoring vector, `slope` its LeakyReLU
/// slope; `dproj` carries any gradient already flowing into the projections
/// (the gate's embedding path), and is extended in place with the score-path
/// contributions before the projection gradient is formed.
fn star_backward(
    star: &StarCache,
    datt: &[f64],
    dproj: &mut Array2<f64>,
    a: &Array1<f64>,
    slope: f64,
    grad_w: &mut Array2<f64>,
    grad_a: &mut Array1<f64>,
) {
    let h = dproj.ncols();
    let a1 = a.slice(ndarray::s![..h]);
    let a2 = a.slice(ndarray::s![h..]);
    // Softmax backward: dpre_j = att_j (datt_j - Σ_k att_k datt_k).
    let mix: f64 = star.att.iter().zip(datt).map(|(a, d)| a * d).sum();
    let mut sum_draw = 0.0;
    let mut draws = vec![0.0; datt.len()];
    for j in 0..datt.len() {
        let dpre = star.att[j] * (datt[j] - mix);
        // LeakyReLU backward; the stored score is post-activation, and the
        // activation preserves sign, so its sign decides the branch.
        let draw = if star.pre[j] > 0.0 { dpre } else { slope * dpre };
        draws[j] = draw;
        sum_draw += draw;
    }
    // Raw score raw_j = a1·proj_0 + a2·proj_j.
    for c in 0..h {
        grad_a[c] += sum_draw * star.proj[[0, c]];
    }
    for (j, draw) in draws.iter().enumerate() {
        for c in 0..h {
            grad_a[h + c] += draw * star.proj[[j, c]];
        }
        dproj.row_mut(j).scaled_add(*draw, &a2);
    }
    dproj.row_mut(0).scaled_add(sum_draw, &a1);
    *grad_w += &star.feats.t().dot(dproj);
}

fn node_gradient(
    g: &Graph,
    cfg: &TrainConfig,
    p: &LgtlParams,
    u: u32,
    input: &NodeInput,
) -> Result<(f64, Grads)> {
    let eval = node_eval(g, cfg, p, input)?;
    let y = g.label(u)? as usize;
    let lse = log_sum_exp(&eval.logits);
    let loss = lse - eval.logits[y];

    let mut grads = Grads::zeros_like(p);
    let probs = softmax(&eval.logits);
    let mut dlogits = probs;
    dlogits[y] -= 1.0;

    let (tokens, keys, values, q0, alpha, adjusted, z, gated) = match &eval.fwd {
        Fwd::Fixed {
            tokens,
            keys,
            values,
            q0,
            alpha,
            z,
        } => (tokens, keys, values, q0, alpha, alpha, z, None),
        Fwd::Gated(c) => (
            &c.tokens,
            &c.keys,
            &c.values,
            &c.q0,
            &c.alpha,
            &c.adjusted,
            &c.z,
            Some(c.as_ref()),
        ),
    };
    let m = alpha.len();
    let dim = tokens.ncols();

    // Classifier and dz.
    for (c, dl) in dlogits.iter().enumerate() {
        grads.classifier.row_mut(c).scaled_add(*dl, z);
    }
    let mut dz = Array1::zeros(dim);
    for (c, dl) in dlogits.iter().enumerate() {
        dz.scaled_add(*dl, &p.classifier.row(c));
    }

    // Effective weights: d(adjusted)_i = dz · V_i.
    let d_adj: Vec<f64> = (0..m).map(|i| dz.dot(&values.row(i))).collect();

    // Gate-adjustment jacobian (identity for fixed templates).
    let (d_alpha, d_s_hat) = if let Some(c) = gated {
        let s: f64 = alpha.iter().zip(&c.s_hat).map(|(a, g)| a * g).sum();
        let common: f64 = d_adj.iter().zip(adjusted).map(|(d, a)| d * a).sum();
        let d_alpha: Vec<f64> = (0..m)
            .map(|j| c.s_hat[j] / s * (d_adj[j] - common))
            .collect();
        let d_s_hat: Vec<f64> = (0..m)
            .map(|j| alpha[j] / s * (d_adj[j] - common))
            .collect();
        (d_alpha, Some(d_s_hat))
    } else {
        (d_adj.clone(), None)
    };

    // Value path: dV_i = adjusted_i dz.
    let mut d_tokens = Array2::zeros((m, dim));
    {
        let mut dv = Array2::zeros((m, dim));
        for i in 0..m {
            dv.row_mut(i).scaled_add(adjusted[i], &dz);
        }
        grads.wv += &tokens.t().dot(&dv);
        if gated.is_some() {
            d_tokens += &dv.dot(&p.projections.wv.t());
        }
    }

    // Attention softmax and score paths.
    let mix: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
    let d_scores: Vec<f64> = (0..m).map(|i| alpha[i] * (d_alpha[i] - mix)).collect();
    let scale = (p.projections.width() as f64).sqrt().recip();
    let mut d_q0 = Array1::zeros(dim);
    for (i, ds) in d_scores.iter().enumerate() {
        d_q0.scaled_add(scale * ds, &keys.row(i));
    }
    let mut dk = Array2::zeros((m, dim));
    for (i, ds) in d_scores.iter().enumerate() {
        dk.row_mut(i).scaled_add(scale * ds, q0);
    }
    outer_add(&mut grads.wq, 1.0, &tokens.row(0).to_owned(), &d_q0);
    grads.wk += &tokens.t().dot(&dk);
    if gated.is_some() {
        d_tokens += &dk.dot(&p.projections.wk.t());
    }

    if let Some(c) = gated {
        // Selection stars: token row i+1 depends on star i's weights.
        if cfg.ablation != Ablation::NoSelection {
            for (i, star) in c.stars.iter().enumerate() {
                if c.degenerate[i] {
                    continue;
                }
                let dt = d_tokens.row(i + 1);
                let datt: Vec<f64> = star
                    .feats
                    .outer_iter()
                    .map(|f| dt.dot(&f))
                    .collect();
                let mut dproj = Array2::zeros(star.proj.raw_dim());
                star_backward(
                    star,
                    &datt,
                    &mut dproj,
                    &p.selection.a,
                    p.selection.leaky_slope,
                    &mut grads.sel_w,
                    &mut grads.sel_a,
                );
            }
        }
        // Gate star: ŝ = softmax(emb), emb_c = Σ_j att_j proj_{j,c}.
        if let (Some((star, _)), Some(d_s_hat)) = (&c.gate, d_s_hat) {
            let mixg: f64 = c.s_hat.iter().zip(&d_s_hat).map(|(s, d)| s * d).sum();
            let demb: Vec<f64> = (0..c.s_hat.len())
                .map(|i| c.s_hat[i] * (d_s_hat[i] - mixg))
                .collect();
            let demb = Array1::from(demb);
            let datt: Vec<f64> = star
                .proj
                .outer_iter()
                .map(|row| row.dot(&demb))
                .collect();
            let mut dproj = Array2::zeros(star.proj.raw_dim());
            for (j, mut row) in dproj.outer_iter_mut().enumerate() {
                row.scaled_add(star.att[j], &demb);
            }
            star_backward(
                star,
                &datt,
                &mut dproj,
                &p.gate.a,
                p.gate.leaky_slope,
                &mut grads.gate_w,
                &mut grads.gate_a,
            );
        }
    }

    Ok((loss, grads))
}

/// Mean cross-entropy loss over a node batch.
pub fn batch_loss(g: &Graph, batch: &[u32], cfg: &TrainConfig, p: &LgtlParams) -> Result<f64> {
    batch_loss_seeded(g, batch, cfg, p, cfg.seed)
}

fn batch_loss_seeded(
    g: &Graph,
    batch: &[u32],
    cfg: &TrainConfig,
    p: &LgtlParams,
    seed: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("loss over an empty batch is undefined".into()));
    }
    let inputs = prepare_inputs(g, cfg, batch, seed)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let losses: Vec<Result<f64>> = parallel::map(&idx, |&i| {
        let eval = node_eval(g, cfg, p, &inputs[i])?;
        let y = g.label(batch[i])? as usize;
        Ok(log_sum_exp(&eval.logits) - eval.logits[y])
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of the mean batch loss with respect to the flat parameter
/// vector (block order as in [`LgtlParams::to_flat`]).
pub fn gradients(g: &Graph, batch: &[u32], cfg: &TrainConfig, p: &LgtlParams) -> Result<Vec<f64>> {
    let (_, grad) = loss_and_gradients(g, batch, cfg, p, cfg.seed)?;
    Ok(grad)
}

fn loss_and_gradients(
    g: &Graph,
    batch: &[u32],
    cfg: &TrainConfig,
    p: &LgtlParams,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let inputs = prepare_inputs(g, cfg, batch, seed)?;
    loss_and_gradients_prepared(g, batch, cfg, p, &inputs)
}

fn loss_and_gradients_prepared(
    g: &Graph,
    batch: &[u32],
    cfg: &TrainConfig,
    p: &LgtlParams,
    inputs: &[NodeInput],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Domain(
            "gradients over an empty batch are undefined".into(),
        ));
    }
    let idx: Vec<usize> = (0..batch.len()).collect();
    let per_node: Vec<Result<(f64, Vec<f64>)>> = parallel::map(&idx, |&i| {
        let (loss, grads) = node_gradient(g, cfg, p, batch[i], &inputs[i])?;
        Ok((loss, grads.to_flat()))
    });
    let mut total_loss = 0.0;
    let mut acc = vec![0.0; p.flat_len()];
    for r in per_node {
        let (loss, grad) = r?;
        total_loss += loss;
        for (a, gi) in acc.iter_mut().zip(&grad) {
            *a += gi;
        }
    }
    let scale = batch.len() as f64;
    total_loss /= scale;
    for a in acc.iter_mut() {
        *a /= scale;
    }
    if !total_loss.is_finite() || acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "loss or gradient is not finite; the run has diverged".into(),
        ));
    }
    Ok((total_loss, acc))
}

/// Worst coordinate of an analytic-vs-finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over all coordinates (relative to magnitudes
    /// floored at 1).
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares analytic gradients against central finite differences on
/// `batch`, coordinate by coordinate.
pub fn grad_check(
    g: &Graph,
    cfg: &TrainConfig,
    p: &LgtlParams,
    batch: &[u32],
    eps: f64,
) -> Result<GradCheckReport> {
    if !(eps >= 1e-6 && eps <= 1e-3) {
        return Err(Error::Config(format!(
            "finite-difference step {eps} must lie in [1e-6, 1e-3]"
        )));
    }
    let analytic = gradients(g, batch, cfg, p)?;
    let base = p.to_flat();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coordinate: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = p.clone();
    let mut flat = base.clone();
    for i in 0..flat.len() {
        let saved = flat[i];
        flat[i] = saved + eps;
        probe.set_flat(&flat)?;
        let up = batch_loss(g, batch, cfg, &probe)?;
        flat[i] = saved - eps;
        probe.set_flat(&flat)?;
        let down = batch_loss(g, batch, cfg, &probe)?;
        flat[i] = saved;
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1.0);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > report.max_rel_error {
            report = GradCheckReport {
                max_rel_error: rel,
                worst_coordinate: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    probe.set_flat(&base)?;
    Ok(report)
}

fn apply_masks(flat: &mut [f64], p: &LgtlParams, cfg: &TrainConfig) {
    let gate_len = p.gate.w.len() + p.gate.a.len();
    let sel_len = p.selection.w.len() + p.selection.a.len();
    let proj_len = p.projections.wq.len();
    let gate_range = 0..gate_len;
    let sel_range = gate_len..gate_len + sel_len;
    let proj_range = gate_len + sel_len..gate_len + sel_len + 3 * proj_len;

    let freeze_gate = match cfg.template {
        TemplateKind::Lgtl => cfg.ablation == Ablation::NoGate,
        _ => true,
    };
    let freeze_sel = match cfg.template {
        TemplateKind::Lgtl => cfg.ablation == Ablation::NoSelection,
        _ => true,
    };
    if freeze_gate {
        flat[gate_range].iter_mut().for_each(|v| *v = 0.0);
    }
    if freeze_sel {
        flat[sel_range].iter_mut().for_each(|v| *v = 0.0);
    }
    if cfg.backbone == BackboneMode::Frozen {
        flat[proj_range].iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Full-batch gradient descent on mean cross-entropy over the train split.
/// Returns the parameters at the best validation micro-F1 (final parameters
/// when the validation split is empty) and the per-epoch curve.
pub fn train(
    g: &Graph,
    splits: &SplitSpec,
    cfg: &TrainConfig,
    init: &LgtlParams,
) -> Result<(LgtlParams, Vec<EpochStats>)> {
    cfg.validate()?;
    splits.validate(g)?;
    if splits.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    init.validate(g.feature_dim(), g.class_count())?;

    let mut params = init.clone();
    let mut best = params.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut curve = Vec::with_capacity(cfg.epochs);

    // Tokens and sampling contexts depend only on the graph and the seed,
    // so they are built once up front; only explicit per-epoch resampling
    // invalidates the training inputs.
    let mut train_inputs = prepare_inputs(g, cfg, &splits.train, cfg.epoch_seed(0))?;
    let val_inputs = prepare_inputs(g, cfg, &splits.val, cfg.seed)?;

    for epoch in 0..cfg.epochs {
        if cfg.resample_each_epoch && epoch > 0 {
            train_inputs = prepare_inputs(g, cfg, &splits.train, cfg.epoch_seed(epoch))?;
        }
        let (loss, mut grad) =
            loss_and_gradients_prepared(g, &splits.train, cfg, &params, &train_inputs).map_err(
                |e| match e {
                    Error::Domain(msg) => Error::Domain(format!("epoch {epoch}: {msg}")),
                    other => other,
                },
            )?;
        apply_masks(&mut grad, &params, cfg);
        let mut flat = params.to_flat();
        for (w, gi) in flat.iter_mut().zip(&grad) {
            *w -= cfg.learning_rate * gi;
        }
        params.set_flat(&flat)?;

        let (val_micro, val_macro) = if splits.val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let m = evaluate_prepared(g, cfg, &params, &splits.val, &val_inputs)?;
            (m.micro_f1, m.macro_f1)
        };
        curve.push(EpochStats {
            epoch,
            train_loss: loss,
            val_micro_f1: val_micro,
            val_macro_f1: val_macro,
        });

        if splits.val.is_empty() {
            best = params.clone();
        } else if val_micro > best_val {
            best_val = val_micro;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok((best, curve))
}
