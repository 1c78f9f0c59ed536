//! Desk-scale experiment orchestration: template comparisons, gate and
//! selection analyses, and ablations on synthetic SBM families, each
//! emitting a flat CSV report whose rows are reproducible from their
//! embedded config hash and seed.
//!
//! All runs share one protocol: the attention backbone is initialized from
//! a dedicated per-(family, seed) stream, shared across every template and
//! ablation trained on that graph, and kept frozen; only the classifier —
//! plus the gate and selection modules where the template has them — is
//! trained. This isolates what the tokenization itself contributes, which
//! is the question every experiment here asks.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::ProjectionWeights;
use crate::error::{Error, Result};
use crate::graph::{node_homophily, Graph};
use crate::lgtl::{lgtl_forward, Ablation, LgtlParams};
use crate::parallel;
use crate::rng::{self, tags};
use crate::synth::{generate_sbm, generate_sbm_with_sizes, SbmConfig};
use crate::train::{evaluate, predict, train, BackboneMode, Metrics, SplitSpec, TemplateKind, TrainConfig};

/// One report entry: a single named scalar produced by one configured run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Which experiment produced the row.
    pub experiment: String,
    /// Graph family the run used (e.g. `homophilic`).
    pub family: String,
    /// Template that was trained (`none`, `ho`, `nd`, `lgtl`, or `-`).
    pub template: String,
    /// Ablation variant (`full`, `no_gate`, `no_selection`, or `-`).
    pub ablation: String,
    /// Seed of the run the row belongs to.
    pub seed: u64,
    /// Name of the reported quantity (e.g. `micro_f1`, `gate_hop_1`).
    pub metric: String,
    /// The reported value.
    pub value: f64,
    /// Hash identifying the exact config + seed that produced the row.
    pub config_hash: String,
}

/// A flat, CSV-serializable collection of report rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    /// Renders the report as CSV with a header row.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            wtr.serialize(row)
                .map_err(|e| Error::Config(format!("CSV serialization failed: {e}")))?;
        }
        let bytes = wtr
            .into_inner()
            .map_err(|e| Error::Config(format!("CSV flush failed: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(format!("CSV is not UTF-8: {e}")))
    }

    /// Writes the report to `path` as CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv = self.to_csv_string()?;
        std::fs::write(path, csv).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Mean of `value` over rows matching the predicate, if any match.
    pub fn mean_where<F: Fn(&ReportRow) -> bool>(&self, pred: F) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| pred(r))
            .map(|r| r.value)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Mean of one metric for an (experiment, family, template, ablation)
    /// cell across seeds.
    pub fn mean_metric(
        &self,
        experiment: &str,
        family: &str,
        template: &str,
        ablation: &str,
        metric: &str,
    ) -> Option<f64> {
        self.mean_where(|r| {
            r.experiment == experiment
                && r.family == family
                && r.template == template
                && r.ablation == ablation
                && r.metric == metric
        })
    }
}

/// Configuration for every experiment runner in this module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Seeds to run; one full training per seed and per variant.
    pub seeds: Vec<u64>,
    /// Fraction of nodes in the training split.
    pub train_frac: f64,
    /// Fraction of nodes in the validation split.
    pub val_frac: f64,
    /// Homophilic graph family.
    pub homophilic: SbmConfig,
    /// Heterophilic graph family with balanced classes.
    pub heterophilic: SbmConfig,
    /// Heterophilic family used for selection analysis and ablations;
    /// paired with `imbalanced_class_sizes` so that within-hop selection
    /// has a majority class worth finding.
    pub imbalanced_heterophilic: SbmConfig,
    /// Class sizes for the imbalanced heterophilic family.
    pub imbalanced_class_sizes: Vec<usize>,
    /// Hop count for mean-based and learnable templates.
    pub hop_count: usize,
    /// Per-hop sampling budgets for the learnable tokenizer.
    pub sample_sizes: Vec<usize>,
    /// Per-depth widths of the sampled-tree template.
    pub nd_sizes: Vec<usize>,
    /// Multiplier on the frozen query/key projections. Values below 1 keep
    /// the untrained backbone's attention close to uniform, so the baseline
    /// behavior is token averaging rather than arbitrary concentration on
    /// whichever token the random projections happen to favor.
    pub backbone_scale: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Early-stopping patience in epochs.
    pub patience: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let base = SbmConfig {
            class_count: 2,
            nodes_per_class: 250,
            p_intra: 0.08,
            p_inter: 0.02,
            feature_dim: 4,
            class_mean_separation: 2.0,
            noise_std: 1.25,
        };
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            train_frac: 0.6,
            val_frac: 0.2,
            homophilic: SbmConfig {
                noise_std: 0.6,
                ..base.clone()
            },
            heterophilic: SbmConfig {
                nodes_per_class: 150,
                p_intra: 0.01,
                p_inter: 0.09,
                ..base.clone()
            },
            imbalanced_heterophilic: SbmConfig {
                p_intra: 0.0075,
                p_inter: 0.135,
                ..base
            },
            imbalanced_class_sizes: vec![400, 100],
            hop_count: 3,
            sample_sizes: vec![15, 15, 15],
            nd_sizes: vec![8, 2],
            backbone_scale: 0.25,
            learning_rate: 0.3,
            epochs: 400,
            // Validation micro-F1 on these graph sizes moves in 1/60 steps
            // and plateaus long before the tokenizer has finished learning,
            // so early stopping is disabled; the best-validation snapshot
            // still guards against late overfitting.
            patience: 400,
        }
    }
}

impl ExperimentConfig {
    /// Checks field validity.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment needs at least one seed".into()));
        }
        if self.sample_sizes.len() != self.hop_count {
            return Err(Error::Config(format!(
                "{} sample sizes for {} hops",
                self.sample_sizes.len(),
                self.hop_count
            )));
        }
        if self.nd_sizes.is_empty() {
            return Err(Error::Config("sampled-tree template needs depth >= 1".into()));
        }
        if self.imbalanced_class_sizes.len() != self.imbalanced_heterophilic.class_count {
            return Err(Error::Config(format!(
                "{} class sizes for {} classes",
                self.imbalanced_class_sizes.len(),
                self.imbalanced_heterophilic.class_count
            )));
        }
        if !(self.backbone_scale.is_finite() && self.backbone_scale > 0.0) {
            return Err(Error::Config(format!(
                "backbone scale must be positive, got {}",
                self.backbone_scale
            )));
        }
        self.homophilic.validate()?;
        self.heterophilic.validate()?;
        self.imbalanced_heterophilic.validate()?;
        Ok(())
    }

    /// First 16 hex characters of the SHA-256 of the config JSON and seed.
    pub fn hash_with_seed(&self, seed: u64) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hasher.update(b"|seed=");
        hasher.update(seed.to_string().as_bytes());
        hex::encode(hasher.finalize())[..16].to_string()
    }
}

/// Graph families experiments draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Homophilic,
    Heterophilic,
    HeterophilicImbalanced,
}

impl Family {
    fn label(self) -> &'static str {
        match self {
            Family::Homophilic => "homophilic",
            Family::Heterophilic | Family::HeterophilicImbalanced => "heterophilic",
        }
    }

    fn stream_index(self) -> u64 {
        match self {
            Family::Homophilic => 0,
            Family::Heterophilic => 1,
            Family::HeterophilicImbalanced => 2,
        }
    }
}

fn generate(cfg: &ExperimentConfig, family: Family, seed: u64) -> Result<Graph> {
    match family {
        Family::Homophilic => generate_sbm(&cfg.homophilic, seed),
        Family::Heterophilic => generate_sbm(&cfg.heterophilic, seed),
        Family::HeterophilicImbalanced => generate_sbm_with_sizes(
            &cfg.imbalanced_heterophilic,
            &cfg.imbalanced_class_sizes,
            seed,
        ),
    }
}

fn train_config(
    cfg: &ExperimentConfig,
    template: TemplateKind,
    ablation: Ablation,
    seed: u64,
) -> TrainConfig {
    let (hop_count, sample_sizes) = match template {
        TemplateKind::None => (0, vec![]),
        TemplateKind::Nd => (cfg.nd_sizes.len(), cfg.nd_sizes.clone()),
        TemplateKind::Ho | TemplateKind::Lgtl => (cfg.hop_count, cfg.sample_sizes.clone()),
    };
    TrainConfig {
        template,
        ablation,
        backbone: BackboneMode::Frozen,
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        early_stop_patience: cfg.patience,
        hop_count,
        sample_sizes,
        seed,
        resample_each_epoch: false,
    }
}

/// Initial parameters with the backbone drawn from a per-(family, seed)
/// stream, so every template trained on the same graph attends through
/// identical frozen projections. Query/key projections are scaled by
/// `backbone_scale` (see [`ExperimentConfig::backbone_scale`]).
fn shared_params(
    g: &Graph,
    tc: &TrainConfig,
    family: Family,
    backbone_scale: f64,
) -> Result<LgtlParams> {
    let mut params = LgtlParams::init(
        g.feature_dim(),
        g.class_count(),
        tc.hop_count,
        tc.sample_sizes.clone(),
        tc.seed,
    )?;
    let mut backbone_rng = rng::site_stream(tc.seed, tags::BACKBONE, family.stream_index(), 0);
    let mut projections = ProjectionWeights::random(g.feature_dim(), &mut backbone_rng);
    projections.wq *= backbone_scale;
    projections.wk *= backbone_scale;
    params.projections = projections;
    // Neutral selection start: zero scoring weights make every within-hop
    // distribution uniform at epoch 0, so early classifier noise cannot
    // lock the selection onto arbitrary members before the loss signal is
    // informative. All variants share the same start, keeping ablations
    // comparable.
    params.selection.a.fill(0.0);
    Ok(params)
}

/// One finished training run with everything later analyses need.
struct TrainedRun {
    graph: Graph,
    train_cfg: TrainConfig,
    splits: SplitSpec,
    params: LgtlParams,
    metrics: Metrics,
}

fn run_training(
    cfg: &ExperimentConfig,
    family: Family,
    template: TemplateKind,
    ablation: Ablation,
    seed: u64,
) -> Result<TrainedRun> {
    let graph = generate(cfg, family, seed)?;
    let train_cfg = train_config(cfg, template, ablation, seed);
    let splits = SplitSpec::random(&graph, cfg.train_frac, cfg.val_frac, seed)?;
    let init = shared_params(&graph, &train_cfg, family, cfg.backbone_scale)?;
    let (params, _curve) = train(&graph, &splits, &train_cfg, &init)?;
    let metrics = evaluate(&graph, &train_cfg, &params, &splits.test)?;
    Ok(TrainedRun {
        graph,
        train_cfg,
        splits,
        params,
        metrics,
    })
}

fn runs_over_seeds(
    cfg: &ExperimentConfig,
    family: Family,
    template: TemplateKind,
    ablation: Ablation,
) -> Result<Vec<TrainedRun>> {
    parallel::map(&cfg.seeds, |&seed| {
        run_training(cfg, family, template, ablation, seed)
    })
    .into_iter()
    .collect()
}

fn metric_rows(
    out: &mut Vec<ReportRow>,
    cfg: &ExperimentConfig,
    experiment: &str,
    family: Family,
    template: &str,
    ablation: &str,
    runs: &[TrainedRun],
    seeds: &[u64],
) {
    for (run, &seed) in runs.iter().zip(seeds) {
        for (metric, value) in [
            ("micro_f1", run.metrics.micro_f1),
            ("macro_f1", run.metrics.macro_f1),
        ] {
            out.push(ReportRow {
                experiment: experiment.into(),
                family: family.label().into(),
                template: template.into(),
                ablation: ablation.into(),
                seed,
                metric: metric.into(),
                value,
                config_hash: cfg.hash_with_seed(seed),
            });
        }
    }
}

/// Per-node test predictions of one run, keyed by node id.
fn test_predictions(run: &TrainedRun) -> Result<BTreeMap<u32, u32>> {
    let mut preds = BTreeMap::new();
    for &u in &run.splits.test {
        preds.insert(u, predict(&run.graph, &run.train_cfg, &run.params, u)?);
    }
    Ok(preds)
}

/// Mean node homophily and count of one prediction-disagreement group.
fn homophily_of(group: &[u32], g: &Graph) -> (f64, usize) {
    let vals: Vec<f64> = group
        .iter()
        .filter_map(|&u| node_homophily(g, u).ok())
        .collect();
    if vals.is_empty() {
        (f64::NAN, 0)
    } else {
        (vals.iter().sum::<f64>() / vals.len() as f64, vals.len())
    }
}

/// Trains the raw, neighborhood-mean, and sampled-tree templates on both
/// balanced families and reports per-seed metrics, plus a node-homophily
/// breakdown of where each structural template beats or loses to the raw
/// baseline (groups formed by prediction disagreement on test nodes).
pub fn run_preliminary(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let experiment = "preliminary";
    let mut rows = Vec::new();
    for family in [Family::Homophilic, Family::Heterophilic] {
        let none_runs = runs_over_seeds(cfg, family, TemplateKind::None, Ablation::Full)?;
        let ho_runs = runs_over_seeds(cfg, family, TemplateKind::Ho, Ablation::Full)?;
        let nd_runs = runs_over_seeds(cfg, family, TemplateKind::Nd, Ablation::Full)?;
        metric_rows(&mut rows, cfg, experiment, family, "none", "-", &none_runs, &cfg.seeds);
        metric_rows(&mut rows, cfg, experiment, family, "ho", "-", &ho_runs, &cfg.seeds);
        metric_rows(&mut rows, cfg, experiment, family, "nd", "-", &nd_runs, &cfg.seeds);

        for (template, runs) in [("ho", &ho_runs), ("nd", &nd_runs)] {
            for (i, &seed) in cfg.seeds.iter().enumerate() {
                let g = &runs[i].graph;
                let none_pred = test_predictions(&none_runs[i])?;
                let tmpl_pred = test_predictions(&runs[i])?;
                let mut better = Vec::new();
                let mut worse = Vec::new();
                for &u in &runs[i].splits.test {
                    let truth = g.label(u)?;
                    let t_ok = tmpl_pred[&u] == truth;
                    let n_ok = none_pred[&u] == truth;
                    if t_ok && !n_ok {
                        better.push(u);
                    } else if !t_ok && n_ok {
                        worse.push(u);
                    }
                }
                let (better_h, better_n) = homophily_of(&better, g);
                let (worse_h, worse_n) = homophily_of(&worse, g);
                for (metric, value) in [
                    ("better_mean_node_homophily", better_h),
                    ("worse_mean_node_homophily", worse_h),
                    ("better_count", better_n as f64),
                    ("worse_count", worse_n as f64),
                ] {
                    rows.push(ReportRow {
                        experiment: experiment.into(),
                        family: family.label().into(),
                        template: template.into(),
                        ablation: "-".into(),
                        seed,
                        metric: metric.into(),
                        value,
                        config_hash: cfg.hash_with_seed(seed),
                    });
                }
            }
        }
    }
    Ok(ExperimentReport { rows })
}

/// Trains all four templates (raw, neighborhood-mean, sampled-tree, and
/// the learnable tokenizer) on both balanced families and reports
/// per-seed test metrics.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for family in [Family::Homophilic, Family::Heterophilic] {
        for template in [
            TemplateKind::None,
            TemplateKind::Ho,
            TemplateKind::Nd,
            TemplateKind::Lgtl,
        ] {
            let runs = runs_over_seeds(cfg, family, template, Ablation::Full)?;
            metric_rows(
                &mut rows,
                cfg,
                "comparison",
                family,
                template.as_str(),
                if template == TemplateKind::Lgtl { "full" } else { "-" },
                &runs,
                &cfg.seeds,
            );
        }
    }
    Ok(ExperimentReport { rows })
}

/// Trains the learnable tokenizer on both balanced families and reports
/// the mean gate weight per hop over test nodes, alongside test metrics.
pub fn run_gate_analysis(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let experiment = "gate_analysis";
    let mut rows = Vec::new();
    for family in [Family::Homophilic, Family::Heterophilic] {
        let runs = runs_over_seeds(cfg, family, TemplateKind::Lgtl, Ablation::Full)?;
        metric_rows(&mut rows, cfg, experiment, family, "lgtl", "full", &runs, &cfg.seeds);
        for (run, &seed) in runs.iter().zip(&cfg.seeds) {
            let mut sums = vec![0.0; cfg.hop_count + 1];
            for &u in &run.splits.test {
                let out = lgtl_forward(&run.graph, u, &run.params, run.train_cfg.seed)?;
                for (s, w) in sums.iter_mut().zip(&out.gate_weights) {
                    *s += w;
                }
            }
            let n = run.splits.test.len() as f64;
            for (k, s) in sums.iter().enumerate() {
                rows.push(ReportRow {
                    experiment: experiment.into(),
                    family: family.label().into(),
                    template: "lgtl".into(),
                    ablation: "full".into(),
                    seed,
                    metric: format!("gate_hop_{k}"),
                    value: s / n,
                    config_hash: cfg.hash_with_seed(seed),
                });
            }
        }
    }
    Ok(ExperimentReport { rows })
}

/// Label consistency of one node's hop selection: whether the strongest
/// within-hop member (center excluded) shares the center's label, and the
/// same fraction for uniform selection, averaged over `draws` draws.
fn hop_consistency_pair(
    g: &Graph,
    u: u32,
    hop: usize,
    beta: &BTreeMap<u32, f64>,
    seed: u64,
    draws: usize,
) -> Result<Option<(f64, f64)>> {
    let candidates: Vec<u32> = beta.keys().copied().filter(|&v| v != u).collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    let label = g.label(u)?;
    let mut top = candidates[0];
    let mut top_w = f64::NEG_INFINITY;
    for &v in &candidates {
        let w = beta[&v];
        if w > top_w {
            top_w = w;
            top = v;
        }
    }
    let top_hit = if g.label(top)? == label { 1.0 } else { 0.0 };
    let mut rng = rng::site_stream(seed, tags::BASELINE, u as u64, hop as u64);
    let mut hits = 0usize;
    for _ in 0..draws {
        let v = candidates[rng.gen_range(0..candidates.len())];
        if g.label(v)? == label {
            hits += 1;
        }
    }
    Ok(Some((top_hit, hits as f64 / draws as f64)))
}

/// Per-hop label consistency of the strongest within-hop members under
/// `params`, versus a uniform-random selection baseline (100 draws per
/// node). Returns `(top_beta, random)` per hop, skipping hops with no
/// candidates everywhere (both NaN then).
pub fn selection_consistency(
    g: &Graph,
    params: &LgtlParams,
    nodes: &[u32],
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hops = params.hop_count;
    let mut top_sums = vec![0.0; hops];
    let mut rand_sums = vec![0.0; hops];
    let mut counts = vec![0usize; hops];
    for &u in nodes {
        let out = lgtl_forward(g, u, params, seed)?;
        for hop in 1..=hops {
            if out.degenerate_hops.contains(&hop) {
                continue;
            }
            if let Some((top, rand)) =
                hop_consistency_pair(g, u, hop, &out.within_hop[hop], seed, 100)?
            {
                top_sums[hop - 1] += top;
                rand_sums[hop - 1] += rand;
                counts[hop - 1] += 1;
            }
        }
    }
    let mut top = vec![f64::NAN; hops];
    let mut rand = vec![f64::NAN; hops];
    for k in 0..hops {
        if counts[k] > 0 {
            top[k] = top_sums[k] / counts[k] as f64;
            rand[k] = rand_sums[k] / counts[k] as f64;
        }
    }
    Ok((top, rand))
}

/// Trains the learnable tokenizer on the imbalanced heterophilic family
/// and reports, per hop, the label consistency of the strongest selected
/// member against a uniform-random baseline.
pub fn run_selection_analysis(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let experiment = "selection_analysis";
    let family = Family::HeterophilicImbalanced;
    let mut rows = Vec::new();
    let runs = runs_over_seeds(cfg, family, TemplateKind::Lgtl, Ablation::Full)?;
    metric_rows(&mut rows, cfg, experiment, family, "lgtl", "full", &runs, &cfg.seeds);
    for (run, &seed) in runs.iter().zip(&cfg.seeds) {
        let (top, rand) = selection_consistency(
            &run.graph,
            &run.params,
            &run.splits.test,
            run.train_cfg.seed,
        )?;
        for hop in 1..=cfg.hop_count {
            for (name, vals) in [("top_beta", &top), ("random", &rand)] {
                rows.push(ReportRow {
                    experiment: experiment.into(),
                    family: family.label().into(),
                    template: "lgtl".into(),
                    ablation: "full".into(),
                    seed,
                    metric: format!("{name}_consistency_hop_{hop}"),
                    value: vals[hop - 1],
                    config_hash: cfg.hash_with_seed(seed),
                });
            }
        }
    }
    Ok(ExperimentReport { rows })
}

/// Trains the full learnable tokenizer and its two ablations (uniform
/// gate, uniform selection) on the homophilic and imbalanced heterophilic
/// families with shared seeds and backbones.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for family in [Family::Homophilic, Family::HeterophilicImbalanced] {
        for ablation in [Ablation::Full, Ablation::NoGate, Ablation::NoSelection] {
            let runs = runs_over_seeds(cfg, family, TemplateKind::Lgtl, ablation)?;
            metric_rows(
                &mut rows,
                cfg,
                "ablation",
                family,
                "lgtl",
                ablation.as_str(),
                &runs,
                &cfg.seeds,
            );
        }
    }
    Ok(ExperimentReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            seeds: vec![7],
            homophilic: SbmConfig {
                class_count: 2,
                nodes_per_class: 20,
                p_intra: 0.4,
                p_inter: 0.1,
                feature_dim: 3,
                class_mean_separation: 3.0,
                noise_std: 0.5,
            },
            heterophilic: SbmConfig {
                class_count: 2,
                nodes_per_class: 20,
                p_intra: 0.1,
                p_inter: 0.4,
                feature_dim: 3,
                class_mean_separation: 3.0,
                noise_std: 0.5,
            },
            imbalanced_heterophilic: SbmConfig {
                class_count: 2,
                nodes_per_class: 20,
                p_intra: 0.05,
                p_inter: 0.4,
                feature_dim: 3,
                class_mean_separation: 3.0,
                noise_std: 0.5,
            },
            imbalanced_class_sizes: vec![30, 10],
            hop_count: 2,
            sample_sizes: vec![4, 4],
            nd_sizes: vec![2, 2],
            learning_rate: 0.3,
            epochs: 15,
            patience: 15,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_hash_is_stable_and_seed_sensitive() {
        let cfg = ExperimentConfig::default();
        let h1 = cfg.hash_with_seed(3);
        let h2 = cfg.hash_with_seed(3);
        let h3 = cfg.hash_with_seed(4);
        assert_eq!(h1, h2);
        assert_ne!(h1, h3);
        assert_eq!(h1.len(), 16);
        assert!(h1.chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn config_hash_tracks_config_changes() {
        let cfg = ExperimentConfig::default();
        let mut other = cfg.clone();
        other.learning_rate += 1e-9;
        assert_ne!(cfg.hash_with_seed(1), other.hash_with_seed(1));
    }

    #[test]
    fn default_config_validates() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn validation_rejects_inconsistent_fields() {
        let mut cfg = ExperimentConfig::default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.sample_sizes.pop();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.imbalanced_class_sizes = vec![100];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn partial_json_configs_fill_from_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"seeds": [9], "epochs": 10}"#).unwrap();
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.hop_count, ExperimentConfig::default().hop_count);
    }

    #[test]
    fn csv_output_is_deterministic_with_expected_header() {
        let report = ExperimentReport {
            rows: vec![ReportRow {
                experiment: "unit".into(),
                family: "homophilic".into(),
                template: "none".into(),
                ablation: "-".into(),
                seed: 1,
                metric: "micro_f1".into(),
                value: 0.5,
                config_hash: "abc".into(),
            }],
        };
        let a = report.to_csv_string().unwrap();
        let b = report.to_csv_string().unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("experiment,family,template,ablation,seed,metric,value,config_hash\n"));
        assert!(a.contains("unit,homophilic,none,-,1,micro_f1,0.5,abc"));
    }

    #[test]
    fn mean_helpers_average_matching_rows() {
        let mk = |seed, metric: &str, value| ReportRow {
            experiment: "e".into(),
            family: "f".into(),
            template: "t".into(),
            ablation: "-".into(),
            seed,
            metric: metric.into(),
            value,
            config_hash: "h".into(),
        };
        let report = ExperimentReport {
            rows: vec![mk(1, "micro_f1", 0.5), mk(2, "micro_f1", 0.7), mk(1, "macro_f1", 0.1)],
        };
        assert!((report.mean_metric("e", "f", "t", "-", "micro_f1").unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(report.mean_metric("e", "f", "t", "-", "missing"), None);
    }

    #[test]
    fn shared_backbones_are_identical_across_templates_within_a_seed() {
        let cfg = tiny_config();
        let s = cfg.backbone_scale;
        let g = generate(&cfg, Family::Homophilic, 7).unwrap();
        let a = shared_params(&g, &train_config(&cfg, TemplateKind::None, Ablation::Full, 7), Family::Homophilic, s).unwrap();
        let b = shared_params(&g, &train_config(&cfg, TemplateKind::Lgtl, Ablation::Full, 7), Family::Homophilic, s).unwrap();
        assert_eq!(a.projections, b.projections);
        let c = shared_params(&g, &train_config(&cfg, TemplateKind::Lgtl, Ablation::Full, 7), Family::Heterophilic, s).unwrap();
        assert_ne!(b.projections, c.projections);
        let d = shared_params(&g, &train_config(&cfg, TemplateKind::Lgtl, Ablation::Full, 8), Family::Homophilic, s).unwrap();
        assert_ne!(b.projections, d.projections);
    }

    #[test]
    fn selection_consistency_is_perfect_when_all_labels_agree() {
        // One class: every candidate shares the center's label, so both the
        // strongest-member and the random-baseline consistencies are 1.
        let g = generate_sbm(
            &SbmConfig {
                class_count: 1,
                nodes_per_class: 30,
                p_intra: 0.4,
                p_inter: 0.4,
                feature_dim: 2,
                class_mean_separation: 1.0,
                noise_std: 0.3,
            },
            11,
        )
        .unwrap();
        let params = LgtlParams::zeroed(2, 1, 2, vec![4, 4]).unwrap();
        let nodes: Vec<u32> = (0..10).collect();
        let (top, rand) = selection_consistency(&g, &params, &nodes, 5).unwrap();
        for k in 0..2 {
            assert_eq!(top[k], 1.0, "hop {} strongest-member consistency", k + 1);
            assert_eq!(rand[k], 1.0, "hop {} random consistency", k + 1);
        }
    }

    #[test]
    fn untrained_selection_matches_the_random_baseline_on_balanced_graphs() {
        // With symmetric classes an untrained scorer has no systematic label
        // preference, so the strongest-member consistency should hover at
        // the random baseline (averaged over several graph draws).
        let cfg = ExperimentConfig::default();
        let mut diffs = Vec::new();
        for seed in 1..=5 {
            let g = generate(&cfg, Family::Heterophilic, seed).unwrap();
            let params = LgtlParams::init(
                cfg.heterophilic.feature_dim,
                cfg.heterophilic.class_count,
                cfg.hop_count,
                cfg.sample_sizes.clone(),
                seed,
            )
            .unwrap();
            let nodes: Vec<u32> = (0..g.len() as u32).step_by(5).collect();
            let (top, rand) = selection_consistency(&g, &params, &nodes, seed).unwrap();
            for k in 0..cfg.hop_count {
                if top[k].is_finite() && rand[k].is_finite() {
                    diffs.push(top[k] - rand[k]);
                }
            }
        }
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        assert!(
            mean.abs() < 0.05,
            "untrained selection should match random: mean gap {mean}"
        );
    }

    #[test]
    fn report_rows_carry_the_config_hash_and_both_metrics() {
        let cfg = tiny_config();
        let report = run_comparison(&cfg).unwrap();
        // 2 families x 4 templates x 1 seed x 2 metrics.
        assert_eq!(report.rows.len(), 16);
        let expected = cfg.hash_with_seed(7);
        for row in &report.rows {
            assert_eq!(row.config_hash, expected);
            assert_eq!(row.seed, 7);
            assert!(row.value.is_finite());
            assert!(matches!(row.metric.as_str(), "micro_f1" | "macro_f1"));
        }
        for template in ["none", "ho", "nd", "lgtl"] {
            assert!(
                report.rows.iter().any(|r| r.template == template),
                "missing rows for {template}"
            );
        }
    }

    #[test]
    fn rerunning_an_experiment_reproduces_every_byte() {
        let cfg = tiny_config();
        let a = run_ablation(&cfg).unwrap().to_csv_string().unwrap();
        let b = run_ablation(&cfg).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
    }
}
