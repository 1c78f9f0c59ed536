//! Command-line front end for the token-list library: builds token lists,
//! prints exact hop-contribution tables, evaluates smoothness bounds,
//! trains models, and runs the experiment suites. Every data-producing
//! subcommand emits plot-ready CSV (to `--out` or stdout); `check` runs the
//! fast invariant suite and fails the process on any violation.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;

use lgtl_core::attention::softmax;
use lgtl_core::bounds::{
    bound_ho, bound_lgtl, bound_nd, estimate_eta_gamma, estimate_lipschitz, hop_profile,
    smoothness, BoundInputs,
};
use lgtl_core::experiments::{
    run_ablation, run_gate_analysis, run_preliminary, run_selection_analysis, ExperimentConfig,
    ExperimentReport,
};
use lgtl_core::graph::Graph;
use lgtl_core::hopmatrix::{
    check_properties, m_ho, m_nd, oracle_ho_coefficients, phi, rational_to_f64, HopContribTable,
};
use lgtl_core::io::load_graph;
use lgtl_core::lgtl::{adjust_attention, lgtl_forward, GatLayer, LgtlParams};
use lgtl_core::rng::{self, tags};
use lgtl_core::synth::{generate_regular_tree, generate_sbm, SbmConfig};
use lgtl_core::templates::{ho_tokens, nd_tokens, none_tokens, TokenList};
use lgtl_core::train::{evaluate, grad_check, train, SplitSpec, TemplateKind, TrainConfig};

#[derive(Parser)]
#[command(
    name = "lgtl",
    about = "Graph token lists: templates, exact hop tables, bounds, training, experiments",
    version
)]
struct Cli {
    /// Seed for every randomized step of the invoked subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the primary CSV output to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the token list for one node and emit it as CSV.
    Tokenize(TokenizeArgs),
    /// Emit a hop-contribution table (exact rationals plus a float view).
    Matrix(MatrixArgs),
    /// Per-node attention smoothness against its upper bound.
    Bounds(BoundsArgs),
    /// Train on a graph; emits the per-epoch curve and prints test metrics.
    Train(TrainArgs),
    /// Compare none/HO/ND templates with a node-homophily breakdown.
    Prelim(ExpArgs),
    /// Mean learned gate score per hop on each graph family.
    GateAnalysis(ExpArgs),
    /// Label consistency of top-selected members versus random sampling.
    SelectionAnalysis(ExpArgs),
    /// Compare the full model against its no-gate/no-selection variants.
    Ablate(ExpArgs),
    /// Run the fast invariant suite; exits nonzero on any failure.
    Check(CheckArgs),
}

/// The node-classification graph as three flat files.
#[derive(Args)]
struct GraphArgs {
    /// Edge list: one `u v` pair per line (whitespace separated).
    #[arg(long)]
    edges: PathBuf,
    /// Feature matrix CSV: one row per node.
    #[arg(long)]
    features: PathBuf,
    /// Node labels, one integer per line.
    #[arg(long)]
    labels: Option<PathBuf>,
}

impl GraphArgs {
    fn load(&self) -> Result<Graph> {
        load_graph(&self.edges, &self.features, self.labels.as_deref())
            .context("loading the graph")
    }
}

#[derive(Args)]
struct TokenizeArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Center node id.
    #[arg(long)]
    node: u32,
    /// Template: none, ho, nd, or lgtl.
    #[arg(long)]
    template: String,
    /// Hop depth for ho/lgtl token lists.
    #[arg(long, default_value_t = 2)]
    hops: usize,
    /// Level widths (nd) or per-hop sample sizes (lgtl), comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
}

#[derive(Copy, Clone, ValueEnum)]
enum TableChoice {
    /// Hop-means table over full neighborhoods.
    Overview,
    /// Per-node leaf-count table for sampled trees.
    Detail,
    /// Column sums of the detail table across levels.
    Phi,
}

#[derive(Args)]
struct MatrixArgs {
    /// Tree branching factor (n ≥ 2).
    #[arg(long)]
    branching: usize,
    /// Table depth K: rows for every level 0..=K.
    #[arg(long, default_value_t = 8)]
    depth: usize,
    /// Which table to print.
    #[arg(long, value_enum, default_value_t = TableChoice::Overview)]
    table: TableChoice,
}

#[derive(Copy, Clone, ValueEnum)]
enum BoundChoice {
    /// Hop-overview aggregation bound.
    Ho,
    /// Sampled-tree aggregation bound (needs --branching).
    Nd,
    /// Gated aggregation bound.
    Lgtl,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Which bound to evaluate per node.
    #[arg(long, value_enum, default_value_t = BoundChoice::Lgtl)]
    template: BoundChoice,
    /// Hop depth of the aggregation.
    #[arg(long, default_value_t = 2)]
    hops: usize,
    /// Per-hop sample sizes; defaults to full hops.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Idealized branching factor feeding the nd bound.
    #[arg(long, default_value_t = 2)]
    branching: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Training configuration as JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fraction of nodes in the training split.
    #[arg(long, default_value_t = 0.6)]
    train_frac: f64,
    /// Fraction of nodes in the validation split.
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,
    /// Save the trained parameters as JSON.
    #[arg(long)]
    params_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExpArgs {
    /// Experiment configuration as JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Largest branching factor for the table property scan.
    #[arg(long, default_value_t = 6)]
    max_branching: usize,
    /// Table depth for the property scan.
    #[arg(long, default_value_t = 10)]
    depth: usize,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let seed = cli.seed.unwrap_or(0);
    match &cli.cmd {
        Cmd::Tokenize(args) => {
            let csv = cmd_tokenize(args, seed)?;
            emit(&cli.out, &csv)
        }
        Cmd::Matrix(args) => emit(&cli.out, &cmd_matrix(args)?),
        Cmd::Bounds(args) => emit(&cli.out, &cmd_bounds(args, seed)?),
        Cmd::Train(args) => {
            let csv = cmd_train(args, cli.seed)?;
            emit(&cli.out, &csv)
        }
        Cmd::Prelim(args) => run_experiment(args, cli.seed, &cli.out, run_preliminary),
        Cmd::GateAnalysis(args) => run_experiment(args, cli.seed, &cli.out, run_gate_analysis),
        Cmd::SelectionAnalysis(args) => {
            run_experiment(args, cli.seed, &cli.out, run_selection_analysis)
        }
        Cmd::Ablate(args) => run_experiment(args, cli.seed, &cli.out, run_ablation),
        Cmd::Check(args) => cmd_check(args, seed),
    }
}

/// Writes `content` to `--out` when given, stdout otherwise.
fn emit(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, content)
            .with_context(|| format!("writing output to {}", path.display())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn token_csv(tokens: &TokenList) -> String {
    let mut csv = String::from("token,mass");
    for d in 0..tokens.dim() {
        csv.push_str(&format!(",f{d}"));
    }
    csv.push('\n');
    for i in 0..tokens.len() {
        csv.push_str(&format!("{i},{}", rational_to_f64(&tokens.mass(i))));
        for x in tokens.token(i) {
            csv.push_str(&format!(",{x}"));
        }
        csv.push('\n');
    }
    csv
}

fn cmd_tokenize(args: &TokenizeArgs, seed: u64) -> Result<String> {
    let g = args.graph.load()?;
    let tokens = match args.template.parse::<TemplateKind>()? {
        TemplateKind::None => none_tokens(&g, args.node)?,
        TemplateKind::Ho => ho_tokens(&g, args.node, args.hops)?,
        TemplateKind::Nd => {
            let sizes = args.sizes.clone().unwrap_or_else(|| vec![3, 2]);
            nd_tokens(&g, args.node, &sizes, seed)?.0
        }
        TemplateKind::Lgtl => {
            let sizes = args.sizes.clone().unwrap_or_else(|| vec![5; args.hops]);
            if sizes.len() != args.hops {
                bail!("{} sample sizes for {} hops", sizes.len(), args.hops);
            }
            let params = LgtlParams::init(
                g.feature_dim(),
                g.class_count().max(1),
                args.hops,
                sizes,
                seed,
            )?;
            lgtl_forward(&g, args.node, &params, seed)?.tokens
        }
    };
    tokens.check_consistency(&g)?;
    Ok(token_csv(&tokens))
}

fn table_csv(table: &HopContribTable) -> String {
    let mut csv = String::from("k,i,numer,denom,value\n");
    for k in 0..=table.depth() {
        for i in 0..=k {
            let e = table.entry(k, i);
            csv.push_str(&format!(
                "{k},{i},{},{},{}\n",
                e.numer(),
                e.denom(),
                table.entry_f64(k, i)
            ));
        }
    }
    csv
}

fn cmd_matrix(args: &MatrixArgs) -> Result<String> {
    Ok(match args.table {
        TableChoice::Overview => table_csv(&m_ho(args.branching, args.depth)?),
        TableChoice::Detail => table_csv(&m_nd(args.branching, args.depth)?),
        TableChoice::Phi => {
            let v = phi(args.branching, args.depth)?;
            let mut csv = String::from("k,i,numer,denom,value\n");
            for k in 0..v.len() {
                let e = v.value(k);
                csv.push_str(&format!(
                    "{k},,{},{},{}\n",
                    e.numer(),
                    e.denom(),
                    v.value_f64(k)
                ));
            }
            csv
        }
    })
}

fn cmd_bounds(args: &BoundsArgs, seed: u64) -> Result<String> {
    let g = args.graph.load()?;
    if g.labels().is_none() {
        bail!("bounds need labels: consistencies and affinities are label-based");
    }
    let sizes = args
        .sizes
        .clone()
        .unwrap_or_else(|| vec![g.len(); args.hops]);
    if sizes.len() != args.hops {
        bail!("{} sample sizes for {} hops", sizes.len(), args.hops);
    }
    // Frozen seeded attention over a neutral (uniform gate/selection)
    // aggregator: the bound inputs then describe exactly what ran.
    let mut params = LgtlParams::init(
        g.feature_dim(),
        g.class_count().max(1),
        args.hops,
        sizes,
        seed,
    )?;
    params.gate = GatLayer::zeroed(g.feature_dim(), args.hops + 1);
    params.selection = GatLayer::zeroed(g.feature_dim(), g.feature_dim());
    let lipschitz = estimate_lipschitz(&g)?;
    let phi_vec = phi(args.branching, args.hops)?;
    let features = g.features().to_owned();

    let mut csv = String::from("node,smoothness,bound,slack\n");
    let mut skipped = 0usize;
    for u in 0..g.len() as u32 {
        let (eta, gamma) = match estimate_eta_gamma(&g, u, &params.projections, args.hops) {
            Ok(pair) => pair,
            Err(_) => {
                // Single-class neighborhoods have no affinity contrast.
                skipped += 1;
                continue;
            }
        };
        let (hop_sizes, consistencies) = hop_profile(&g, u, args.hops)?;
        let inputs = BoundInputs::new(hop_sizes, consistencies, lipschitz, eta, gamma)?;
        let out = lgtl_forward(&g, u, &params, seed)?;
        let bound = match args.template {
            BoundChoice::Ho => bound_ho(&out.raw_attention, &inputs)?,
            BoundChoice::Nd => bound_nd(&phi_vec, &inputs)?,
            BoundChoice::Lgtl => bound_lgtl(&out.gate_weights, &inputs)?,
        };
        let mut weights: BTreeMap<u32, f64> = BTreeMap::new();
        for (a, hop) in out.adjusted.iter().zip(&out.within_hop) {
            for (&v, &b) in hop {
                *weights.entry(v).or_insert(0.0) += a * b;
            }
        }
        let s = smoothness(g.feature(u)?, &weights, &features)?;
        csv.push_str(&format!("{u},{s},{bound},{}\n", bound - s));
    }
    if skipped > 0 {
        eprintln!("skipped {skipped} nodes without both labels in range");
    }
    Ok(csv)
}

fn cmd_train(args: &TrainArgs, seed: Option<u64>) -> Result<String> {
    let g = args.graph.load()?;
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let splits = SplitSpec::random(&g, args.train_frac, args.val_frac, cfg.seed)?;
    let init = LgtlParams::init(
        g.feature_dim(),
        g.class_count(),
        cfg.hop_count,
        cfg.sample_sizes.clone(),
        cfg.seed,
    )?;
    let (params, curve) = train(&g, &splits, &cfg, &init)?;

    let test = evaluate(&g, &cfg, &params, &splits.test)?;
    eprintln!(
        "test micro_f1 {} macro_f1 {}",
        test.micro_f1, test.macro_f1
    );
    if let Some(path) = &args.params_out {
        params.save(path)?;
    }

    let mut csv = String::from("epoch,train_loss,val_micro_f1,val_macro_f1\n");
    for row in &curve {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_micro_f1, row.val_macro_f1
        ));
    }
    Ok(csv)
}

fn run_experiment(
    args: &ExpArgs,
    seed: Option<u64>,
    out: &Option<PathBuf>,
    runner: fn(&ExperimentConfig) -> lgtl_core::Result<ExperimentReport>,
) -> Result<()> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    let report = runner(&cfg)?;
    emit(out, &report.to_csv_string()?)
}

fn cmd_check(args: &CheckArgs, seed: u64) -> Result<()> {
    if args.max_branching < 2 {
        bail!("the property scan needs a branching factor of at least 2");
    }
    let mut all_pass = true;
    let mut check = |name: &str, outcome: std::result::Result<(), String>| {
        match outcome {
            Ok(()) => println!("[check] {name}: PASS"),
            Err(why) => {
                println!("[check] {name}: FAIL ({why})");
                all_pass = false;
            }
        };
    };

    for n in 2..=args.max_branching {
        let ho = m_ho(n, args.depth)?;
        let report = check_properties(&ho);
        check(
            &format!("hop-table properties overview n={n} depth={}", args.depth),
            if report.all_hold() {
                Ok(())
            } else {
                Err(format!("{report:?}"))
            },
        );
        let nd = m_nd(n, args.depth)?;
        let report = check_properties(&nd);
        check(
            &format!("hop-table properties detail n={n} depth={}", args.depth),
            if report.all_hold() {
                Ok(())
            } else {
                Err(format!("{report:?}"))
            },
        );
    }

    // Independent walk oracle vs the closed-form recursion: the center's
    // own coefficient and the total mass at every level.
    for n in [2usize, 3] {
        let depth = 3;
        let tree = generate_regular_tree(n, depth + 1)?;
        let oracle = oracle_ho_coefficients(&tree, 0, depth)?;
        let table = m_ho(n, depth)?;
        let mut outcome = Ok(());
        for (k, level) in oracle.iter().enumerate() {
            let center = level.get(&0).cloned().unwrap_or_default();
            if center != table.entry(k, 0) {
                outcome = Err(format!("center coefficient differs at level {k}"));
                break;
            }
            let total: num_rational::BigRational = level.values().cloned().sum();
            if total != table.row_mass(k) {
                outcome = Err(format!("level {k} mass differs from the table row"));
                break;
            }
        }
        check(&format!("walk oracle vs recursion n={n} K=3"), outcome);
    }

    let sbm = SbmConfig {
        class_count: 2,
        nodes_per_class: 15,
        p_intra: 0.35,
        p_inter: 0.1,
        feature_dim: 3,
        class_mean_separation: 2.0,
        noise_std: 0.5,
    };
    let g = generate_sbm(&sbm, seed.wrapping_add(1))?;

    let mut outcome = Ok(());
    for u in [0u32, 7, 29] {
        for tokens in [
            none_tokens(&g, u),
            ho_tokens(&g, u, 2),
            nd_tokens(&g, u, &[3, 2], seed).map(|(t, _)| t),
        ] {
            match tokens.and_then(|t| t.check_consistency(&g)) {
                Ok(()) => {}
                Err(e) => outcome = Err(format!("node {u}: {e}")),
            }
        }
    }
    check("template self-consistency on an SBM", outcome);

    let cfg = TrainConfig {
        template: TemplateKind::Lgtl,
        hop_count: 2,
        sample_sizes: vec![3, 3],
        seed,
        ..TrainConfig::default()
    };
    let params = LgtlParams::init(g.feature_dim(), g.class_count(), 2, vec![3, 3], seed)?;
    let batch: Vec<u32> = (0..g.len() as u32).step_by(5).collect();
    let report = grad_check(&g, &cfg, &params, &batch, 1e-4)?;
    check(
        "analytic gradients vs finite differences",
        if report.max_rel_error < 1e-4 {
            Ok(())
        } else {
            Err(format!(
                "max relative error {} at coordinate {}",
                report.max_rel_error, report.worst_coordinate
            ))
        },
    );

    let mut outcome = Ok(());
    let mut rng = rng::site_stream(seed, tags::PARAM_INIT, 99, 0);
    for _ in 0..20 {
        let width = rng.gen_range(2..=6);
        let alpha = softmax(&(0..width).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>());
        let s_hat = softmax(&(0..width).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>());
        match adjust_attention(&alpha, &s_hat) {
            Ok(adjusted) => {
                let total: f64 = adjusted.iter().sum();
                if (total - 1.0).abs() > 1e-12 || adjusted.iter().any(|&a| a < 0.0) {
                    outcome = Err(format!("adjusted weights sum to {total}"));
                }
            }
            Err(e) => outcome = Err(e.to_string()),
        }
    }
    check("attention adjustment preserves the simplex", outcome);

    if !all_pass {
        std::process::exit(1);
    }
    Ok(())
}
