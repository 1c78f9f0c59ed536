//! Throughput of the order-preserving parallel map against its sequential
//! reference on the two batch-heavy inner loops: per-node gated forward
//! passes and per-node smoothness-bound sweeps. Both variants produce
//! bit-identical outputs; the interesting number is the wall-clock ratio.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lgtl_core::bounds::{bound_lgtl, estimate_eta_gamma, estimate_lipschitz, hop_profile, BoundInputs};
use lgtl_core::graph::Graph;
use lgtl_core::lgtl::{lgtl_forward, LgtlParams};
use lgtl_core::parallel;
use lgtl_core::synth::{generate_sbm, SbmConfig};

const HOPS: usize = 2;

fn bench_graph() -> (Graph, LgtlParams) {
    let cfg = SbmConfig {
        class_count: 2,
        nodes_per_class: 40,
        p_intra: 0.2,
        p_inter: 0.05,
        feature_dim: 4,
        class_mean_separation: 2.0,
        noise_std: 0.5,
    };
    let g = generate_sbm(&cfg, 11).expect("bench graph");
    let params = LgtlParams::init(4, 2, HOPS, vec![8, 8], 11).expect("bench params");
    (g, params)
}

/// Sum of representation entries over a full-graph batch of forward passes.
fn forward_sweep<F>(map: F, g: &Graph, params: &LgtlParams) -> f64
where
    F: Fn(&[u32], &(dyn Fn(&u32) -> f64 + Sync)) -> Vec<f64>,
{
    let nodes: Vec<u32> = (0..g.len() as u32).collect();
    let per_node = |&u: &u32| {
        let out = lgtl_forward(g, u, params, 11).expect("forward pass");
        out.representation.iter().sum::<f64>()
    };
    map(&nodes, &per_node).iter().sum()
}

/// Sum of gated smoothness bounds over a full-graph batch.
fn bound_sweep<F>(map: F, g: &Graph, params: &LgtlParams) -> f64
where
    F: Fn(&[u32], &(dyn Fn(&u32) -> f64 + Sync)) -> Vec<f64>,
{
    let lipschitz = estimate_lipschitz(g).expect("two classes present");
    let nodes: Vec<u32> = (0..g.len() as u32).collect();
    let per_node = |&u: &u32| {
        let (sizes, cons) = hop_profile(g, u, HOPS).expect("labeled graph");
        let (eta, gamma) =
            estimate_eta_gamma(g, u, &params.projections, HOPS).expect("mixed neighborhood");
        let out = lgtl_forward(g, u, params, 11).expect("forward pass");
        let inputs = BoundInputs::new(sizes, cons, lipschitz, eta, gamma).expect("valid inputs");
        bound_lgtl(&out.gate_weights, &inputs).expect("bound evaluates")
    };
    map(&nodes, &per_node).iter().sum()
}

fn throughput(c: &mut Criterion) {
    let (g, params) = bench_graph();

    let mut group = c.benchmark_group("forward_sweep");
    group.sample_size(10);
    group.bench_with_input(BenchmarkId::new("map", "pool"), &(), |b, _| {
        b.iter(|| forward_sweep(|xs, f| parallel::map(xs, f), &g, &params))
    });
    group.bench_with_input(BenchmarkId::new("map_seq", "baseline"), &(), |b, _| {
        b.iter(|| forward_sweep(|xs, f| parallel::map_seq(xs, f), &g, &params))
    });
    group.finish();

    let mut group = c.benchmark_group("bound_sweep");
    group.sample_size(10);
    group.bench_with_input(BenchmarkId::new("map", "pool"), &(), |b, _| {
        b.iter(|| bound_sweep(|xs, f| parallel::map(xs, f), &g, &params))
    });
    group.bench_with_input(BenchmarkId::new("map_seq", "baseline"), &(), |b, _| {
        b.iter(|| bound_sweep(|xs, f| parallel::map_seq(xs, f), &g, &params))
    });
    group.finish();
}

criterion_group!(benches, throughput);
criterion_main!(benches);
