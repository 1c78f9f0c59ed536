//! End-to-end tests of the `lgtl` binary: every subcommand runs against
//! real files, emits parseable CSV, and experiment reruns with identical
//! config and seed reproduce their output byte for byte.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lgtl_core::io::write_graph_files;
use lgtl_core::lgtl::LgtlParams;
use lgtl_core::synth::{generate_sbm, SbmConfig};

fn lgtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgtl"))
        .args(args)
        .output()
        .expect("spawning the binary")
}

fn stdout_of(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

/// Writes a small labeled SBM to `dir` and returns the three file paths.
fn small_graph(dir: &Path, noise_std: f64, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = SbmConfig {
        class_count: 2,
        nodes_per_class: 20,
        p_intra: 0.3,
        p_inter: 0.15,
        feature_dim: 3,
        class_mean_separation: 3.0,
        noise_std,
    };
    let g = generate_sbm(&cfg, seed).expect("sbm");
    let (edges, feats, labels) = write_graph_files(&g, dir, "g").expect("writing graph files");
    (edges, feats, labels.expect("labeled graph"))
}

fn experiment_config(dir: &Path) -> PathBuf {
    let path = dir.join("exp.json");
    let sbm = |p_intra: f64, p_inter: f64| {
        format!(
            "{{\"class_count\":2,\"nodes_per_class\":30,\"p_intra\":{p_intra},\"p_inter\":{p_inter},\
             \"feature_dim\":3,\"class_mean_separation\":2.0,\"noise_std\":0.8}}"
        )
    };
    let json = format!(
        "{{\"seeds\":[3],\"epochs\":40,\"patience\":40,\
         \"homophilic\":{},\"heterophilic\":{},\"imbalanced_heterophilic\":{},\
         \"imbalanced_class_sizes\":[48,12],\"hop_count\":2,\"sample_sizes\":[6,6],\
         \"nd_sizes\":[3,2]}}",
        sbm(0.2, 0.05),
        sbm(0.05, 0.2),
        sbm(0.04, 0.3),
    );
    std::fs::write(&path, json).expect("writing experiment config");
    path
}

#[test]
fn matrix_prints_exact_rational_entries() {
    let out = stdout_of(&lgtl(&["matrix", "--branching", "3", "--depth", "4"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "k,i,numer,denom,value");
    // Level 1 self-coefficient is 1/n and level 3 keeps (2n-1)/n^3.
    assert!(out.contains("\n1,1,1,3,"));
    assert!(out.contains("\n3,1,5,27,"));
    // Every level/hop pair of the triangle is present.
    assert_eq!(lines.len(), 1 + (5 * 6) / 2);
}

#[test]
fn phi_table_lists_column_sums() {
    let out = stdout_of(&lgtl(&[
        "matrix",
        "--branching",
        "2",
        "--depth",
        "5",
        "--table",
        "phi",
    ]));
    // phi_0 for branching 2, depth 5: 1 + 2 + 6 = 9.
    assert!(out.lines().nth(1).unwrap().starts_with("0,,9,1,"));
}

#[test]
fn tokenize_emits_the_center_row_and_hop_means() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("e.txt"), "0 1\n1 2\n2 3\n").unwrap();
    std::fs::write(dir.path().join("f.csv"), "1.0,0.0\n2.0,1.0\n4.0,3.0\n8.0,5.0\n").unwrap();
    let out = stdout_of(&lgtl(&[
        "tokenize",
        "--edges",
        dir.path().join("e.txt").to_str().unwrap(),
        "--features",
        dir.path().join("f.csv").to_str().unwrap(),
        "--node",
        "1",
        "--template",
        "ho",
        "--hops",
        "1",
    ]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "token,mass,f0,f1");
    assert_eq!(lines[1], "0,1,2,1", "token 0 is the raw center row");
    assert_eq!(lines[2], "1,1,2.5,1.5", "token 1 is the neighbor mean");
}

#[test]
fn tokenize_rejects_an_unknown_template() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("e.txt"), "0 1\n").unwrap();
    std::fs::write(dir.path().join("f.csv"), "1.0\n2.0\n").unwrap();
    let out = lgtl(&[
        "tokenize",
        "--edges",
        dir.path().join("e.txt").to_str().unwrap(),
        "--features",
        dir.path().join("f.csv").to_str().unwrap(),
        "--node",
        "0",
        "--template",
        "bogus",
    ]);
    assert!(!out.status.success());
}

#[test]
fn bounds_emits_one_finite_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let (edges, feats, labels) = small_graph(dir.path(), 0.0, 5);
    let out = stdout_of(&lgtl(&[
        "bounds",
        "--edges",
        edges.to_str().unwrap(),
        "--features",
        feats.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--hops",
        "2",
        "--seed",
        "7",
    ]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "node,smoothness,bound,slack");
    assert_eq!(lines.len(), 41, "one row for each of the 40 nodes");
    for line in &lines[1..] {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields.len(), 4);
        assert!(fields[1] >= 0.0, "smoothness is a distance: {line}");
        assert!(fields.iter().all(|v| v.is_finite()), "finite row: {line}");
        assert!(
            (fields[3] - (fields[2] - fields[1])).abs() < 1e-12,
            "slack column is bound minus smoothness: {line}"
        );
    }
}

#[test]
fn train_writes_the_curve_and_reloadable_params() {
    let dir = tempfile::tempdir().unwrap();
    let (edges, feats, labels) = small_graph(dir.path(), 0.5, 2);
    let cfg = dir.path().join("train.json");
    std::fs::write(
        &cfg,
        "{\"template\":\"lgtl\",\"ablation\":\"full\",\"backbone\":\"trainable\",\
         \"learning_rate\":0.1,\"epochs\":25,\"early_stop_patience\":25,\"hop_count\":2,\
         \"sample_sizes\":[4,4],\"seed\":4,\"resample_each_epoch\":false}",
    )
    .unwrap();
    let curve_path = dir.path().join("curve.csv");
    let params_path = dir.path().join("params.json");
    let out = lgtl(&[
        "train",
        "--edges",
        edges.to_str().unwrap(),
        "--features",
        feats.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--params-out",
        params_path.to_str().unwrap(),
        "--out",
        curve_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("test micro_f1"),
        "final metrics are reported"
    );
    let curve = std::fs::read_to_string(&curve_path).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_micro_f1,val_macro_f1");
    assert_eq!(lines.len(), 26, "one row per epoch");
    let params = LgtlParams::load(&params_path).expect("saved params parse back");
    assert_eq!(params.hop_count, 2);
}

#[test]
fn check_suite_passes_and_prints_one_line_per_check() {
    let out = lgtl(&["check", "--max-branching", "3", "--depth", "6", "--seed", "1"]);
    assert!(out.status.success(), "check must exit zero when all pass");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.contains("FAIL"), "no failing checks:\n{text}");
    assert!(text.lines().filter(|l| l.ends_with(": PASS")).count() >= 7);
}

#[test]
fn experiment_reruns_reproduce_every_csv_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment_config(dir.path());
    for cmd in ["prelim", "gate-analysis", "selection-analysis", "ablate"] {
        let a = dir.path().join(format!("{cmd}-a.csv"));
        let b = dir.path().join(format!("{cmd}-b.csv"));
        for path in [&a, &b] {
            let out = lgtl(&[
                cmd,
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                path.to_str().unwrap(),
            ]);
            assert!(
                out.status.success(),
                "{cmd} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        let first = std::fs::read(&a).unwrap();
        let second = std::fs::read(&b).unwrap();
        assert!(!first.is_empty(), "{cmd} wrote a report");
        assert_eq!(first, second, "{cmd} rerun must be byte-identical");
    }
}

#[test]
fn seed_flag_narrows_an_experiment_to_that_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment_config(dir.path());
    let out = stdout_of(&lgtl(&[
        "prelim",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
    ]));
    let mut rows = 0;
    for line in out.lines().skip(1) {
        assert_eq!(line.split(',').nth(4), Some("9"), "row seed: {line}");
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn missing_config_file_fails() {
    let out = lgtl(&["prelim", "--config", "/nonexistent/exp.json"]);
    assert!(!out.status.success());
}
