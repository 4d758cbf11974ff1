mod common;

use std::path::{Path, PathBuf};
use std::process::Command as Process;

use sha2::{Digest, Sha256};

use common::{tree, tree_diff};
use facetscope::cli::{self, exit_code, Command, Manifest, Overrides, RunOptions, Selection};
use facetscope::ingest::patch::patch_path;
use facetscope::ingest::stream::write_activation_stream;
use facetscope::ingest::{ActivationRecord, LayerDecl, StreamHeader};
use facetscope::{fixture, Error};

fn rec(neuron_id: u32, image_id: u32, score: f32) -> ActivationRecord {
    ActivationRecord {
        layer_index: 1,
        neuron_id,
        image_id,
        class_id: image_id % 2,
        score,
        loc_row: image_id % 3,
        loc_col: 0,
    }
}

const ONE_LAYER: &str = r#"{"custom": [{"layer_index": 1, "block": 1, "neuron_count": 3,
    "rf_size": 3, "rf_stride": 1, "rf_offset": 0.0}]}"#;

/// Three neurons over ten images, written as a binary stream plus a config
/// with K = 3.
fn tiny_run(dir: &Path, header_layer: u16, records: &[ActivationRecord]) -> PathBuf {
    let header = StreamHeader {
        classes: 2,
        layers: vec![LayerDecl {
            layer_index: header_layer,
            neuron_count: 3,
        }],
    };
    let mut bytes = Vec::new();
    write_activation_stream(&mut bytes, &header, records).unwrap();
    std::fs::write(dir.join("acts.bin"), bytes).unwrap();
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        format!(r#"{{"activation_stream": "acts.bin", "output_dir": "out", "k": 3, "preset": {ONE_LAYER}}}"#),
    )
    .unwrap();
    config
}

fn tiny_records() -> Vec<ActivationRecord> {
    let mut out = Vec::new();
    for i in 0..10 {
        out.push(rec(0, i, i as f32));
        out.push(rec(1, i, (9 - i) as f32));
        out.push(rec(2, i, (i % 3) as f32));
    }
    out
}

fn run(command: Command, config: &Path) -> facetscope::Result<cli::Outcome> {
    cli::run(command, config, RunOptions::default())
}

fn with(overrides: Overrides) -> RunOptions {
    RunOptions {
        overrides,
        ..RunOptions::default()
    }
}

#[test]
fn topk_tiny_stream_matches_hand_sorted_lists() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_run(dir.path(), 1, &tiny_records());
    let outcome = run(Command::Topk, &config).unwrap();
    assert_eq!(outcome.processed, 3);
    let (lists, _) = cli::commands::read_topk_layer(&dir.path().join("out"), 1).unwrap();
    let images: Vec<Vec<u32>> = lists
        .iter()
        .map(|l| l.entries.iter().map(|e| e.image_id).collect())
        .collect();
    // neuron 2 scores 2 on images 2, 5 and 8; ties go to the lower image id
    assert_eq!(images, vec![vec![9, 8, 7], vec![0, 1, 2], vec![2, 5, 8]]);
    assert_eq!(lists[0].entries[0].score, 9.0);
    assert_eq!(lists[1].entries[2].class_id, 0);
    assert_eq!(lists[2].entries[1].loc_row, 2);
    assert!(lists.iter().all(|l| l.entries.len() == 3));
}

#[test]
fn topk_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_run(dir.path(), 1, &tiny_records());
    run(Command::Topk, &config).unwrap();
    let first = tree(&dir.path().join("out"));
    run(Command::Topk, &config).unwrap();
    assert!(tree_diff(&first, &tree(&dir.path().join("out"))).is_empty());
    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        ["topk/layer_1.csv", "topk/manifest.json", "topk/meta.json"]
    );
}

#[test]
fn topk_manifest_records_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_run(dir.path(), 1, &tiny_records());
    run(Command::Topk, &config).unwrap();
    let out = dir.path().join("out/topk");
    let manifest: Manifest =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let hex = |bytes: &[u8]| hex::encode(Sha256::digest(bytes));
    assert_eq!(manifest.command, "topk");
    assert_eq!(manifest.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest.inputs.len(), 1);
    assert_eq!(manifest.inputs[0].path, "acts.bin");
    assert_eq!(
        manifest.inputs[0].sha256,
        hex(&std::fs::read(dir.path().join("acts.bin")).unwrap())
    );
    let csv = manifest
        .outputs
        .iter()
        .find(|d| d.path == "topk/layer_1.csv")
        .unwrap();
    assert_eq!(
        csv.sha256,
        hex(&std::fs::read(out.join("layer_1.csv")).unwrap())
    );
    assert_eq!(manifest.config_hash.len(), 64);
}

#[test]
fn topk_unknown_layer_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = tiny_records();
    records[4].layer_index = 6;
    let config = tiny_run(dir.path(), 1, &records);
    let err = run(Command::Topk, &config).unwrap_err();
    assert!(err.to_string().contains("unknown layer 6"), "{err}");
    assert_eq!(exit_code(&err), cli::EXIT_DATA);

    let config = tiny_run(dir.path(), 4, &[]);
    let err = run(Command::Topk, &config).unwrap_err();
    assert!(err.to_string().contains("layer 4"), "{err}");
    assert_eq!(exit_code(&err), cli::EXIT_DATA);
}

#[test]
fn topk_layer_filter_must_exist() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_run(dir.path(), 1, &tiny_records());
    let options = RunOptions {
        layer: Some(9),
        ..RunOptions::default()
    };
    let err = cli::run(Command::Topk, &config, options).unwrap_err();
    assert_eq!(exit_code(&err), cli::EXIT_USAGE);
}

#[test]
fn analyze_without_topk_names_the_missing_step() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_run(dir.path(), 1, &tiny_records());
    let err = run(Command::Analyze, &config).unwrap_err();
    assert!(matches!(err, Error::MissingUpstream { .. }), "{err}");
    assert!(err.to_string().contains("topk"), "{err}");
    assert_eq!(exit_code(&err), cli::EXIT_USAGE);
}

#[test]
fn empty_config_path_is_usage_error() {
    let err = run(Command::Analyze, Path::new("")).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
    assert_eq!(cli::status(&Err(err)), cli::EXIT_USAGE);
}

/// Fixture directory after topk and analyze.
fn analyzed_fixture(seed: u64) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fixture::write_fixture(dir.path(), seed).unwrap();
    let config = dir.path().join("config.json");
    run(Command::Topk, &config).unwrap();
    run(Command::Analyze, &config).unwrap();
    (dir, config)
}

#[test]
fn analyze_writes_full_tree() {
    let (dir, _) = analyzed_fixture(7);
    let out = tree(&dir.path().join("out/analyze"));
    let mut expected = vec![
        "facet_report.csv".to_string(),
        "layer_summaries.json".into(),
        "manifest.json".into(),
        "plots/distributions.svg".into(),
        "plots/facet_summary.svg".into(),
        "plots/similarity.svg".into(),
        "similarity_averages.json".into(),
    ];
    for l in 1..=3 {
        expected.push(format!("cof/layer_{l}.csv"));
        expected.push(format!("cof/layer_{l}.cof"));
        for kind in ["euclidean", "pearson"] {
            for ext in ["csv", "json", "png"] {
                expected.push(format!("similarity/layer_{l}_{kind}.{ext}"));
            }
        }
    }
    expected.sort();
    assert_eq!(out.keys().cloned().collect::<Vec<_>>(), expected);

    let report = String::from_utf8(out["facet_report.csv"].clone()).unwrap();
    assert_eq!(report.lines().count(), 1 + 3 * fixture::NEURONS);
    let summaries: serde_json::Value =
        serde_json::from_slice(&out["layer_summaries.json"]).unwrap();
    let sf: Vec<u64> = summaries
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["count_sf"].as_u64().unwrap())
        .collect();
    assert!(
        sf[2] > sf[0],
        "deep layer should have more SF neurons: {sf:?}"
    );
    for svg in [
        "plots/distributions.svg",
        "plots/facet_summary.svg",
        "plots/similarity.svg",
    ] {
        assert!(out[svg].starts_with(b"<svg"), "{svg}");
    }
}

#[test]
fn deleting_downstream_outputs_reproduces_them() {
    let (dir, config) = analyzed_fixture(7);
    let analyze = dir.path().join("out/analyze");
    let before = tree(&analyze);
    std::fs::remove_dir_all(&analyze).unwrap();
    run(Command::Analyze, &config).unwrap();
    assert!(tree_diff(&before, &tree(&analyze)).is_empty());
}

fn neuron_dirs(root: &Path, layer: u16) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(root.join(format!("layer_{layer}")))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn visualize_top_four_renders_eight_per_layer() {
    let (dir, config) = analyzed_fixture(7);
    let outcome = cli::run(
        Command::Visualize,
        &config,
        with(Overrides {
            selection: Some(Selection::Top(4)),
            ..Overrides::default()
        }),
    )
    .unwrap();
    assert_eq!(outcome.processed, 3 * 8);
    let vis = dir.path().join("out/visualize");
    for layer in 1..=3 {
        assert_eq!(neuron_dirs(&vis, layer).len(), 8, "layer {layer}");
    }
    let neuron = &neuron_dirs(&vis, 3)[0];
    let files = tree(&vis.join("layer_3").join(neuron));
    for mode in ["gray", "rgb_linear", "rgb_asinh", "u8_global"] {
        assert!(files.contains_key(&format!("ic_grid_{mode}.png")), "{mode}");
        assert_eq!(
            files
                .keys()
                .filter(|k| k.starts_with(&format!("ic_{mode}_")))
                .count(),
            8
        );
    }
    let sidecar: serde_json::Value = serde_json::from_slice(&files["ica.json"]).unwrap();
    for key in ["seed", "tol", "iterations", "converged", "facet_coherence"] {
        assert!(sidecar.get(key).is_some(), "{key}");
    }
    let grid = image::load_from_memory(&files["ic_grid_gray.png"]).unwrap();
    let tile = fixture::PATCH_SIDE;
    assert_eq!((grid.width(), grid.height()), (8 * tile + 7 * 2, tile));

    let labels: Vec<String> = neuron_dirs(&vis, 3)
        .iter()
        .map(|n| {
            let s: serde_json::Value = serde_json::from_slice(
                &std::fs::read(vis.join("layer_3").join(n).join("ica.json")).unwrap(),
            )
            .unwrap();
            s["selected_as"].as_str().unwrap().to_string()
        })
        .collect();
    assert_eq!(labels.iter().filter(|l| *l == "top_mf").count(), 4);
    assert_eq!(labels.iter().filter(|l| *l == "top_sf").count(), 4);
}

#[test]
fn visualize_all_and_layer_filter() {
    let (dir, config) = analyzed_fixture(7);
    let options = RunOptions {
        layer: Some(2),
        overrides: Overrides {
            selection: Some(Selection::All),
            ..Overrides::default()
        },
        ..RunOptions::default()
    };
    let outcome = cli::run(Command::Visualize, &config, options).unwrap();
    assert_eq!(outcome.processed, fixture::NEURONS);
    let vis = dir.path().join("out/visualize");
    assert_eq!(neuron_dirs(&vis, 2).len(), fixture::NEURONS);
    assert!(!vis.join("layer_1").exists());
}

fn grids(root: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    tree(&root.join("out/visualize"))
        .into_iter()
        .filter(|(k, _)| k.contains("ic_grid_"))
        .collect()
}

#[test]
fn visualize_seed_controls_output() {
    let (dir, config) = analyzed_fixture(7);
    let seeded = |seed| {
        cli::run(
            Command::Visualize,
            &config,
            with(Overrides {
                seed: Some(seed),
                ..Overrides::default()
            }),
        )
        .unwrap();
        grids(dir.path())
    };
    let a = seeded(1);
    let b = seeded(1);
    let c = seeded(2);
    assert!(!a.is_empty());
    assert!(tree_diff(&a, &b).is_empty());
    assert!(!tree_diff(&a, &c).is_empty());
}

fn selected(vis: &Path) -> Vec<(u16, u32)> {
    let mut out = Vec::new();
    for layer in 1..=3u16 {
        for name in neuron_dirs(vis, layer) {
            out.push((layer, name.trim_start_matches("neuron_").parse().unwrap()));
        }
    }
    out
}

#[test]
fn missing_patch_skips_neuron_with_partial_exit() {
    let (dir, config) = analyzed_fixture(7);
    run(Command::Visualize, &config).unwrap();
    let vis = dir.path().join("out/visualize");
    let (layer, neuron) = selected(&vis)[3];
    std::fs::remove_file(patch_path(&dir.path().join("patches"), layer, neuron, 11)).unwrap();

    let result = run(Command::Visualize, &config);
    assert_eq!(cli::status(&result), cli::EXIT_PARTIAL);
    assert_eq!(result.unwrap().skipped, 1);
    let skipped: serde_json::Value =
        serde_json::from_slice(&std::fs::read(vis.join("skipped.json")).unwrap()).unwrap();
    assert_eq!(skipped[0]["layer_index"], layer);
    assert_eq!(skipped[0]["neuron_id"], neuron);
    assert!(skipped[0]["reason"]
        .as_str()
        .unwrap()
        .contains("missing rank 11"));
    assert!(!vis.join(format!("layer_{layer}/neuron_{neuron}")).exists());
}

#[test]
fn all_neurons_skipped_is_data_error() {
    let (dir, config) = analyzed_fixture(7);
    let patches = dir.path().join("patches");
    std::fs::remove_dir_all(&patches).unwrap();
    std::fs::create_dir(&patches).unwrap();
    let err = run(Command::Visualize, &config).unwrap_err();
    assert_eq!(exit_code(&err), cli::EXIT_DATA);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let (dir, config) = analyzed_fixture(3);
    let at = |threads| {
        let options = RunOptions {
            threads,
            ..RunOptions::default()
        };
        for command in [Command::Analyze, Command::Visualize] {
            cli::run(command, &config, options).unwrap();
        }
        tree(&dir.path().join("out"))
    };
    assert!(tree_diff(&at(1), &at(3)).is_empty());
}

// Receptive fields of the VGG16 trunk from the textbook recursion
// r_out = r_in + (kernel - 1) * jump, jump_out = jump * stride,
// start_out = start + ((kernel - 1) / 2 - padding) * jump.
fn vgg16_rf_oracle() -> Vec<(u32, u32, f64)> {
    let mut rows = Vec::new();
    let (mut r, mut j, mut s) = (1u32, 1u32, 0.0f64);
    for convs in [2, 2, 3, 3, 3] {
        for _ in 0..convs {
            r += 2 * j;
            s += 0.0;
            rows.push((r, j, s));
        }
        r += j;
        s += 0.5 * j as f64;
        j *= 2;
    }
    rows
}

fn binary() -> Process {
    Process::new(env!("CARGO_BIN_EXE_facetscope"))
}

#[test]
fn rf_table_prints_vgg16_geometry() {
    let out = binary()
        .args(["rf-table", "--preset", "vgg16"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("layer_index,rf_size,rf_stride,rf_offset")
    );
    let rows: Vec<(u32, u32, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
            )
        })
        .collect();
    assert_eq!(rows, vgg16_rf_oracle());
    assert_eq!(rows[12], (196, 16, 7.5));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_run(dir.path(), 1, &tiny_records());
    let code = |args: &[&str]| {
        binary()
            .args(args)
            .env("FACETSCOPE_LOG", "error")
            .status()
            .unwrap()
            .code()
    };
    let cfg = config.to_str().unwrap();
    assert_eq!(code(&["analyze", "--config", cfg]), Some(2));
    assert_eq!(code(&["topk", "--config", ""]), Some(2));
    assert_eq!(
        code(&["visualize", "--config", cfg, "--top", "2", "--all"]),
        Some(2)
    );
    assert_eq!(code(&["topk", "--config", cfg]), Some(0));
    assert_eq!(
        code(&["analyze", "--config", cfg, "--threads", "2"]),
        Some(0)
    );

    let fx = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&[
            "fixture",
            "--out",
            fx.path().to_str().unwrap(),
            "--seed",
            "4"
        ]),
        Some(0)
    );
    let fx_cfg = fx.path().join("config.json");
    let fx_cfg = fx_cfg.to_str().unwrap();
    for sub in ["topk", "analyze"] {
        assert_eq!(code(&[sub, "--config", fx_cfg]), Some(0));
    }
    assert_eq!(
        code(&[
            "visualize",
            "--config",
            fx_cfg,
            "--layer",
            "3",
            "--top",
            "1",
            "--seed",
            "5"
        ]),
        Some(0)
    );
    let corrupt = patch_path(&fx.path().join("patches"), 3, 0, 0);
    std::fs::write(&corrupt, b"not a png").unwrap();
    assert_eq!(
        code(&["visualize", "--config", fx_cfg, "--layer", "3", "--all"]),
        Some(4)
    );
}
