//! Deterministic synthetic dataset for demos and end-to-end tests.
//!
//! Three layers of ten neurons over ten classes. Each neuron's top-20 class
//! counts are fixed by [`trend_rows`]: shallow rows spread over all classes,
//! middle rows over about five, deep rows over one or two. The stream gives
//! exactly those images high scores, and the patch store holds receptive-field
//! crops of procedurally drawn images (oriented gratings per class plus noise),
//! cut at the recorded locations.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cli::config::{IcaConfig, PresetConfig, RunConfig, Selection};
use crate::cof::CofMatrix;
use crate::error::{Error, Result};
use crate::ingest::patch::{cut_patch, input_center, save_patch};
use crate::ingest::stream::write_activation_stream;
use crate::ingest::{
    layer_table, rank_records, ActivationRecord, LayerDecl, LayerOp, LayerSpec, Patch, StreamHeader,
};

pub const CLASSES: usize = 10;
pub const NEURONS: usize = 10;
pub const K: usize = 20;
pub const IMAGES_PER_CLASS: usize = 24;
pub const IMAGE_SIDE: u32 = 64;
pub const PATCH_SIDE: u32 = 16;

type Pattern = &'static [u32];

const SHALLOW_BASE: [u32; CLASSES] = [3, 3, 2, 2, 2, 2, 2, 2, 1, 1];

const MIDDLE: [(Pattern, usize); NEURONS] = [
    (&[6, 5, 4, 3, 2], 0),
    (&[6, 5, 4, 3, 2], 1),
    (&[6, 4, 5, 3, 2], 0),
    (&[6, 5, 4, 3, 2], 2),
    (&[5, 6, 4, 3, 2], 0),
    (&[6, 5, 3, 4, 2], 0),
    (&[6, 5, 4, 3, 2], 3),
    (&[6, 5, 4, 2, 3], 0),
    (&[7, 5, 4, 2, 2], 0),
    (&[14, 4, 2], 0),
];

const DEEP: [Pattern; NEURONS] = [
    &[15, 3, 2],
    &[15, 4, 1],
    &[14, 4, 2],
    &[16, 2, 2],
    &[15, 3, 1, 1],
    &[14, 3, 3],
    &[16, 3, 1],
    &[15, 2, 2, 1],
    &[20],
    &[20],
];

fn place(pattern: &[u32], start: usize) -> Vec<u32> {
    let mut row = vec![0; CLASSES];
    for (i, &c) in pattern.iter().enumerate() {
        row[(start + i) % CLASSES] += c;
    }
    row
}

/// Target CoF rows (each summing to [`K`]) of the three fixture layers:
/// near-uniform, mixed, near-one-hot.
pub fn trend_rows() -> [Vec<Vec<u32>>; 3] {
    let shallow = (0..NEURONS)
        .map(|n| {
            let mut row = SHALLOW_BASE.to_vec();
            row.swap(n % CLASSES, (n + 1) % CLASSES);
            row
        })
        .collect();
    let middle = MIDDLE.iter().map(|&(p, start)| place(p, start)).collect();
    let deep = DEEP.iter().enumerate().map(|(n, p)| place(p, n)).collect();
    [shallow, middle, deep]
}

pub fn trend_cof() -> Vec<CofMatrix> {
    trend_rows()
        .iter()
        .enumerate()
        .map(|(i, rows)| CofMatrix::from_rows(i as u16 + 1, rows, CLASSES).expect("fixed shape"))
        .collect()
}

/// 5x5 convolutions separated by 2x2 pools; receptive fields 5, 14 and 32.
pub fn layer_specs() -> Vec<LayerSpec> {
    let conv = LayerOp::Conv {
        kernel: 5,
        stride: 1,
        padding: 2,
        channels: NEURONS as u32,
    };
    let pool = LayerOp::Pool {
        kernel: 2,
        stride: 2,
        padding: 0,
    };
    layer_table(&[conv, pool, conv, pool, conv])
}

fn image_class(image_id: u32) -> u32 {
    image_id % CLASSES as u32
}

/// Activation records realizing [`trend_rows`]: for every neuron, the images
/// counted in its row score in [10, 11), all others in [0, 1).
pub fn records(seed: u64) -> Vec<ActivationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = layer_specs();
    let n_images = (CLASSES * IMAGES_PER_CLASS) as u32;
    let mut out = Vec::new();
    for (spec, rows) in specs.iter().zip(trend_rows()) {
        let fm_side = IMAGE_SIDE / spec.rf_stride;
        for (n, row) in rows.iter().enumerate() {
            let offset = rng.random_range(0..IMAGES_PER_CLASS as u32);
            let hit = |image_id: u32| {
                let c = image_class(image_id) as usize;
                let j = (image_id / CLASSES as u32 + offset) % IMAGES_PER_CLASS as u32;
                j < row[c]
            };
            for image_id in 0..n_images {
                let base = if hit(image_id) { 10.0 } else { 0.0 };
                out.push(ActivationRecord {
                    layer_index: spec.layer_index,
                    neuron_id: n as u32,
                    image_id,
                    class_id: image_class(image_id),
                    score: base + rng.random::<f32>(),
                    loc_row: rng.random_range(0..fm_side),
                    loc_col: rng.random_range(0..fm_side),
                });
            }
        }
    }
    out
}

/// Procedural RGB image: a class-oriented grating with image-specific phase
/// and per-pixel noise.
pub fn synth_image(image_id: u32, seed: u64) -> Patch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9 * (image_id as u64 + 1)));
    let c = image_class(image_id) as f64;
    let theta = std::f64::consts::PI * c / CLASSES as f64;
    let freq = 0.12 + 0.03 * (c % 3.0);
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    let tint = [0.6 + 0.4 * (c / 9.0), 0.8, 1.0 - 0.4 * (c / 9.0)];
    let side = IMAGE_SIDE;
    let mut pixels = Vec::with_capacity((side * side * 3) as usize);
    for y in 0..side {
        for x in 0..side {
            let u = x as f64 * theta.cos() + y as f64 * theta.sin();
            let wave = (std::f64::consts::TAU * freq * u + phase).sin();
            for t in tint {
                let noise: f64 = rng.random_range(-25.0..25.0);
                pixels.push((128.0 + 90.0 * t * wave + noise).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Patch::new(side, side, pixels).expect("sized above")
}

/// Config matching the files written by [`write_fixture`], with paths
/// relative to the fixture directory.
pub fn fixture_config(seed: u64) -> RunConfig {
    RunConfig {
        activation_stream: Some("activations.bin".into()),
        patch_store: Some("patches".into()),
        output_dir: "out".into(),
        k: K,
        classes: Some(CLASSES as u32),
        patch_side: PATCH_SIDE,
        ica: IcaConfig {
            seed,
            selection: Selection::Top(4),
            ..IcaConfig::default()
        },
        preset: PresetConfig::Custom(layer_specs()),
        ..RunConfig::default()
    }
}

/// Writes `activations.bin`, `patches/` and `config.json` into `dir`.
pub fn write_fixture(dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let specs = layer_specs();
    let header = StreamHeader {
        classes: CLASSES as u32,
        layers: specs
            .iter()
            .map(|s| LayerDecl {
                layer_index: s.layer_index,
                neuron_count: s.neuron_count,
            })
            .collect(),
    };
    let recs = records(seed);
    let stream_path = dir.join("activations.bin");
    let mut bytes = Vec::new();
    write_activation_stream(&mut bytes, &header, &recs).map_err(|e| Error::io(&stream_path, e))?;
    std::fs::write(&stream_path, bytes).map_err(|e| Error::io(&stream_path, e))?;

    let patch_root = dir.join("patches");
    let ranked = rank_records(&recs, K)?;
    let mut images: std::collections::BTreeMap<u32, Patch> = std::collections::BTreeMap::new();
    for ((layer, neuron), list) in &ranked {
        let spec = specs
            .iter()
            .find(|s| s.layer_index == *layer)
            .expect("records use fixture layers");
        for (rank, e) in list.entries.iter().enumerate() {
            let image = images
                .entry(e.image_id)
                .or_insert_with(|| synth_image(e.image_id, seed));
            let patch = cut_patch(
                image,
                input_center(e.loc_row, spec.rf_stride, spec.rf_offset),
                input_center(e.loc_col, spec.rf_stride, spec.rf_offset),
                spec.rf_size,
            );
            save_patch(&patch_root, *layer, *neuron, rank, &patch)?;
        }
    }

    let config_path = dir.join("config.json");
    let mut json = serde_json::to_vec_pretty(&fixture_config(seed))?;
    json.push(b'\n');
    std::fs::write(&config_path, json).map_err(|e| Error::io(&config_path, e))
}
