//! Reference implementations used as oracles by the integration tests. They
//! favour the most literal formulation over speed.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use facetscope::ingest::{ActivationRecord, RankedEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mean absolute difference over all ordered pairs, divided by twice the mean.
pub fn gini_pairwise(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut acc = 0.0;
    for a in v {
        for b in v {
            acc += (a - b).abs();
        }
    }
    acc / (2.0 * n * n * mean)
}

pub fn pearson_naive(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

pub fn euclidean_naive(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Top-K by full sort: score descending, then image, class and location
/// ascending, truncated to `k`.
pub fn topk_oracle(
    records: &[ActivationRecord],
    k: usize,
) -> BTreeMap<(u16, u32), Vec<RankedEntry>> {
    let mut groups: BTreeMap<(u16, u32), Vec<ActivationRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.layer_index, r.neuron_id))
            .or_default()
            .push(*r);
    }
    groups
        .into_iter()
        .map(|(key, mut recs)| {
            recs.sort_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap()
                    .then(a.image_id.cmp(&b.image_id))
                    .then(a.class_id.cmp(&b.class_id))
                    .then(a.loc_row.cmp(&b.loc_row))
                    .then(a.loc_col.cmp(&b.loc_col))
            });
            recs.truncate(k);
            let entries = recs
                .iter()
                .map(|r| RankedEntry {
                    image_id: r.image_id,
                    class_id: r.class_id,
                    score: r.score,
                    loc_row: r.loc_row,
                    loc_col: r.loc_col,
                })
                .collect();
            (key, entries)
        })
        .collect()
}

/// Random stream over a few layers and neurons. Scores are drawn from a
/// small grid so that ties are frequent.
pub fn random_stream(seed: u64, len: usize) -> Vec<ActivationRecord> {
    let mut r = rng(seed);
    (0..len)
        .map(|_| ActivationRecord {
            layer_index: r.random_range(1..=2),
            neuron_id: r.random_range(0..4),
            image_id: r.random_range(0..5000),
            class_id: r.random_range(0..10),
            score: r.random_range(0..200) as f32 * 0.25,
            loc_row: r.random_range(0..14),
            loc_col: r.random_range(0..14),
        })
        .collect()
}

/// Every regular file under `root`, keyed by its relative path.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Paths of the entries that differ between two trees, including ones
/// present on only one side.
pub fn tree_diff(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .cloned()
        .collect()
}
