//! The `topk`, `analyze` and `visualize` subcommands.
//!
//! Output tree under the configured `output_dir`:
//!
//! ```text
//! topk/      layer_<L>.csv, meta.json, manifest.json
//! analyze/   facet_report.csv, layer_summaries.json, similarity_averages.json,
//!            cof/layer_<L>.{csv,cof}, similarity/layer_<L>_<kind>.{csv,png,json},
//!            plots/{facet_summary,distributions,similarity}.svg, manifest.json
//! visualize/ layer_<L>/neuron_<N>/{ic_grid_<mode>.png, ic_<mode>_<r>.png, ica.json},
//!            skipped.json, manifest.json
//! ```
//!
//! Each command replaces its own directory wholesale, so a re-run (or a run
//! after deleting downstream outputs) reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Selection};
use super::manifest::{digest, Manifest, OutputSet};
use crate::cof::{build_cof, CofMatrix};
use crate::error::{Error, Result};
use crate::facet::{facet_reports, layer_summary, FacetLabel, FacetReport, LayerFacetSummary};
use crate::ica::render::grid;
use crate::ica::{analyze_patches, facet_coherence, IcaBasis, NeuronIca};
use crate::ingest::patch::patch_path;
use crate::ingest::stream::parse_activation_csv;
use crate::ingest::{
    load_patch_set, rank_stream, ActivationReader, LayerDecl, LayerSpec, RankedEntry, RankedList,
    StreamHeader,
};
use crate::report::{
    distribution_svg, facet_summary_svg, heatmap, similarity_svg, SimilarityAverages,
};
use crate::similarity::{euclidean_matrix, layer_average, pearson_matrix, SimilarityMatrix};

const TOPK_DIR: &str = "topk";
const ANALYZE_DIR: &str = "analyze";
const VISUALIZE_DIR: &str = "visualize";

/// How many selected units a command processed and how many it skipped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Outcome {
    pub processed: usize,
    pub skipped: usize,
}

impl Outcome {
    pub fn is_partial(&self) -> bool {
        self.skipped > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopkLayerMeta {
    pub layer_index: u16,
    pub neuron_count: u32,
    /// Neurons with at least one record.
    pub observed: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopkMeta {
    pub classes: u32,
    pub capacity: usize,
    pub layers: Vec<TopkLayerMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TopkRow {
    neuron: u32,
    rank: usize,
    image_id: u32,
    class_id: u32,
    score: f32,
    loc_row: u32,
    loc_col: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FacetRow {
    layer: u16,
    neuron: u32,
    sparsity: f64,
    flatness: f64,
    mf_degree: f64,
    mf_normalized: f64,
    p_value: f64,
    label: FacetLabel,
}

impl From<&FacetReport> for FacetRow {
    fn from(r: &FacetReport) -> Self {
        FacetRow {
            layer: r.layer_index,
            neuron: r.neuron_id,
            sparsity: r.sparsity,
            flatness: r.flatness,
            mf_degree: r.mf_degree,
            mf_normalized: r.mf_normalized,
            p_value: r.p_value,
            label: r.label,
        }
    }
}

fn reset_dir(path: &Path) -> Result<()> {
    if path.exists() {
        std::fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<csv>", e.into_error()))
}

fn read_upstream(path: &Path, command: &'static str) -> Result<File> {
    if !path.is_file() {
        return Err(Error::MissingUpstream {
            path: path.to_path_buf(),
            command,
        });
    }
    File::open(path).map_err(|e| Error::io(path, e))
}

fn display(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

fn check_layer_filter(available: &[u16], layer: Option<u16>) -> Result<()> {
    match layer {
        Some(l) if !available.contains(&l) => Err(Error::usage(format!(
            "layer {l} is not available (layers: {})",
            available
                .iter()
                .map(u16::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        ))),
        _ => Ok(()),
    }
}

fn check_header(header: &StreamHeader, table: &[LayerSpec], classes: Option<u32>) -> Result<()> {
    for decl in &header.layers {
        match table.iter().find(|l| l.layer_index == decl.layer_index) {
            Some(spec) if spec.neuron_count == decl.neuron_count => {}
            Some(spec) => {
                return Err(Error::data(format!(
                    "stream layer {} declares {} neurons, the layer table has {}",
                    decl.layer_index, decl.neuron_count, spec.neuron_count
                )))
            }
            None => {
                return Err(Error::data(format!(
                    "stream layer {} is not in the configured layer table",
                    decl.layer_index
                )))
            }
        }
    }
    if let Some(c) = classes {
        if c != header.classes {
            return Err(Error::data(format!(
                "stream declares {} classes, config says {c}",
                header.classes
            )));
        }
    }
    Ok(())
}

/// Ranks every neuron's records and writes one CSV per layer.
pub fn cmd_topk(cfg: &RunConfig, layer: Option<u16>) -> Result<Outcome> {
    let stream = cfg.stream_path()?;
    let table = cfg.preset.layers();
    let is_csv = stream
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let file = File::open(&stream).map_err(|e| Error::io(&stream, e))?;

    let keep = |l: u16| layer.is_none_or(|f| f == l);
    let (header, lists) = if is_csv {
        let classes = cfg
            .classes
            .ok_or_else(|| Error::usage("CSV activation streams need `classes` in the config"))?;
        let header = StreamHeader {
            classes,
            layers: table
                .iter()
                .map(|l| LayerDecl {
                    layer_index: l.layer_index,
                    neuron_count: l.neuron_count,
                })
                .collect(),
        };
        check_header(&header, &table, cfg.classes)?;
        let records = parse_activation_csv(BufReader::new(file), &header)?;
        let lists = rank_stream(records.into_iter().map(Ok), cfg.k, |r| keep(r.layer_index))?;
        (header, lists)
    } else {
        let reader = ActivationReader::new(BufReader::new(file))?;
        let header = reader.header().clone();
        check_header(&header, &table, cfg.classes)?;
        let lists = rank_stream(reader, cfg.k, |r| keep(r.layer_index))?;
        (header, lists)
    };

    let declared: Vec<u16> = header.layers.iter().map(|l| l.layer_index).collect();
    check_layer_filter(&declared, layer)?;

    let root = cfg.output_root();
    reset_dir(&root.join(TOPK_DIR))?;
    let mut out = OutputSet::new(&root);
    let mut meta = TopkMeta {
        classes: header.classes,
        capacity: cfg.k,
        layers: Vec::new(),
    };
    let mut processed = 0;
    for decl in header.layers.iter().filter(|d| keep(d.layer_index)) {
        let layer_lists: Vec<&RankedList> = lists
            .range((decl.layer_index, 0)..=(decl.layer_index, u32::MAX))
            .map(|(_, l)| l)
            .collect();
        let observed = layer_lists.len() as u32;
        if observed < decl.neuron_count {
            log::warn!(
                "layer {}: {} of {} neurons never observed",
                decl.layer_index,
                decl.neuron_count - observed,
                decl.neuron_count
            );
        }
        let rows = layer_lists.iter().flat_map(|list| {
            list.entries
                .iter()
                .enumerate()
                .map(move |(rank, e)| TopkRow {
                    neuron: list.neuron_id,
                    rank,
                    image_id: e.image_id,
                    class_id: e.class_id,
                    score: e.score,
                    loc_row: e.loc_row,
                    loc_col: e.loc_col,
                })
        });
        out.write(
            &format!("{TOPK_DIR}/layer_{}.csv", decl.layer_index),
            &csv_bytes(rows)?,
        )?;
        processed += layer_lists.len();
        meta.layers.push(TopkLayerMeta {
            layer_index: decl.layer_index,
            neuron_count: decl.neuron_count,
            observed,
        });
    }
    out.write_json(&format!("{TOPK_DIR}/meta.json"), &meta)?;
    let input_name = display(cfg.activation_stream.as_deref().unwrap_or(Path::new("")));
    let manifest = Manifest::new(
        "topk",
        cfg.hash(),
        layer,
        vec![digest(input_name, &stream)?],
    );
    out.finish(TOPK_DIR, manifest)?;
    log::info!("topk: ranked {processed} neurons");
    Ok(Outcome {
        processed,
        skipped: 0,
    })
}

fn read_topk_meta(root: &Path) -> Result<(TopkMeta, PathBuf)> {
    let path = root.join(TOPK_DIR).join("meta.json");
    let meta: TopkMeta = serde_json::from_reader(BufReader::new(read_upstream(&path, "topk")?))?;
    Ok((meta, path))
}

/// Ranked lists of one layer as written by `topk`.
pub fn read_topk_layer(root: &Path, layer_index: u16) -> Result<(Vec<RankedList>, PathBuf)> {
    let path = root.join(TOPK_DIR).join(format!("layer_{layer_index}.csv"));
    let mut reader = csv::Reader::from_reader(BufReader::new(read_upstream(&path, "topk")?));
    let mut lists: BTreeMap<u32, RankedList> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: TopkRow = row?;
        let list = lists.entry(row.neuron).or_insert_with(|| RankedList {
            layer_index,
            neuron_id: row.neuron,
            seen: 0,
            entries: Vec::new(),
        });
        if row.rank != list.entries.len() {
            return Err(Error::data(format!(
                "{}: neuron {} rank {} out of order",
                path.display(),
                row.neuron,
                row.rank
            )));
        }
        list.entries.push(RankedEntry {
            image_id: row.image_id,
            class_id: row.class_id,
            score: row.score,
            loc_row: row.loc_row,
            loc_col: row.loc_col,
        });
        list.seen = list.entries.len() as u64;
    }
    Ok((lists.into_values().collect(), path))
}

fn write_similarity(out: &mut OutputSet, m: &SimilarityMatrix) -> Result<()> {
    let stem = format!(
        "{ANALYZE_DIR}/similarity/layer_{}_{}",
        m.layer_index,
        m.kind.as_str()
    );
    out.write(&format!("{stem}.csv"), m.to_csv().as_bytes())?;
    let (img, meta) = heatmap(m);
    out.write_png(&format!("{stem}.png"), &img.into())?;
    out.write_json(&format!("{stem}.json"), &meta)
}

/// CoF matrices, facet metrics, similarity matrices and plots.
pub fn cmd_analyze(cfg: &RunConfig, layer: Option<u16>) -> Result<Outcome> {
    let root = cfg.output_root();
    let (meta, meta_path) = read_topk_meta(&root)?;
    let available: Vec<u16> = meta.layers.iter().map(|l| l.layer_index).collect();
    check_layer_filter(&available, layer)?;
    let mut inputs = vec![digest(format!("{TOPK_DIR}/meta.json"), &meta_path)?];

    let mut cofs: Vec<CofMatrix> = Vec::new();
    for lm in meta
        .layers
        .iter()
        .filter(|l| layer.is_none_or(|f| f == l.layer_index))
    {
        let (lists, path) = read_topk_layer(&root, lm.layer_index)?;
        inputs.push(digest(
            format!("{TOPK_DIR}/layer_{}.csv", lm.layer_index),
            &path,
        )?);
        let cof = build_cof(
            lm.layer_index,
            &lists,
            lm.neuron_count as usize,
            meta.classes as usize,
        )?;
        if let Some(n) = (0..cof.n_neurons).find(|&n| cof.row_sum(n) == 0) {
            return Err(Error::data(format!(
                "layer {} neuron {n} has no ranked images; every declared neuron needs records",
                lm.layer_index
            )));
        }
        cofs.push(cof);
    }
    if cofs.is_empty() {
        return Err(Error::data("topk output holds no layers"));
    }

    let reports = facet_reports(&cofs, cfg.facet_params())?;
    let mut summaries: Vec<LayerFacetSummary> = Vec::new();
    for cof in &cofs {
        let layer_reports: Vec<FacetReport> = reports
            .iter()
            .filter(|r| r.layer_index == cof.layer_index)
            .cloned()
            .collect();
        summaries.push(layer_summary(&layer_reports)?);
    }

    reset_dir(&root.join(ANALYZE_DIR))?;
    let mut out = OutputSet::new(&root);
    for cof in &cofs {
        let mut csv = Vec::new();
        cof.write_csv(&mut csv)?;
        out.write(
            &format!("{ANALYZE_DIR}/cof/layer_{}.csv", cof.layer_index),
            &csv,
        )?;
        let mut bin = Vec::new();
        cof.write_binary(&mut bin)?;
        out.write(
            &format!("{ANALYZE_DIR}/cof/layer_{}.cof", cof.layer_index),
            &bin,
        )?;
    }
    out.write(
        &format!("{ANALYZE_DIR}/facet_report.csv"),
        &csv_bytes(reports.iter().map(FacetRow::from))?,
    )?;
    out.write_json(&format!("{ANALYZE_DIR}/layer_summaries.json"), &summaries)?;

    let mut averages = Vec::new();
    for cof in &cofs {
        if cof.n_neurons < 2 {
            log::warn!(
                "layer {}: fewer than 2 neurons, no similarity matrices",
                cof.layer_index
            );
            continue;
        }
        let (p, e) = rayon::join(|| pearson_matrix(cof), || euclidean_matrix(cof));
        let (p, e) = (p?, e?);
        write_similarity(&mut out, &p)?;
        write_similarity(&mut out, &e)?;
        averages.push(SimilarityAverages {
            layer_index: cof.layer_index,
            pearson: layer_average(&p)?,
            euclidean: layer_average(&e)?,
        });
    }
    out.write_json(
        &format!("{ANALYZE_DIR}/similarity_averages.json"),
        &averages,
    )?;

    out.write(
        &format!("{ANALYZE_DIR}/plots/facet_summary.svg"),
        facet_summary_svg(&summaries).as_bytes(),
    )?;
    out.write(
        &format!("{ANALYZE_DIR}/plots/distributions.svg"),
        distribution_svg(&reports, &summaries).as_bytes(),
    )?;
    out.write(
        &format!("{ANALYZE_DIR}/plots/similarity.svg"),
        similarity_svg(&averages).as_bytes(),
    )?;
    out.finish(
        ANALYZE_DIR,
        Manifest::new("analyze", cfg.hash(), layer, inputs),
    )?;
    log::info!(
        "analyze: {} neurons over {} layers",
        reports.len(),
        cofs.len()
    );
    Ok(Outcome {
        processed: reports.len(),
        skipped: 0,
    })
}

fn read_facet_report(root: &Path) -> Result<(Vec<FacetRow>, PathBuf)> {
    let path = root.join(ANALYZE_DIR).join("facet_report.csv");
    let mut reader = csv::Reader::from_reader(BufReader::new(read_upstream(&path, "analyze")?));
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<FacetRow>, _>>()?;
    Ok((rows, path))
}

/// Neurons of one layer chosen for visualization, in neuron order, with the
/// reason each was chosen.
fn select_neurons(rows: &[&FacetRow], selection: Selection) -> Vec<(u32, &'static str)> {
    match selection {
        Selection::All => {
            let mut ids: Vec<u32> = rows.iter().map(|r| r.neuron).collect();
            ids.sort_unstable();
            ids.into_iter().map(|n| (n, "all")).collect()
        }
        Selection::Top(n) => {
            let mut order: Vec<&FacetRow> = rows.to_vec();
            order.sort_by(|a, b| {
                b.mf_degree
                    .total_cmp(&a.mf_degree)
                    .then(a.neuron.cmp(&b.neuron))
            });
            let mut chosen: BTreeMap<u32, &'static str> = BTreeMap::new();
            for r in order.iter().take(n) {
                chosen.insert(r.neuron, "top_mf");
            }
            // SF picks come from the remaining neurons, so ties cannot merge the sets
            order.sort_by(|a, b| {
                a.mf_degree
                    .total_cmp(&b.mf_degree)
                    .then(a.neuron.cmp(&b.neuron))
            });
            for r in order
                .iter()
                .filter(|r| !chosen.contains_key(&r.neuron))
                .take(n)
                .collect::<Vec<_>>()
            {
                chosen.insert(r.neuron, "top_sf");
            }
            chosen.into_iter().collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFit {
    pub channel: String,
    pub iterations: usize,
    pub converged: bool,
    pub facet_coherence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaSidecar {
    pub layer_index: u16,
    pub neuron_id: u32,
    pub selected_as: String,
    pub label: FacetLabel,
    pub mf_degree: f64,
    pub patches: usize,
    pub patch_side: u32,
    pub components: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Coherence of the luma basis.
    pub facet_coherence: Option<f64>,
    pub channels: Vec<ChannelFit>,
    pub modes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedNeuron {
    pub layer_index: u16,
    pub neuron_id: u32,
    pub reason: String,
}

fn channel_fit(name: &str, basis: &IcaBasis) -> ChannelFit {
    ChannelFit {
        channel: name.to_string(),
        iterations: basis.iterations,
        converged: basis.converged,
        facet_coherence: facet_coherence(&basis.component_vectors()).ok(),
    }
}

struct Job<'a> {
    row: &'a FacetRow,
    selected_as: &'static str,
    patches: usize,
}

/// ICA basis images for the selected neurons of every layer.
pub fn cmd_visualize(cfg: &RunConfig, layer: Option<u16>) -> Result<Outcome> {
    let root = cfg.output_root();
    let patch_root = cfg.patch_root()?;
    let (rows, report_path) = read_facet_report(&root)?;
    let (meta, meta_path) = read_topk_meta(&root)?;
    let mut layers: Vec<u16> = rows.iter().map(|r| r.layer).collect();
    layers.dedup();
    check_layer_filter(&layers, layer)?;
    layers.retain(|l| layer.is_none_or(|f| f == *l));

    let mut inputs = vec![
        digest(format!("{ANALYZE_DIR}/facet_report.csv"), &report_path)?,
        digest(format!("{TOPK_DIR}/meta.json"), &meta_path)?,
    ];
    let mut jobs: Vec<Job> = Vec::new();
    for &l in &layers {
        if !meta.layers.iter().any(|m| m.layer_index == l) {
            return Err(Error::data(format!(
                "layer {l} is in the facet report but not in the topk output"
            )));
        }
        let (lists, path) = read_topk_layer(&root, l)?;
        inputs.push(digest(format!("{TOPK_DIR}/layer_{l}.csv"), &path)?);
        let counts: BTreeMap<u32, usize> = lists
            .iter()
            .map(|x| (x.neuron_id, x.entries.len()))
            .collect();
        let layer_rows: Vec<&FacetRow> = rows.iter().filter(|r| r.layer == l).collect();
        for (neuron, selected_as) in select_neurons(&layer_rows, cfg.ica.selection) {
            let row = layer_rows
                .iter()
                .find(|r| r.neuron == neuron)
                .expect("selected from these rows");
            jobs.push(Job {
                row,
                selected_as,
                patches: counts.get(&neuron).copied().unwrap_or(0),
            });
        }
    }

    let params = cfg.ica.params();
    let fits: Vec<Result<NeuronIca>> = jobs
        .par_iter()
        .map(|job| {
            let patches = load_patch_set(
                &patch_root,
                job.row.layer,
                job.row.neuron,
                job.patches,
                cfg.patch_side,
            )?;
            analyze_patches(&patches, &params)
        })
        .collect();

    reset_dir(&root.join(VISUALIZE_DIR))?;
    let mut out = OutputSet::new(&root);
    let store_name = display(cfg.patch_store.as_deref().unwrap_or(Path::new("")));
    let mut skipped = Vec::new();
    let mut processed = 0;
    for (job, fit) in jobs.iter().zip(fits) {
        let (l, n) = (job.row.layer, job.row.neuron);
        let ica = match fit {
            Ok(ica) => ica,
            Err(e) => {
                log::warn!("layer {l} neuron {n}: skipped ({e})");
                skipped.push(SkippedNeuron {
                    layer_index: l,
                    neuron_id: n,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        for rank in 0..job.patches {
            let path = patch_path(&patch_root, l, n, rank);
            inputs.push(digest(
                format!("{store_name}/layer_{l}/neuron_{n}/rank_{rank:03}.png"),
                &path,
            )?);
        }
        let dir = format!("{VISUALIZE_DIR}/layer_{l}/neuron_{n}");
        for &mode in &cfg.ica.modes {
            let images = ica.render(mode)?;
            for (r, img) in images.iter().enumerate() {
                out.write_png(&format!("{dir}/ic_{mode}_{r:02}.png"), &img.to_dynamic())?;
            }
            out.write_png(
                &format!("{dir}/ic_grid_{mode}.png"),
                &grid(&images)?.to_dynamic(),
            )?;
        }
        let sidecar = IcaSidecar {
            layer_index: l,
            neuron_id: n,
            selected_as: job.selected_as.to_string(),
            label: job.row.label,
            mf_degree: job.row.mf_degree,
            patches: job.patches,
            patch_side: cfg.patch_side,
            components: params.k,
            seed: params.seed,
            tol: params.tol,
            max_iter: params.max_iter,
            iterations: ica.max_iterations(),
            converged: ica.converged(),
            facet_coherence: facet_coherence(&ica.luma.component_vectors()).ok(),
            channels: vec![
                channel_fit("luma", &ica.luma),
                channel_fit("r", &ica.rgb[0]),
                channel_fit("g", &ica.rgb[1]),
                channel_fit("b", &ica.rgb[2]),
            ],
            modes: cfg.ica.modes.iter().map(|m| m.to_string()).collect(),
        };
        out.write_json(&format!("{dir}/ica.json"), &sidecar)?;
        processed += 1;
    }
    out.write_json(&format!("{VISUALIZE_DIR}/skipped.json"), &skipped)?;
    let n_skipped = skipped.len();
    out.finish(
        VISUALIZE_DIR,
        Manifest::new("visualize", cfg.hash(), layer, inputs),
    )?;
    if processed == 0 && n_skipped > 0 {
        return Err(Error::data(format!(
            "all {n_skipped} selected neurons were skipped"
        )));
    }
    log::info!("visualize: {processed} neurons rendered, {n_skipped} skipped");
    Ok(Outcome {
        processed,
        skipped: n_skipped,
    })
}
