//! Plots and raster reports written by `analyze`: text-generated SVG line
//! charts and similarity heatmaps.
//!
//! Every number printed into an SVG goes through a fixed-precision format so
//! the files are byte-stable across platforms.

use std::fmt::Write as _;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::facet::{FacetReport, LayerFacetSummary};
use crate::similarity::{SimilarityKind, SimilarityMatrix};

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 300.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 46.0;
const HISTOGRAM_BINS: usize = 20;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub dashed: bool,
    pub markers: bool,
}

impl Series {
    fn line(name: impl Into<String>, points: Vec<(f64, f64)>, color: &str) -> Self {
        Series {
            name: name.into(),
            points,
            color: color.to_string(),
            dashed: false,
            markers: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Explicit x tick positions; evenly spaced ticks when `None`.
    pub x_ticks: Option<Vec<f64>>,
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn draw_panel(svg: &mut String, panel: &Panel, top: f64) {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x0 = MARGIN_LEFT;
    let y0 = top + MARGIN_TOP;
    let all = || panel.series.iter().flat_map(|s| s.points.iter());
    let (xmin, xmax) = bounds(all().map(|p| p.0));
    let (ymin, ymax) = bounds(all().map(|p| p.1));
    let ymin = ymin.min(0.0);
    let ymax = ymax + (ymax - ymin) * 0.05;
    let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin) * plot_w;
    let sy = |y: f64| y0 + plot_h - (y - ymin) / (ymax - ymin) * plot_h;

    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="15" text-anchor="middle">{}</text>"#,
        num(x0 + plot_w / 2.0),
        num(top + 22.0),
        escape(&panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        num(x0),
        num(y0),
        num(plot_w),
        num(plot_h)
    );

    for i in 0..=4 {
        let y = ymin + (ymax - ymin) * i as f64 / 4.0;
        let py = sy(y);
        let _ = writeln!(
            svg,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#ddd"/><text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"##,
            num(x0),
            num(py),
            num(x0 + plot_w),
            num(py),
            num(x0 - 6.0),
            num(py + 4.0),
            tick_label(y)
        );
    }
    let xticks: Vec<f64> = match &panel.x_ticks {
        Some(t) => t.clone(),
        None => (0..=4)
            .map(|i| xmin + (xmax - xmin) * i as f64 / 4.0)
            .collect(),
    };
    for x in xticks {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            num(sx(x)),
            num(y0 + plot_h + 16.0),
            tick_label(x)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        num(x0 + plot_w / 2.0),
        num(y0 + plot_h + 36.0),
        escape(&panel.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 {} {})">{}</text>"#,
        num(18.0),
        num(y0 + plot_h / 2.0),
        num(18.0),
        num(y0 + plot_h / 2.0),
        escape(&panel.y_label)
    );

    for (i, s) in panel.series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{},{}", num(sx(x)), num(sy(y))))
            .collect();
        let dash = if s.dashed {
            r#" stroke-dasharray="5,3""#
        } else {
            ""
        };
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.6"{} points="{}"/>"#,
            s.color,
            dash,
            pts.join(" ")
        );
        if s.markers {
            for p in &pts {
                let (cx, cy) = p.split_once(',').unwrap_or(("0", "0"));
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{}"/>"#,
                    s.color
                );
            }
        }
        let ly = y0 + 12.0 + 16.0 * i as f64;
        let lx = x0 + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"{}/><text x="{}" y="{}" font-size="11">{}</text>"#,
            num(lx),
            num(ly),
            num(lx + 18.0),
            num(ly),
            s.color,
            dash,
            num(lx + 24.0),
            num(ly + 4.0),
            escape(&s.name)
        );
    }
}

/// Panels stacked vertically into one SVG document.
pub fn render_svg(panels: &[Panel]) -> String {
    let height = PANEL_HEIGHT * panels.len().max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif">"#,
        WIDTH, height, WIDTH, height
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        draw_panel(&mut svg, panel, PANEL_HEIGHT * i as f64);
    }
    svg.push_str("</svg>\n");
    svg
}

fn layer_ticks(summaries: &[LayerFacetSummary]) -> Option<Vec<f64>> {
    Some(summaries.iter().map(|s| s.layer_index as f64).collect())
}

/// Mean MF degree per layer over the MF and SF fractions per layer.
pub fn facet_summary_svg(summaries: &[LayerFacetSummary]) -> String {
    let per_layer = |f: fn(&LayerFacetSummary) -> f64| -> Vec<(f64, f64)> {
        summaries
            .iter()
            .map(|s| (s.layer_index as f64, f(s)))
            .collect()
    };
    render_svg(&[
        Panel {
            title: "Mean MF degree per layer".into(),
            x_label: "layer".into(),
            y_label: "MF degree".into(),
            series: vec![
                Series::line("mean MF", per_layer(|s| s.mean_mf), PALETTE[0]),
                Series::line(
                    "mean normalized MF",
                    per_layer(|s| s.mean_mf_normalized),
                    PALETTE[3],
                ),
            ],
            x_ticks: layer_ticks(summaries),
        },
        Panel {
            title: "MF and SF neurons per layer (fraction of layer)".into(),
            x_label: "layer".into(),
            y_label: "fraction of neurons".into(),
            series: vec![
                Series::line("MF", per_layer(|s| s.frac_mf), PALETTE[1]),
                Series::line("SF", per_layer(|s| s.frac_sf), PALETTE[2]),
            ],
            x_ticks: layer_ticks(summaries),
        },
    ])
}

/// Density-scaled histogram as a step outline over `[lo, hi]`.
pub fn histogram_steps(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64)> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let scale = 1.0 / (values.len().max(1) as f64 * width);
    let mut pts = vec![(lo, 0.0)];
    for (b, &c) in counts.iter().enumerate() {
        let h = c as f64 * scale;
        pts.push((lo + b as f64 * width, h));
        pts.push((lo + (b + 1) as f64 * width, h));
    }
    pts.push((hi, 0.0));
    pts
}

/// Normal density sampled on `[lo, hi]`; empty when `sd` is 0.
pub fn normal_curve(mean: f64, sd: f64, lo: f64, hi: f64, samples: usize) -> Vec<(f64, f64)> {
    if !(sd > 0.0) {
        return Vec::new();
    }
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    (0..samples)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
            let z = (x - mean) / sd;
            (x, norm * (-0.5 * z * z).exp())
        })
        .collect()
}

fn distribution_panel(
    title: &str,
    x_label: &str,
    reports: &[FacetReport],
    summaries: &[LayerFacetSummary],
    value: fn(&FacetReport) -> f64,
    stats: fn(&LayerFacetSummary) -> (f64, f64),
) -> Panel {
    let mut series = Vec::new();
    for (i, s) in summaries.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let values: Vec<f64> = reports
            .iter()
            .filter(|r| r.layer_index == s.layer_index)
            .map(value)
            .collect();
        let mut hist = Series::line(
            format!("layer {} hist", s.layer_index),
            histogram_steps(&values, 0.0, 1.0, HISTOGRAM_BINS),
            color,
        );
        hist.markers = false;
        series.push(hist);
        let (mean, sd) = stats(s);
        let curve = normal_curve(mean, sd, 0.0, 1.0, 101);
        if !curve.is_empty() {
            let mut fit = Series::line(format!("layer {} fit", s.layer_index), curve, color);
            fit.markers = false;
            fit.dashed = true;
            series.push(fit);
        }
    }
    Panel {
        title: title.into(),
        x_label: x_label.into(),
        y_label: "density".into(),
        series,
        x_ticks: None,
    }
}

/// Per-layer histograms of sparsity and flatness with fitted normal densities.
pub fn distribution_svg(reports: &[FacetReport], summaries: &[LayerFacetSummary]) -> String {
    render_svg(&[
        distribution_panel(
            "Sparsity (Gini) per layer",
            "sparsity",
            reports,
            summaries,
            |r| r.sparsity,
            |s| (s.mean_sparsity, s.std_sparsity),
        ),
        distribution_panel(
            "Flatness per layer",
            "flatness",
            reports,
            summaries,
            |r| r.flatness,
            |s| (s.mean_flatness, s.std_flatness),
        ),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityAverages {
    pub layer_index: u16,
    pub pearson: f64,
    pub euclidean: f64,
}

/// Average off-diagonal Pearson similarity and Euclidean distance per layer.
pub fn similarity_svg(averages: &[SimilarityAverages]) -> String {
    let ticks = Some(
        averages
            .iter()
            .map(|a| a.layer_index as f64)
            .collect::<Vec<_>>(),
    );
    let per_layer = |f: fn(&SimilarityAverages) -> f64| -> Vec<(f64, f64)> {
        averages
            .iter()
            .map(|a| (a.layer_index as f64, f(a)))
            .collect()
    };
    render_svg(&[
        Panel {
            title: "Average neuronal similarity (Pearson)".into(),
            x_label: "layer".into(),
            y_label: "mean correlation".into(),
            series: vec![Series::line(
                "pearson",
                per_layer(|a| a.pearson),
                PALETTE[0],
            )],
            x_ticks: ticks.clone(),
        },
        Panel {
            title: "Average neuronal dissimilarity (Euclidean)".into(),
            x_label: "layer".into(),
            y_label: "mean distance".into(),
            series: vec![Series::line(
                "euclidean",
                per_layer(|a| a.euclidean),
                PALETTE[1],
            )],
            x_ticks: ticks,
        },
    ])
}

/// Colour stops of the heatmap map, low to high.
const COLORMAP: [[f64; 3]; 3] = [
    [49.0, 54.0, 149.0],
    [255.0, 255.0, 191.0],
    [165.0, 0.0, 38.0],
];

/// Piecewise-linear colour for `t` in [0, 1].
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let pos = t * (COLORMAP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(COLORMAP.len() - 2);
    let f = pos - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = COLORMAP[i][c] + (COLORMAP[i + 1][c] - COLORMAP[i][c]) * f;
        out[c] = v.round().clamp(0.0, 255.0) as u8;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub layer_index: u16,
    pub kind: SimilarityKind,
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub cell_pixels: u32,
    pub colormap: Vec<[u8; 3]>,
}

/// Pixels per matrix cell so that small layers remain legible.
pub fn cell_pixels(n: usize) -> u32 {
    match n {
        0..=32 => 8,
        33..=128 => 4,
        129..=256 => 2,
        _ => 1,
    }
}

/// Heatmap of a similarity matrix, linearly mapped from its min to its max.
/// A constant matrix maps to the lowest colour.
pub fn heatmap(s: &SimilarityMatrix) -> (RgbImage, HeatmapMeta) {
    let (min, max) = s.min_max();
    let cell = cell_pixels(s.n);
    let side = s.n as u32 * cell;
    let span = max - min;
    let img = RgbImage::from_fn(side, side, |x, y| {
        let v = s.get((y / cell) as usize, (x / cell) as usize);
        let t = if span > 0.0 { (v - min) / span } else { 0.0 };
        image::Rgb(colormap(t))
    });
    let meta = HeatmapMeta {
        layer_index: s.layer_index,
        kind: s.kind,
        n: s.n,
        min,
        max,
        cell_pixels: cell,
        colormap: COLORMAP
            .iter()
            .map(|c| [c[0] as u8, c[1] as u8, c[2] as u8])
            .collect(),
    };
    (img, meta)
}
