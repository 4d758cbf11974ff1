//! Facet metrics over CoF rows: Gini sparsity, spectral flatness, MF degree,
//! within-layer significance and SF/MF labelling.
//!
//! A multi-faceted (MF) neuron spreads its top images over many classes
//! (flat, non-sparse row); a single-faceted (SF) neuron concentrates them on
//! few classes. The MF degree is `flatness / sparsity`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::cof::CofMatrix;
use crate::error::{Error, Result};

/// Smoothing constant added to every CoF cell before the entropy, and the
/// floor of the sparsity denominator.
pub const EPSILON: f64 = 1e-7;
pub const P_CUT: f64 = 0.05;
/// Number of top MF / top SF neurons reported per layer.
pub const TOP_NEURONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FacetLabel {
    #[serde(rename = "MF")]
    MultiFaceted,
    #[serde(rename = "SF")]
    SingleFaceted,
    #[serde(rename = "NEITHER")]
    Neither,
}

impl FacetLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            FacetLabel::MultiFaceted => "MF",
            FacetLabel::SingleFaceted => "SF",
            FacetLabel::Neither => "NEITHER",
        }
    }
}

fn check_nonnegative(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
        Some(i) => Err(Error::data(format!(
            "entry {i} is {}, expected a finite nonnegative value",
            v[i]
        ))),
        None => Ok(()),
    }
}

/// Gini index of a nonnegative vector; 0 for uniform, `1 - 1/N` for one-hot.
///
/// With `x` sorted ascending and `p = x / sum(x)`,
/// `G = 1 - 2 * sum_k p_k (N - k + 1/2) / N`, which is evaluated in the
/// equivalent mirrored form `sum_{k <= N/2} (N + 1 - 2k)(p_{N+1-k} - p_k) / N`
/// so that uniform vectors give exactly 0.
pub fn gini(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::data("gini of an empty vector"));
    }
    check_nonnegative(v)?;
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(Error::data("gini of an all-zero vector"));
    }
    let mut p: Vec<f64> = v.iter().map(|x| x / total).collect();
    p.sort_by(f64::total_cmp);
    let n = p.len();
    let acc: f64 = (1..=n / 2)
        .map(|k| (n + 1 - 2 * k) as f64 * (p[n - k] - p[k - 1]))
        .sum();
    // 1 - (N - acc)/N is exact at both ends: 0 for uniform, 1 - 1/N for one-hot.
    let n = n as f64;
    Ok((1.0 - (n - acc) / n).clamp(0.0, 1.0))
}

/// Spectral flatness of a nonnegative vector of length `C >= 2`.
///
/// Adds `eps` to every entry, normalizes to a distribution `q`, takes the
/// entropy `H = -sum q log2 q / log2 C` and returns `2^H - 1`, i.e. the value
/// whose `log2(flatness + 1)` is the normalized entropy. Entries are sorted
/// before summation so the result does not depend on their order.
pub fn flatness(v: &[f64], eps: f64) -> Result<f64> {
    if v.len() < 2 {
        return Err(Error::data(format!(
            "flatness needs at least 2 entries, got {}",
            v.len()
        )));
    }
    check_nonnegative(v)?;
    if !(eps >= 0.0) {
        return Err(Error::usage(format!(
            "epsilon must be nonnegative, got {eps}"
        )));
    }
    let mut x: Vec<f64> = v.iter().map(|a| a + eps).collect();
    x.sort_by(f64::total_cmp);
    if x[0] == x[x.len() - 1] {
        if x[0] == 0.0 {
            return Err(Error::data("flatness of an all-zero vector with epsilon 0"));
        }
        return Ok(1.0);
    }
    let total: f64 = x.iter().sum();
    let entropy: f64 = x
        .iter()
        .filter(|&&a| a > 0.0)
        .map(|&a| {
            let q = a / total;
            -q * q.log2()
        })
        .sum();
    let h = (entropy / (x.len() as f64).log2()).clamp(0.0, 1.0);
    Ok((h.exp2() - 1.0).clamp(0.0, 1.0))
}

/// `flatness / max(sparsity, eps)`.
pub fn mf_degree(flatness: f64, sparsity: f64, eps: f64) -> Result<f64> {
    for (name, v) in [("flatness", flatness), ("sparsity", sparsity)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::data(format!("{name} {v} outside [0, 1]")));
        }
    }
    Ok(flatness / sparsity.max(eps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfNormalization {
    pub values: Vec<f64>,
    /// All inputs were equal; every value mapped to 0.
    pub degenerate: bool,
}

/// Global min-max map of MF degrees onto [0, 1].
pub fn normalize_mf(values: &[f64]) -> MfNormalization {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || !(max > min) {
        if !values.is_empty() {
            log::warn!(
                "all {} MF degrees are equal; normalized values set to 0",
                values.len()
            );
        }
        return MfNormalization {
            values: vec![0.0; values.len()],
            degenerate: !values.is_empty(),
        };
    }
    let span = max - min;
    MfNormalization {
        values: values
            .iter()
            .map(|v| ((v - min) / span).clamp(0.0, 1.0))
            .collect(),
        degenerate: false,
    }
}

/// Upper-tail probability of each value under a normal fitted to the other
/// values of the layer (leave-one-out mean and sample standard deviation).
/// A zero fitted deviation (all other values equal) gives p = 1.
pub fn layer_pvalues(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 3 {
        return Err(Error::data(format!(
            "p-values need at least 3 neurons in the layer, got {n}"
        )));
    }
    let pvals = (0..n)
        .map(|i| {
            let others = || {
                values
                    .iter()
                    .enumerate()
                    .filter(move |(j, _)| *j != i)
                    .map(|(_, v)| *v)
            };
            let lo = others().fold(f64::INFINITY, f64::min);
            let hi = others().fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                // rounding in the mean would otherwise leave a spurious tiny sd
                return 1.0;
            }
            let mean = others().sum::<f64>() / (n - 1) as f64;
            let var = others().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 2) as f64;
            let sd = var.sqrt();
            if sd == 0.0 {
                return 1.0;
            }
            let z = (values[i] - mean) / sd;
            (0.5 * erfc(z / std::f64::consts::SQRT_2)).clamp(0.0, 1.0)
        })
        .collect();
    Ok(pvals)
}

/// MF if significant in either tail and above the layer mean; SF if
/// significant and below it.
pub fn classify_neuron(mf: f64, p: f64, layer_mean: f64, threshold: f64) -> FacetLabel {
    let significant = p.min(1.0 - p) < threshold;
    if significant && mf > layer_mean {
        FacetLabel::MultiFaceted
    } else if significant && mf < layer_mean {
        FacetLabel::SingleFaceted
    } else {
        FacetLabel::Neither
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetReport {
    pub layer_index: u16,
    pub neuron_id: u32,
    pub sparsity: f64,
    pub flatness: f64,
    pub mf_degree: f64,
    pub mf_normalized: f64,
    pub p_value: f64,
    pub label: FacetLabel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetParams {
    pub epsilon: f64,
    pub p_cut: f64,
}

impl Default for FacetParams {
    fn default() -> Self {
        Self {
            epsilon: EPSILON,
            p_cut: P_CUT,
        }
    }
}

// Offset from the minimum, so a constant vector has exactly its value as
// mean and no neuron of a flat layer lands on either side of it.
fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    lo + v.iter().map(|x| x - lo).sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Per-neuron metrics of one layer; `mf_normalized` is left at 0 and filled
/// in by [`facet_reports`] once all layers are known.
pub fn layer_metrics(cof: &CofMatrix, params: FacetParams) -> Result<Vec<FacetReport>> {
    let mut reports = Vec::with_capacity(cof.n_neurons);
    for n in 0..cof.n_neurons {
        let row = cof.row_f64(n);
        let sparsity = gini(&row)
            .map_err(|e| Error::data(format!("layer {} neuron {n}: {e}", cof.layer_index)))?;
        let flat = flatness(&row, params.epsilon)?;
        reports.push(FacetReport {
            layer_index: cof.layer_index,
            neuron_id: n as u32,
            sparsity,
            flatness: flat,
            mf_degree: mf_degree(flat, sparsity, params.epsilon)?,
            mf_normalized: 0.0,
            p_value: 1.0,
            label: FacetLabel::Neither,
        });
    }
    let mfs: Vec<f64> = reports.iter().map(|r| r.mf_degree).collect();
    let pvals = layer_pvalues(&mfs)?;
    let layer_mean = mean(&mfs);
    for (r, p) in reports.iter_mut().zip(pvals) {
        r.p_value = p;
        r.label = classify_neuron(r.mf_degree, p, layer_mean, params.p_cut);
    }
    Ok(reports)
}

/// Metrics for every layer, with MF degrees min-max normalized across all
/// layers jointly.
pub fn facet_reports(layers: &[CofMatrix], params: FacetParams) -> Result<Vec<FacetReport>> {
    let mut reports = Vec::new();
    for cof in layers {
        reports.extend(layer_metrics(cof, params)?);
    }
    let all: Vec<f64> = reports.iter().map(|r| r.mf_degree).collect();
    let normalized = normalize_mf(&all);
    for (r, v) in reports.iter_mut().zip(normalized.values) {
        r.mf_normalized = v;
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFacetSummary {
    pub layer_index: u16,
    pub n_neurons: usize,
    pub mean_mf: f64,
    pub std_mf: f64,
    pub mean_mf_normalized: f64,
    pub mean_sparsity: f64,
    pub std_sparsity: f64,
    pub mean_flatness: f64,
    pub std_flatness: f64,
    pub count_mf: usize,
    pub count_sf: usize,
    pub frac_mf: f64,
    pub frac_sf: f64,
    /// Highest MF degrees first.
    pub top_mf_neurons: Vec<u32>,
    /// Lowest MF degrees first.
    pub top_sf_neurons: Vec<u32>,
}

pub fn layer_summary(reports: &[FacetReport]) -> Result<LayerFacetSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::data("layer summary of an empty report set"))?;
    if reports.iter().any(|r| r.layer_index != first.layer_index) {
        return Err(Error::usage(
            "layer summary over reports from several layers",
        ));
    }
    let n = reports.len();
    let column = |f: fn(&FacetReport) -> f64| reports.iter().map(f).collect::<Vec<f64>>();
    let mfs = column(|r| r.mf_degree);
    let sparsity = column(|r| r.sparsity);
    let flat = column(|r| r.flatness);
    let count = |label| reports.iter().filter(|r| r.label == label).count();
    let count_mf = count(FacetLabel::MultiFaceted);
    let count_sf = count(FacetLabel::SingleFaceted);

    let mut order: Vec<&FacetReport> = reports.iter().collect();
    let by_mf = |a: &&FacetReport, b: &&FacetReport| -> Ordering {
        a.mf_degree
            .total_cmp(&b.mf_degree)
            .then(a.neuron_id.cmp(&b.neuron_id))
    };
    order.sort_by(by_mf);
    let top_sf_neurons = order
        .iter()
        .take(TOP_NEURONS)
        .map(|r| r.neuron_id)
        .collect();
    order.sort_by(|a, b| {
        b.mf_degree
            .total_cmp(&a.mf_degree)
            .then(a.neuron_id.cmp(&b.neuron_id))
    });
    let top_mf_neurons = order
        .iter()
        .take(TOP_NEURONS)
        .map(|r| r.neuron_id)
        .collect();

    Ok(LayerFacetSummary {
        layer_index: first.layer_index,
        n_neurons: n,
        mean_mf: mean(&mfs),
        std_mf: sample_std(&mfs),
        mean_mf_normalized: mean(&column(|r| r.mf_normalized)),
        mean_sparsity: mean(&sparsity),
        std_sparsity: sample_std(&sparsity),
        mean_flatness: mean(&flat),
        std_flatness: sample_std(&flat),
        count_mf,
        count_sf,
        frac_mf: count_mf as f64 / n as f64,
        frac_sf: count_sf as f64 / n as f64,
        top_mf_neurons,
        top_sf_neurons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Pairwise mean absolute difference: sum_ij |xi - xj| / (2 N^2 mean).
    fn gini_pairwise(v: &[f64]) -> f64 {
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

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!((gini(&[0.0, 0.0, 0.0, 1.0]).unwrap() - 0.75).abs() < 1e-15);
        assert!((gini(&[1.0, 2.0, 3.0, 4.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!((gini_pairwise(&[0.0, 0.0, 0.0, 1.0]) - 0.75).abs() < 1e-15);
        assert!((gini_pairwise(&[1.0, 2.0, 3.0, 4.0]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gini_one_hot_exact() {
        for n in 1..200usize {
            let mut v = vec![0.0; n];
            v[n / 3] = 7.25;
            assert_eq!(gini(&v).unwrap(), 1.0 - 1.0 / n as f64, "n = {n}");
        }
    }

    #[test]
    fn gini_errors() {
        assert!(gini(&[0.0, 0.0]).is_err());
        assert!(gini(&[1.0, -1.0]).is_err());
        assert!(gini(&[]).is_err());
        assert!(gini(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn flatness_examples() {
        for c in [2usize, 10, 1000] {
            assert_eq!(flatness(&vec![3.0; c], EPSILON).unwrap(), 1.0);
        }
        let mut one_hot = vec![0.0; 1000];
        one_hot[17] = 100.0;
        assert_eq!(flatness(&one_hot, 0.0).unwrap(), 0.0);
        assert!(flatness(&one_hot, EPSILON).unwrap() < 1e-4);

        let mut two = vec![0.0; 1000];
        two[0] = 50.0;
        two[1] = 50.0;
        // 2^(1 / log2 1000) - 1, evaluated at 30 digits
        assert!((flatness(&two, 0.0).unwrap() - 0.072_028_553_033_299_03).abs() < 1e-12);
        assert!((flatness(&two, EPSILON).unwrap() - 0.072_030_810_738_160_38).abs() < 1e-9);
    }

    #[test]
    fn flatness_errors() {
        assert!(flatness(&[1.0], EPSILON).is_err());
        assert!(flatness(&[1.0, -2.0], EPSILON).is_err());
        assert!(flatness(&[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn flatness_drops_when_mass_concentrates() {
        let uniform = vec![10.0; 50];
        for delta in [1e-3, 0.5, 3.0, 9.0] {
            let mut v = uniform.clone();
            v[0] += delta;
            v[1] -= delta;
            assert!(flatness(&v, EPSILON).unwrap() < flatness(&uniform, EPSILON).unwrap());
        }
    }

    #[test]
    fn mf_degree_examples() {
        assert_eq!(mf_degree(0.5, 0.5, EPSILON).unwrap(), 1.0);
        assert_eq!(mf_degree(0.3, 0.0, EPSILON).unwrap(), 0.3 / EPSILON);
        assert!(mf_degree(1.2, 0.5, EPSILON).is_err());
        assert!(mf_degree(0.5, -0.1, EPSILON).is_err());

        let mut one_hot = vec![0.0; 1000];
        one_hot[0] = 100.0;
        let s = gini(&one_hot).unwrap();
        assert_eq!(s, 1.0 - 1.0 / 1000.0);
        let mf = mf_degree(flatness(&one_hot, EPSILON).unwrap(), s, EPSILON).unwrap();
        assert!(mf < 1e-4);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_mf(&[0.2, 0.7]).values, vec![0.0, 1.0]);
        let d = normalize_mf(&[0.4, 0.4, 0.4]);
        assert_eq!(d.values, vec![0.0; 3]);
        assert!(d.degenerate);
        let v = [0.53, 0.51, 0.63, 0.5, 0.55];
        let out = normalize_mf(&v).values;
        for i in 0..v.len() {
            for j in 0..v.len() {
                assert_eq!(v[i] < v[j], out[i] < out[j]);
            }
        }
    }

    // Tail mass of the standard normal above z by composite Simpson on [z, z + 12].
    fn upper_tail_quadrature(z: f64) -> f64 {
        let steps = 20_000;
        let h = 12.0 / steps as f64;
        let pdf = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = pdf(z) + pdf(z + 12.0);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * pdf(z + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn pvalue_examples() {
        // others: {1, 3} -> mean 2, sd sqrt(2)
        let p = layer_pvalues(&[1.0, 3.0, 2.0]).unwrap();
        assert_eq!(p[2], 0.5);

        let sd = 2f64.sqrt();
        let p = layer_pvalues(&[1.0, 3.0, 2.0 + 1.6449 * sd]).unwrap();
        assert!((p[2] - upper_tail_quadrature(1.6449)).abs() < 1e-9);
        assert!((p[2] - 0.049_995_217_468_346_3).abs() < 1e-9);

        assert_eq!(layer_pvalues(&[0.4; 6]).unwrap(), vec![1.0; 6]);
        assert!(layer_pvalues(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn flat_layer_is_unlabelled() {
        let row = vec![3, 3, 2, 2, 2, 2, 2, 2, 1, 1];
        let rows: Vec<Vec<u32>> = (0..10)
            .map(|n| {
                let mut r = row.clone();
                r.rotate_left(n);
                r
            })
            .collect();
        let cof = CofMatrix::from_rows(1, &rows, 10).unwrap();
        let reports = layer_metrics(&cof, FacetParams::default()).unwrap();
        assert!(reports.iter().all(|r| r.p_value == 1.0));
        assert!(reports.iter().all(|r| r.label == FacetLabel::Neither));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_neuron(0.5, 0.001, 0.5, P_CUT), FacetLabel::Neither);
        assert_eq!(
            classify_neuron(0.8, 0.01, 0.5, P_CUT),
            FacetLabel::MultiFaceted
        );
        assert_eq!(classify_neuron(0.2, 0.2, 0.5, P_CUT), FacetLabel::Neither);
        assert_eq!(
            classify_neuron(0.2, 0.99, 0.5, P_CUT),
            FacetLabel::SingleFaceted
        );
    }

    fn report(neuron_id: u32, mf: f64, label: FacetLabel) -> FacetReport {
        FacetReport {
            layer_index: 1,
            neuron_id,
            sparsity: 0.5,
            flatness: 0.5,
            mf_degree: mf,
            mf_normalized: mf,
            p_value: 0.5,
            label,
        }
    }

    #[test]
    fn summary_counts_and_tops() {
        let reports: Vec<_> = (0..10)
            .map(|i| {
                let label = if i < 3 {
                    FacetLabel::MultiFaceted
                } else {
                    FacetLabel::Neither
                };
                report(i, (i as f64 * 0.37) % 1.0, label)
            })
            .collect();
        let s = layer_summary(&reports).unwrap();
        assert_eq!(s.count_mf, 3);
        assert!((s.frac_mf - 0.3).abs() < 1e-15);
        assert_eq!(s.top_mf_neurons.len(), TOP_NEURONS);
        let mf_of = |id: u32| reports[id as usize].mf_degree;
        for w in s.top_mf_neurons.windows(2) {
            assert!(mf_of(w[0]) >= mf_of(w[1]));
        }
        for w in s.top_sf_neurons.windows(2) {
            assert!(mf_of(w[0]) <= mf_of(w[1]));
        }

        let none: Vec<_> = (0..5)
            .map(|i| report(i, 0.1, FacetLabel::Neither))
            .collect();
        let s = layer_summary(&none).unwrap();
        assert_eq!(
            (s.count_mf, s.count_sf, s.frac_mf, s.frac_sf),
            (0, 0, 0.0, 0.0)
        );
        assert!(layer_summary(&[]).is_err());
    }

    proptest! {
        #[test]
        fn gini_matches_pairwise_and_is_scale_free(
            v in proptest::collection::vec(0.0f64..100.0, 1..64),
            scale in 0.01f64..1000.0,
        ) {
            prop_assume!(v.iter().sum::<f64>() > 0.0);
            let g = gini(&v).unwrap();
            prop_assert!((g - gini_pairwise(&v)).abs() < 1e-9);
            let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
            prop_assert!((gini(&scaled).unwrap() - g).abs() < 1e-12);
        }

        #[test]
        fn flatness_is_bounded_and_order_free(
            mut v in proptest::collection::vec(0.0f64..100.0, 2..200),
            seed in any::<u64>(),
        ) {
            let f = flatness(&v, EPSILON).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            // deterministic shuffle
            let n = v.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                v.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(flatness(&v, EPSILON).unwrap().to_bits(), f.to_bits());
        }

        #[test]
        fn labels_survive_affine_rescaling(
            mfs in proptest::collection::vec(0.0f64..2.0, 3..40),
        ) {
            let norm = normalize_mf(&mfs);
            prop_assume!(!norm.degenerate);
            let p1 = layer_pvalues(&mfs).unwrap();
            let p2 = layer_pvalues(&norm.values).unwrap();
            let m1 = mean(&mfs);
            let m2 = mean(&norm.values);
            for i in 0..mfs.len() {
                // skip neurons sitting on the decision boundary
                prop_assume!((p1[i] - P_CUT).abs() > 1e-9 && (1.0 - p1[i] - P_CUT).abs() > 1e-9);
                prop_assume!((mfs[i] - m1).abs() > 1e-9);
                let a = classify_neuron(mfs[i], p1[i], m1, P_CUT);
                let b = classify_neuron(norm.values[i], p2[i], m2, P_CUT);
                prop_assert_eq!(a, b);
                prop_assert!(!(a == FacetLabel::MultiFaceted && a == FacetLabel::SingleFaceted));
            }
        }
    }
}
