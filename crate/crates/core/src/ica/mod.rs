//! Independent-component basis images of a neuron's top patches.
//!
//! Each patch is one observation and each pixel one variable. After PCA
//! whitening to `k` dimensions, FastICA finds an orthonormal unmixing `W`;
//! the basis images are the rows of `W * diag(sqrt(eigenvalues)) * V^T`,
//! i.e. the columns of the mixing matrix expressed in pixel space. A patch is
//! then approximately the mean patch plus a weighted sum of basis images.
//!
//! Colour visualizations run one ICA per RGB channel. All channels share the
//! seed, hence the initial unmixing matrix, so component `r` lines up across
//! channels.

pub mod fastica;
pub mod render;
pub mod whiten;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use fastica::{fastica, initial_unmixing, symmetric_decorrelation, FastIcaParams, Unmixing};
pub use render::{components_to_images, ComponentSet, RenderInput, RenderMode, RenderedImage};
pub use whiten::{center_whiten, covariance, Whitening};

use crate::error::{Error, Result};
use crate::ingest::Patch;

pub const DEFAULT_COMPONENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Luma,
    R,
    G,
    B,
}

impl Channel {
    fn value(self, patch: &Patch, row: u32, col: u32) -> f64 {
        let px = |c| patch.get(row, col, c) as f64;
        match self {
            Channel::Luma => 0.299 * px(0) + 0.587 * px(1) + 0.114 * px(2),
            Channel::R => px(0),
            Channel::G => px(1),
            Channel::B => px(2),
        }
    }
}

/// One channel of a patch list: rows are patches in rank order, columns are
/// pixel intensities scaled to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub channel: Channel,
    pub side: u32,
    pub data: DMatrix<f64>,
}

impl PatchMatrix {
    pub fn from_patches(patches: &[Patch], channel: Channel) -> Result<Self> {
        let first = patches
            .first()
            .ok_or_else(|| Error::data("no patches to analyze"))?;
        let side = first.width;
        if patches.iter().any(|p| p.width != side || p.height != side) {
            return Err(Error::data("patches must all be square with the same side"));
        }
        let d = (side * side) as usize;
        let data = DMatrix::from_fn(patches.len(), d, |i, j| {
            let (row, col) = ((j as u32) / side, (j as u32) % side);
            channel.value(&patches[i], row, col) / 255.0
        });
        Ok(Self {
            channel,
            side,
            data,
        })
    }
}

/// Fitted basis of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct IcaBasis {
    pub k: usize,
    pub side: u32,
    /// k x D basis images in pixel space.
    pub components: DMatrix<f64>,
    /// k x k unmixing matrix acting on whitened data; rows orthonormal.
    pub unmixing: DMatrix<f64>,
    pub whitening: Whitening,
    pub seed: u64,
    pub tol: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl IcaBasis {
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.components.row(i).iter().copied().collect()
    }

    pub fn component_vectors(&self) -> Vec<Vec<f64>> {
        (0..self.k).map(|i| self.component(i)).collect()
    }

    /// Estimated sources (n x k) of data laid out like the fitted matrix.
    pub fn sources(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.whitening.transform(x) * self.unmixing.transpose()
    }
}

/// Whitening followed by FastICA, with each basis image's largest-magnitude
/// pixel made positive.
pub fn fit_ica(x: &DMatrix<f64>, side: u32, params: &FastIcaParams) -> Result<IcaBasis> {
    let (z, whitening) = center_whiten(x, params.k)?;
    let unmixing = fastica(&z, params)?;
    let mut w = unmixing.w;
    let mut components = whitening.dewhiten(&w);
    for i in 0..params.k {
        let row = components.row(i);
        let peak = row.iter().copied().fold(
            0.0f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        if peak < 0.0 {
            components.row_mut(i).neg_mut();
            w.row_mut(i).neg_mut();
        }
    }
    Ok(IcaBasis {
        k: params.k,
        side,
        components,
        unmixing: w,
        whitening,
        seed: params.seed,
        tol: params.tol,
        iterations: unmixing.iterations,
        converged: unmixing.converged,
    })
}

pub fn fit_patch_matrix(m: &PatchMatrix, params: &FastIcaParams) -> Result<IcaBasis> {
    fit_ica(&m.data, m.side, params)
}

/// Luma basis plus one basis per RGB channel for one neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronIca {
    pub luma: IcaBasis,
    pub rgb: [IcaBasis; 3],
}

impl NeuronIca {
    /// Renders the luma basis for `Gray`, the RGB bases otherwise.
    pub fn render(&self, mode: RenderMode) -> Result<Vec<RenderedImage>> {
        match mode {
            RenderMode::Gray => {
                components_to_images(RenderInput::Gray(&ComponentSet::from(&self.luma)), mode)
            }
            _ => {
                let [r, g, b] = &self.rgb;
                let sets = [
                    ComponentSet::from(r),
                    ComponentSet::from(g),
                    ComponentSet::from(b),
                ];
                components_to_images(RenderInput::Rgb([&sets[0], &sets[1], &sets[2]]), mode)
            }
        }
    }

    pub fn converged(&self) -> bool {
        self.luma.converged && self.rgb.iter().all(|b| b.converged)
    }

    pub fn max_iterations(&self) -> usize {
        std::iter::once(&self.luma)
            .chain(self.rgb.iter())
            .map(|b| b.iterations)
            .max()
            .unwrap_or(0)
    }
}

pub fn analyze_patches(patches: &[Patch], params: &FastIcaParams) -> Result<NeuronIca> {
    let fit = |channel| fit_patch_matrix(&PatchMatrix::from_patches(patches, channel)?, params);
    Ok(NeuronIca {
        luma: fit(Channel::Luma)?,
        rgb: [fit(Channel::R)?, fit(Channel::G)?, fit(Channel::B)?],
    })
}

/// Mean |cosine similarity| over unordered pairs of basis images; 1 when all
/// components coincide up to sign, 0 when they are mutually orthogonal.
/// Zero-norm components are left out of the pairs.
pub fn facet_coherence(components: &[Vec<f64>]) -> Result<f64> {
    if components.len() < 2 {
        return Err(Error::usage("facet coherence needs at least 2 components"));
    }
    let unit: Vec<Vec<f64>> = components
        .iter()
        .filter_map(|c| {
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm > 0.0).then(|| c.iter().map(|v| v / norm).collect())
        })
        .collect();
    if unit.len() < 2 {
        return Err(Error::data(
            "facet coherence needs at least 2 nonzero components",
        ));
    }
    let mut acc = 0.0;
    let mut pairs = 0usize;
    for i in 0..unit.len() {
        for j in (i + 1)..unit.len() {
            let cos: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            acc += cos.abs().min(1.0);
            pairs += 1;
        }
    }
    Ok(acc / pairs as f64)
}

pub fn basis_coherence(basis: &IcaBasis) -> Result<f64> {
    facet_coherence(&basis.component_vectors())
}
