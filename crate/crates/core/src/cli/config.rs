//! Run configuration: a JSON file whose relative paths resolve against the
//! file's own directory, overridable from the command line.
//!
//! ```json
//! {
//!   "activation_stream": "activations.bin",
//!   "patch_store": "patches",
//!   "output_dir": "out",
//!   "k": 100,
//!   "classes": 1000,
//!   "patch_side": 64,
//!   "ica": {"components": 8, "seed": 0, "tol": 1e-5, "max_iter": 1000,
//!           "modes": ["gray", "rgb_linear", "rgb_asinh", "u8_global"],
//!           "selection": {"top": 4}},
//!   "thresholds": {"p_cut": 0.05, "epsilon": 1e-7},
//!   "preset": "vgg16"
//! }
//! ```
//!
//! Every field is optional. `selection` is `"all"` or `{"top": N}`; `preset`
//! is `"vgg16"` or `{"custom": [LayerSpec, ...]}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::facet::{FacetParams, EPSILON, P_CUT};
use crate::ica::{FastIcaParams, RenderMode, DEFAULT_COMPONENTS};
use crate::ingest::{validate_layers, LayerSpec, Preset, DEFAULT_K, DEFAULT_PATCH_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    All,
    Top(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcaConfig {
    pub components: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub modes: Vec<RenderMode>,
    pub selection: Selection,
}

impl Default for IcaConfig {
    fn default() -> Self {
        let d = FastIcaParams::default();
        Self {
            components: DEFAULT_COMPONENTS,
            seed: d.seed,
            tol: d.tol,
            max_iter: d.max_iter,
            modes: RenderMode::ALL.to_vec(),
            selection: Selection::Top(4),
        }
    }
}

impl IcaConfig {
    pub fn params(&self) -> FastIcaParams {
        FastIcaParams {
            k: self.components,
            seed: self.seed,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub p_cut: f64,
    pub epsilon: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            p_cut: P_CUT,
            epsilon: EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetConfig {
    Vgg16,
    Custom(Vec<LayerSpec>),
}

impl PresetConfig {
    pub fn layers(&self) -> Vec<LayerSpec> {
        match self {
            PresetConfig::Vgg16 => Preset::Vgg16.layers(),
            PresetConfig::Custom(layers) => layers.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub activation_stream: Option<PathBuf>,
    pub patch_store: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub k: usize,
    /// Class count; taken from the stream header when absent, required for
    /// CSV streams.
    pub classes: Option<u32>,
    pub patch_side: u32,
    pub ica: IcaConfig,
    pub thresholds: Thresholds,
    pub preset: PresetConfig,
    #[serde(skip)]
    pub(crate) base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            activation_stream: None,
            patch_store: None,
            output_dir: PathBuf::from("facetscope_out"),
            k: DEFAULT_K,
            classes: None,
            patch_side: DEFAULT_PATCH_SIDE,
            ica: IcaConfig::default(),
            thresholds: Thresholds::default(),
            preset: PresetConfig::Vgg16,
            base_dir: PathBuf::new(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub selection: Option<Selection>,
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::usage(format!("invalid config: {e}")))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if path.as_os_str().is_empty() {
            return Err(Error::usage("empty config path"));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(seed) = o.seed {
            self.ica.seed = seed;
        }
        if let Some(selection) = o.selection {
            self.ica.selection = selection;
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_root(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn stream_path(&self) -> Result<PathBuf> {
        self.activation_stream
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::usage("config has no activation_stream"))
    }

    pub fn patch_root(&self) -> Result<PathBuf> {
        self.patch_store
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::usage("config has no patch_store"))
    }

    pub fn facet_params(&self) -> FacetParams {
        FacetParams {
            epsilon: self.thresholds.epsilon,
            p_cut: self.thresholds.p_cut,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::usage(format!("invalid config: {m}")));
        if self.k == 0 {
            return fail("k must be positive");
        }
        if self.classes == Some(0) {
            return fail("classes must be positive");
        }
        if self.patch_side == 0 {
            return fail("patch_side must be positive");
        }
        if self.ica.components == 0 || self.ica.max_iter == 0 {
            return fail("ica.components and ica.max_iter must be positive");
        }
        if !(self.ica.tol > 0.0) || !self.ica.tol.is_finite() {
            return fail("ica.tol must be positive");
        }
        if self.ica.modes.is_empty() {
            return fail("ica.modes is empty");
        }
        if self.ica.selection == Selection::Top(0) {
            return fail("selection top must be positive");
        }
        if !(self.thresholds.p_cut > 0.0 && self.thresholds.p_cut < 1.0) {
            return fail("thresholds.p_cut must lie in (0, 1)");
        }
        if !(self.thresholds.epsilon > 0.0) || !self.thresholds.epsilon.is_finite() {
            return fail("thresholds.epsilon must be positive");
        }
        validate_layers(&self.preset.layers())
            .map_err(|e| Error::usage(format!("invalid config: {e}")))?;
        for (name, path) in [
            ("activation_stream", &self.activation_stream),
            ("patch_store", &self.patch_store),
        ] {
            if let Some(p) = path {
                let resolved = self.resolve(p);
                if !resolved.exists() {
                    return fail(&format!("{name} {} does not exist", resolved.display()));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. Paths enter as written, so the
    /// hash does not depend on where the run directory lives.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
