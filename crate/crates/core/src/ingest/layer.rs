//! Convolutional layer tables and receptive-field geometry.
//!
//! Receptive fields follow the usual recursion over a chain of sliding-window
//! operations. Starting from a single input pixel (`size = 1`, `jump = 1`,
//! `start = 0`), every op with kernel `k`, stride `s` and padding `p` updates
//!
//! ```text
//! size'  = size + (k - 1) * jump
//! start' = start + ((k - 1) / 2 - p) * jump
//! jump'  = jump * s
//! ```
//!
//! `start` is the input coordinate (pixel-centre convention, pixel 0 at 0.0)
//! of the centre of feature-map position 0, so a feature-map location `loc`
//! maps to the input coordinate `loc * jump + start`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry and size of one convolutional layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// 1-based ordinal over conv layers.
    pub layer_index: u16,
    pub block: u16,
    pub neuron_count: u32,
    pub rf_size: u32,
    pub rf_stride: u32,
    pub rf_offset: f64,
}

/// One sliding-window stage of a network trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerOp {
    Conv {
        kernel: u32,
        stride: u32,
        padding: u32,
        channels: u32,
    },
    Pool {
        kernel: u32,
        stride: u32,
        padding: u32,
    },
}

impl LayerOp {
    fn window(&self) -> (u32, u32, u32) {
        match *self {
            LayerOp::Conv {
                kernel,
                stride,
                padding,
                ..
            } => (kernel, stride, padding),
            LayerOp::Pool {
                kernel,
                stride,
                padding,
            } => (kernel, stride, padding),
        }
    }
}

/// Named layer tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Vgg16,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "vgg16" => Ok(Preset::Vgg16),
            other => Err(Error::usage(format!("unknown preset `{other}`"))),
        }
    }

    pub fn layers(self) -> Vec<LayerSpec> {
        match self {
            Preset::Vgg16 => layer_table(&vgg16_ops()),
        }
    }
}

/// Blocks of (conv layers, channels); every block ends with a 2x2/2 max pool.
const VGG16_BLOCKS: [(usize, u32); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];

/// The VGG16 feature trunk: 3x3 stride-1 padding-1 convolutions separated by
/// 2x2 stride-2 max pools.
pub fn vgg16_ops() -> Vec<LayerOp> {
    let mut ops = Vec::new();
    for (convs, channels) in VGG16_BLOCKS {
        for _ in 0..convs {
            ops.push(LayerOp::Conv {
                kernel: 3,
                stride: 1,
                padding: 1,
                channels,
            });
        }
        ops.push(LayerOp::Pool {
            kernel: 2,
            stride: 2,
            padding: 0,
        });
    }
    ops
}

/// Walks `ops` and emits one [`LayerSpec`] per convolution. Blocks are
/// delimited by pooling stages.
pub fn layer_table(ops: &[LayerOp]) -> Vec<LayerSpec> {
    let mut size = 1u32;
    let mut jump = 1u32;
    let mut start = 0.0f64;
    let mut block = 1u16;
    let mut layer_index = 0u16;
    let mut out = Vec::new();
    for op in ops {
        let (kernel, stride, padding) = op.window();
        size += (kernel - 1) * jump;
        start += ((kernel as f64 - 1.0) / 2.0 - padding as f64) * jump as f64;
        jump *= stride;
        match *op {
            LayerOp::Conv { channels, .. } => {
                layer_index += 1;
                out.push(LayerSpec {
                    layer_index,
                    block,
                    neuron_count: channels,
                    rf_size: size,
                    rf_stride: jump,
                    rf_offset: start,
                });
            }
            LayerOp::Pool { .. } => block += 1,
        }
    }
    out
}

/// `(rf_size, rf_stride, rf_offset)` of a conv layer in a preset.
pub fn receptive_field(layer_index: u16, preset: Preset) -> Result<(u32, u32, f64)> {
    let layers = preset.layers();
    layers
        .iter()
        .find(|l| l.layer_index == layer_index)
        .map(|l| (l.rf_size, l.rf_stride, l.rf_offset))
        .ok_or_else(|| {
            Error::usage(format!(
                "unknown layer {layer_index} (preset has layers 1..={})",
                layers.len()
            ))
        })
}

/// CSV `layer_index,rf_size,rf_stride,rf_offset` with a header line.
pub fn rf_table_csv(layers: &[LayerSpec]) -> String {
    let mut out = String::from("layer_index,rf_size,rf_stride,rf_offset\n");
    for l in layers {
        out.push_str(&format!(
            "{},{},{},{}\n",
            l.layer_index, l.rf_size, l.rf_stride, l.rf_offset
        ));
    }
    out
}

/// Checks the invariants every layer table must satisfy.
pub fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    let mut prev: Option<&LayerSpec> = None;
    for l in layers {
        if l.neuron_count == 0 || l.rf_size == 0 || l.rf_stride == 0 {
            return Err(Error::data(format!(
                "layer {}: neuron_count, rf_size and rf_stride must be positive",
                l.layer_index
            )));
        }
        if let Some(p) = prev {
            if l.layer_index <= p.layer_index {
                return Err(Error::data(format!(
                    "layer table not strictly ordered at layer {}",
                    l.layer_index
                )));
            }
            if l.rf_size < p.rf_size || l.rf_stride < p.rf_stride {
                return Err(Error::data(format!(
                    "receptive field shrinks at layer {}",
                    l.layer_index
                )));
            }
        }
        prev = Some(l);
    }
    Ok(())
}
