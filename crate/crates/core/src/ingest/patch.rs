//! Patch store access and patch geometry.
//!
//! Store layout: `<root>/layer_<L>/neuron_<N>/rank_<RRR>.png`, RGB PNG,
//! ranks zero-padded to three digits.

use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};

pub const DEFAULT_PATCH_SIDE: u32 = 64;

/// Row-major 8-bit RGB patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Patch {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != (width * height * 3) as usize {
            return Err(Error::data(format!(
                "patch buffer has {} bytes, expected {}x{}x3",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn get(&self, row: u32, col: u32, channel: usize) -> u8 {
        self.pixels[((row * self.width + col) * 3) as usize + channel]
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    /// Bilinear resample with half-pixel centre alignment and edge clamping.
    /// Same-size input is returned unchanged.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> Patch {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let mut pixels = Vec::with_capacity((width * height * 3) as usize);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y0 = fy.floor() as u32;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x0 = fx.floor() as u32;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                for c in 0..3 {
                    let top =
                        self.get(y0, x0, c) as f64 * (1.0 - tx) + self.get(y0, x1, c) as f64 * tx;
                    let bottom =
                        self.get(y1, x0, c) as f64 * (1.0 - tx) + self.get(y1, x1, c) as f64 * tx;
                    let v = top * (1.0 - ty) + bottom * ty;
                    pixels.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Patch {
            width,
            height,
            pixels,
        }
    }
}

impl From<RgbImage> for Patch {
    fn from(img: RgbImage) -> Self {
        Patch {
            width: img.width(),
            height: img.height(),
            pixels: img.into_raw(),
        }
    }
}

pub fn patch_path(root: &Path, layer_index: u16, neuron_id: u32, rank: usize) -> PathBuf {
    root.join(format!("layer_{layer_index}"))
        .join(format!("neuron_{neuron_id}"))
        .join(format!("rank_{rank:03}.png"))
}

pub fn save_patch(
    root: &Path,
    layer_index: u16,
    neuron_id: u32,
    rank: usize,
    patch: &Patch,
) -> Result<()> {
    let path = patch_path(root, layer_index, neuron_id, rank);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    patch.to_image().save(&path).map_err(|e| Error::Image {
        path: path.clone(),
        message: e.to_string(),
    })
}

/// Loads ranks `0..count` of one neuron, resized to `side x side`, in rank order.
pub fn load_patch_set(
    root: &Path,
    layer_index: u16,
    neuron_id: u32,
    count: usize,
    side: u32,
) -> Result<Vec<Patch>> {
    if side == 0 {
        return Err(Error::usage("patch side must be positive"));
    }
    let paths: Vec<PathBuf> = (0..count)
        .map(|r| patch_path(root, layer_index, neuron_id, r))
        .collect();
    let missing: Vec<String> = paths
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.is_file())
        .map(|(r, _)| r.to_string())
        .collect();
    if !missing.is_empty() {
        let noun = if missing.len() == 1 { "rank" } else { "ranks" };
        return Err(Error::data(format!(
            "layer {layer_index} neuron {neuron_id}: missing {noun} {}",
            missing.join(", ")
        )));
    }
    paths
        .iter()
        .map(|path| {
            let img = image::open(path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
            Ok(Patch::from(img.to_rgb8()).resize_bilinear(side, side))
        })
        .collect()
}

/// Input-image coordinate of the centre of a feature-map position.
pub fn input_center(loc: u32, rf_stride: u32, rf_offset: f64) -> f64 {
    loc as f64 * rf_stride as f64 + rf_offset
}

/// Cuts a `size x size` window centred at (`center_row`, `center_col`) out of
/// `image`; pixels outside the image are zero.
pub fn cut_patch(image: &Patch, center_row: f64, center_col: f64, size: u32) -> Patch {
    let half = (size as f64 - 1.0) / 2.0;
    let top = (center_row - half).round() as i64;
    let left = (center_col - half).round() as i64;
    let mut pixels = vec![0u8; (size * size * 3) as usize];
    for r in 0..size as i64 {
        let sr = top + r;
        if sr < 0 || sr >= image.height as i64 {
            continue;
        }
        for c in 0..size as i64 {
            let sc = left + c;
            if sc < 0 || sc >= image.width as i64 {
                continue;
            }
            let dst = ((r * size as i64 + c) * 3) as usize;
            let src = ((sr * image.width as i64 + sc) * 3) as usize;
            pixels[dst..dst + 3].copy_from_slice(&image.pixels[src..src + 3]);
        }
    }
    Patch {
        width: size,
        height: size,
        pixels,
    }
}
