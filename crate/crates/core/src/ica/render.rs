//! Rendering basis images to 8-bit pixels.
//!
//! Four modes:
//! - `Gray`: luma components, each mapped on its own range.
//! - `RgbLinear`: per-channel components, each channel of each component
//!   mapped on its own range, stacked as RGB.
//! - `RgbAsinh`: per-channel components stacked after arcsinh compression of
//!   their joint intensity (softening 5).
//! - `U8Global`: one affine map shared by every component (and channel),
//!   rounded to u8; values already inside [0, 255] are kept as they are.
//!
//! Per-component maps send `[min, max]` onto `[1, 255]` with the midpoint at
//! 128, so a component symmetric about zero renders symmetric about 128 and a
//! constant component renders uniform 128.

use std::fmt;
use std::str::FromStr;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::IcaBasis;
use crate::error::{Error, Result};

pub const ASINH_SOFTENING: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    Gray,
    RgbLinear,
    RgbAsinh,
    U8Global,
}

impl RenderMode {
    pub const ALL: [RenderMode; 4] = [
        RenderMode::Gray,
        RenderMode::RgbLinear,
        RenderMode::RgbAsinh,
        RenderMode::U8Global,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RenderMode::Gray => "gray",
            RenderMode::RgbLinear => "rgb_linear",
            RenderMode::RgbAsinh => "rgb_asinh",
            RenderMode::U8Global => "u8_global",
        }
    }
}

impl fmt::Display for RenderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RenderMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::usage(format!("unknown render mode `{s}`")))
    }
}

/// `k` basis images of `side * side` values each, for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    pub side: u32,
    pub components: Vec<Vec<f64>>,
}

impl From<&IcaBasis> for ComponentSet {
    fn from(basis: &IcaBasis) -> Self {
        ComponentSet {
            side: basis.side,
            components: basis.component_vectors(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum RenderInput<'a> {
    Gray(&'a ComponentSet),
    Rgb([&'a ComponentSet; 3]),
}

/// Row-major 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedImage {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl RenderedImage {
    pub fn to_dynamic(&self) -> image::DynamicImage {
        match self.channels {
            1 => GrayImage::from_raw(self.width, self.height, self.pixels.clone())
                .expect("buffer sized at render time")
                .into(),
            _ => RgbImage::from_raw(self.width, self.height, self.pixels.clone())
                .expect("buffer sized at render time")
                .into(),
        }
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        self.to_dynamic().save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// `[min, max]` onto `[1, 255]`, midpoint at 128; constant input gives 128.
pub fn map_centered(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = min_max(values.iter().copied());
    if !(hi > lo) {
        return vec![128; values.len()];
    }
    let center = (hi + lo) / 2.0;
    let half = (hi - lo) / 2.0;
    values
        .iter()
        .map(|v| (128.0 + (127.0 * (v - center) / half).round()).clamp(1.0, 255.0) as u8)
        .collect()
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn interleave(channels: &[Vec<u8>; 3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(channels[0].len() * 3);
    for ((r, g), b) in channels[0].iter().zip(&channels[1]).zip(&channels[2]) {
        out.extend([*r, *g, *b]);
    }
    out
}

fn asinh_stack(channels: [&[f64]; 3]) -> Vec<u8> {
    let len = channels[0].len();
    let (lo, hi) = min_max(channels.iter().flat_map(|c| c.iter().copied()));
    if !(hi > lo) {
        return vec![128; len * 3];
    }
    let span = hi - lo;
    let mut scaled = Vec::with_capacity(len * 3);
    for ((r, g), b) in channels[0].iter().zip(channels[1]).zip(channels[2]) {
        let x = [(r - lo) / span, (g - lo) / span, (b - lo) / span];
        let intensity = (x[0] + x[1] + x[2]) / 3.0;
        let factor = if intensity > 0.0 {
            (ASINH_SOFTENING * intensity).asinh() / (ASINH_SOFTENING * intensity)
        } else {
            1.0
        };
        scaled.extend(x.iter().map(|v| v * factor));
    }
    let peak = scaled.iter().copied().fold(0.0, f64::max);
    scaled
        .into_iter()
        .map(|v| {
            if peak > 0.0 {
                to_u8(255.0 * v / peak)
            } else {
                0
            }
        })
        .collect()
}

fn check_compatible(sets: &[&ComponentSet]) -> Result<(usize, u32)> {
    let first = sets[0];
    let k = first.components.len();
    for set in sets {
        if set.components.len() != k || set.side != first.side {
            return Err(Error::usage(format!(
                "channel bases disagree: k {} vs {}, side {} vs {}",
                set.components.len(),
                k,
                set.side,
                first.side
            )));
        }
        let d = (set.side * set.side) as usize;
        if set.components.iter().any(|c| c.len() != d) {
            return Err(Error::usage("component length does not match side x side"));
        }
    }
    if k == 0 {
        return Err(Error::usage("nothing to render"));
    }
    Ok((k, first.side))
}

/// Renders every component of `input` in `mode`.
pub fn components_to_images(
    input: RenderInput<'_>,
    mode: RenderMode,
) -> Result<Vec<RenderedImage>> {
    let sets: Vec<&ComponentSet> = match input {
        RenderInput::Gray(b) => vec![b],
        RenderInput::Rgb(bs) => bs.to_vec(),
    };
    let (k, side) = check_compatible(&sets)?;
    let comps: Vec<&Vec<Vec<f64>>> = sets.iter().map(|s| &s.components).collect();
    let channels = comps.len();
    let images = match (mode, channels) {
        (RenderMode::Gray, 1) => comps[0]
            .iter()
            .map(|c| RenderedImage {
                width: side,
                height: side,
                channels: 1,
                pixels: map_centered(c),
            })
            .collect(),
        (RenderMode::RgbLinear, 3) => (0..k)
            .map(|r| RenderedImage {
                width: side,
                height: side,
                channels: 3,
                pixels: interleave(&[
                    map_centered(&comps[0][r]),
                    map_centered(&comps[1][r]),
                    map_centered(&comps[2][r]),
                ]),
            })
            .collect(),
        (RenderMode::RgbAsinh, 3) => (0..k)
            .map(|r| RenderedImage {
                width: side,
                height: side,
                channels: 3,
                pixels: asinh_stack([&comps[0][r], &comps[1][r], &comps[2][r]]),
            })
            .collect(),
        (RenderMode::U8Global, _) => {
            let (lo, hi) = min_max(comps.iter().copied().flatten().flatten().copied());
            let map = |v: f64| -> u8 {
                if lo >= 0.0 && hi <= 255.0 {
                    to_u8(v)
                } else if hi > lo {
                    to_u8(255.0 * (v - lo) / (hi - lo))
                } else {
                    128
                }
            };
            (0..k)
                .map(|r| {
                    let mapped: Vec<Vec<u8>> = comps
                        .iter()
                        .map(|ch| ch[r].iter().map(|&v| map(v)).collect())
                        .collect();
                    let pixels = if channels == 1 {
                        mapped.into_iter().next().unwrap()
                    } else {
                        interleave(&[mapped[0].clone(), mapped[1].clone(), mapped[2].clone()])
                    };
                    RenderedImage {
                        width: side,
                        height: side,
                        channels,
                        pixels,
                    }
                })
                .collect()
        }
        (mode, n) => {
            return Err(Error::usage(format!(
                "render mode {mode} cannot take {n}-channel input"
            )))
        }
    };
    Ok(images)
}

/// Lays images out left to right with a 2-pixel white gutter.
pub fn grid(images: &[RenderedImage]) -> Result<RenderedImage> {
    const GUTTER: u32 = 2;
    let first = images
        .first()
        .ok_or_else(|| Error::usage("empty image grid"))?;
    let (w, h, ch) = (first.width, first.height, first.channels);
    if images
        .iter()
        .any(|im| im.width != w || im.height != h || im.channels != ch)
    {
        return Err(Error::usage("grid tiles differ in size or channels"));
    }
    let k = images.len() as u32;
    let width = k * w + (k - 1) * GUTTER;
    let row_len = w as usize * ch;
    let mut pixels = vec![255u8; (width * h) as usize * ch];
    for (t, im) in images.iter().enumerate() {
        let x0 = t as u32 * (w + GUTTER);
        for y in 0..h {
            let dst = ((y * width + x0) as usize) * ch;
            let src = y as usize * row_len;
            pixels[dst..dst + row_len].copy_from_slice(&im.pixels[src..src + row_len]);
        }
    }
    Ok(RenderedImage {
        width,
        height: h,
        channels: ch,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(side: u32, components: Vec<Vec<f64>>) -> ComponentSet {
        ComponentSet { side, components }
    }

    #[test]
    fn constant_zero_is_mid_gray() {
        let s = set(2, vec![vec![0.0; 4], vec![3.5; 4]]);
        let out = components_to_images(RenderInput::Gray(&s), RenderMode::Gray).unwrap();
        assert!(out.iter().all(|im| im.pixels == vec![128; 4]));
        let rgb =
            components_to_images(RenderInput::Rgb([&s, &s, &s]), RenderMode::RgbLinear).unwrap();
        assert_eq!(rgb[0].pixels, vec![128; 12]);
        let asinh =
            components_to_images(RenderInput::Rgb([&s, &s, &s]), RenderMode::RgbAsinh).unwrap();
        assert_eq!(asinh[0].pixels, vec![128; 12]);
    }

    #[test]
    fn symmetric_component_is_symmetric_about_128() {
        let a = 0.731;
        let c = vec![-a, -0.3, -0.1, 0.0, 0.1, 0.3, a, 0.25, -0.25];
        let out = components_to_images(
            RenderInput::Gray(&set(3, vec![c.clone()])),
            RenderMode::Gray,
        )
        .unwrap();
        let px = &out[0].pixels;
        assert_eq!(px[0], 1);
        assert_eq!(px[6], 255);
        assert_eq!(px[3], 128);
        for (i, j) in [(1, 5), (2, 4), (7, 8)] {
            assert_eq!(px[i] as u16 + px[j] as u16, 256);
        }
    }

    #[test]
    fn shapes_per_mode() {
        let k = 8;
        let side = 5;
        let comps: Vec<Vec<f64>> = (0..k)
            .map(|r| (0..25).map(|i| ((i * (r + 1)) as f64).sin()).collect())
            .collect();
        let g = set(side, comps.clone());
        for mode in RenderMode::ALL {
            let input = if mode == RenderMode::Gray {
                RenderInput::Gray(&g)
            } else {
                RenderInput::Rgb([&g, &g, &g])
            };
            let out = components_to_images(input, mode).unwrap();
            assert_eq!(out.len(), k);
            let ch = if mode == RenderMode::Gray { 1 } else { 3 };
            for im in &out {
                assert_eq!(
                    (im.width, im.height, im.channels, im.pixels.len()),
                    (side, side, ch, 25 * ch)
                );
            }
        }
        let grid_img =
            grid(&components_to_images(RenderInput::Gray(&g), RenderMode::Gray).unwrap()).unwrap();
        assert_eq!((grid_img.width, grid_img.height), (8 * 5 + 7 * 2, 5));
    }

    #[test]
    fn u8_global_is_identity_on_byte_values() {
        let comps: Vec<Vec<f64>> = (0..3)
            .map(|r| (0..16).map(|i| ((i * 37 + r * 11) % 256) as f64).collect())
            .collect();
        let g = set(4, comps.clone());
        let out = components_to_images(RenderInput::Gray(&g), RenderMode::U8Global).unwrap();
        for (im, c) in out.iter().zip(&comps) {
            assert_eq!(im.pixels, c.iter().map(|&v| v as u8).collect::<Vec<_>>());
        }
        // out-of-range values share a single map
        let wide = set(1, vec![vec![-1.0], vec![3.0]]);
        let out = components_to_images(RenderInput::Gray(&wide), RenderMode::U8Global).unwrap();
        assert_eq!((out[0].pixels[0], out[1].pixels[0]), (0, 255));
    }

    #[test]
    fn incompatible_inputs_rejected() {
        let a = set(2, vec![vec![0.0; 4]; 8]);
        let b = set(2, vec![vec![0.0; 4]; 7]);
        assert!(
            components_to_images(RenderInput::Rgb([&a, &a, &b]), RenderMode::RgbLinear).is_err()
        );
        assert!(components_to_images(RenderInput::Gray(&a), RenderMode::RgbAsinh).is_err());
        assert!(components_to_images(RenderInput::Rgb([&a, &a, &a]), RenderMode::Gray).is_err());
        assert!("rgb_asinh".parse::<RenderMode>().is_ok());
        assert!("sepia".parse::<RenderMode>().is_err());
    }
}
