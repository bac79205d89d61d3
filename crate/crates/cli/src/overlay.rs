//! B-scan overlay panels: input, truth, U-Net, U-Net+CDAE from left to right.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use octseg::volume::{PED, RETINA};
use octseg::{LabelMap, Volume};

/// Retina overlay colour.
pub const RETINA_RGB: [u8; 3] = [255, 0, 0];
/// PED overlay colour.
pub const PED_RGB: [u8; 3] = [0, 255, 0];
/// Label colour weight in the blend with the grey background.
pub const OVERLAY_ALPHA: f64 = 0.5;
const GAP: u32 = 4;
/// Narrow volumes are stretched laterally to at least this many pixels per panel.
const MIN_PANEL_WIDTH: u32 = 128;

/// B-scan index showing the most reference PED, or the central one without PED.
pub fn pick_bscan(truth: &LabelMap) -> usize {
    let dims = truth.dims();
    let per_slice: Vec<usize> = (0..dims.d)
        .map(|d| (0..dims.h).flat_map(|h| (0..dims.w).map(move |w| (w, h))).filter(|&(w, h)| truth.get(w, h, d) == PED).count())
        .collect();
    match per_slice.iter().enumerate().max_by_key(|&(d, &n)| (n, std::cmp::Reverse(d))) {
        Some((d, &n)) if n > 0 => d,
        _ => dims.d / 2,
    }
}

fn grey(v: &Volume<f32>, d: usize) -> Vec<u8> {
    let dims = v.dims();
    let slice: Vec<f32> = (0..dims.h).flat_map(|h| (0..dims.w).map(move |w| (w, h))).map(|(w, h)| v.get(w, h, d)).collect();
    let (lo, hi) = slice.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    slice.iter().map(|&x| (((x - lo) / range) * 255.0).round() as u8).collect()
}

/// Writes one PNG with the four panels of B-scan `d`. Panels are H tall and W (times an
/// integer stretch for narrow volumes) wide.
pub fn write_overlay(path: &Path, input: &Volume<f32>, panels: &[Option<&LabelMap>; 3], d: usize) -> Result<()> {
    let dims = input.dims();
    let (w, h) = (dims.w as u32, dims.h as u32);
    let sx = (MIN_PANEL_WIDTH / w).max(1);
    let pw = w * sx;
    let bg = grey(input, d);
    let mut img = RgbImage::from_pixel(4 * pw + 3 * GAP, h, Rgb([0, 0, 0]));
    for (p, labels) in std::iter::once(None).chain(panels.iter().copied()).enumerate() {
        let x0 = p as u32 * (pw + GAP);
        for y in 0..h {
            for x in 0..w {
                let g = bg[(y * w + x) as usize];
                let colour = labels.and_then(|l| match l.get(x as usize, y as usize, d) {
                    RETINA => Some(RETINA_RGB),
                    PED => Some(PED_RGB),
                    _ => None,
                });
                let px = match colour {
                    Some(c) => c.map(|ch| ((1.0 - OVERLAY_ALPHA) * f64::from(g) + OVERLAY_ALPHA * f64::from(ch)).round() as u8),
                    None => [g; 3],
                };
                for k in 0..sx {
                    img.put_pixel(x0 + x * sx + k, y, Rgb(px));
                }
            }
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
