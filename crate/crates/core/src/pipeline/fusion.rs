use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Cdae, Tensor, VolumetricNet};
use crate::scalar::Scalar;
use crate::volume::{BinaryShape, Dims3, LabelMap, BACKGROUND, PED, RETINA};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionOptions {
    /// PED components (6-connected) smaller than this many voxels are ignored when
    /// deciding whether a volume has PED. 0 keeps every component.
    pub min_ped_blob: usize,
}

#[derive(Debug, Clone)]
pub struct FusionResult {
    pub labels: LabelMap,
    /// Whether the segmentation had PED (after the optional blob filter).
    pub ped_present_in_unet: bool,
    /// PED columns whose lower boundary the refined shape pushed deeper.
    pub columns_extended: usize,
}

/// Runs the autoencoder on a binary shape and thresholds the foreground channel.
pub fn refine<T: Scalar>(cdae: &Cdae<T>, shape: &BinaryShape) -> Result<BinaryShape> {
    let grid = cdae.config().input_shape;
    if shape.dims() != grid {
        return Err(Error::Argument(format!("shape grid {} does not match the autoencoder grid {grid}", shape.dims())));
    }
    let x = Tensor::from_vec(1, 1, grid, shape.data().iter().map(|&v| T::c(f64::from(v))).collect())?;
    let y = cdae.forward(&x)?;
    let (bg, fg) = (y.channel(0, 0), y.channel(0, 1));
    let data = bg.iter().zip(fg).map(|(b, f)| u8::from(f > b)).collect();
    BinaryShape::new(grid, shape.spacing(), data)
}

fn component_sizes_filter(labels: &[u8], dims: Dims3, class_id: u8, min: usize) -> Vec<bool> {
    let mut keep = labels.iter().map(|&l| l == class_id).collect::<Vec<_>>();
    if min <= 1 {
        return keep;
    }
    let mut seen = vec![false; labels.len()];
    let mut stack = Vec::new();
    let mut comp = Vec::new();
    for start in 0..labels.len() {
        if !keep[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        comp.clear();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (w, h, d) = dims.coords(i);
            let mut visit = |j: usize| {
                if keep[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if w > 0 {
                visit(i - 1);
            }
            if w + 1 < dims.w {
                visit(i + 1);
            }
            if h > 0 {
                visit(i - dims.w);
            }
            if h + 1 < dims.h {
                visit(i + dims.w);
            }
            if d > 0 {
                visit(i - dims.w * dims.h);
            }
            if d + 1 < dims.d {
                visit(i + dims.w * dims.h);
            }
        }
        if comp.len() < min {
            for &i in &comp {
                keep[i] = false;
            }
        }
    }
    keep
}

/// Deepest row of `mask` in column `(w, d)`.
fn lower_boundary(mask: impl Fn(usize) -> bool, dims: Dims3, w: usize, d: usize) -> Option<usize> {
    (0..dims.h).rev().find(|&h| mask(dims.index(w, h, d)))
}

/// Combines the segmentation with its refined total-retina shape.
///
/// Without PED the refined shape becomes the retina. Otherwise voxels outside the
/// refined shape are cleared, predicted retina and PED inside it are kept, and
/// voxels the refinement adds are labelled PED below a column's deepest PED voxel
/// and retina elsewhere.
pub fn fuse(pred: &LabelMap, refined: &BinaryShape, opts: &FusionOptions) -> Result<FusionResult> {
    let dims = pred.dims();
    if refined.dims() != dims {
        return Err(Error::Argument(format!("refined grid {} vs prediction grid {dims}", refined.dims())));
    }
    let p = pred.data();
    let r = refined.data();
    let ped = component_sizes_filter(p, dims, PED, opts.min_ped_blob);
    if !ped.iter().any(|&x| x) {
        let data = r.iter().map(|&x| if x == 1 { RETINA } else { BACKGROUND }).collect();
        return Ok(FusionResult { labels: LabelMap::new(dims, pred.spacing(), data)?, ped_present_in_unet: false, columns_extended: 0 });
    }
    let mut out = vec![BACKGROUND; dims.len()];
    let mut columns_extended = 0;
    for d in 0..dims.d {
        for w in 0..dims.w {
            let ped_hi = lower_boundary(|i| p[i] == PED, dims, w, d);
            if ped_hi.is_some() {
                let before = lower_boundary(|i| p[i] != BACKGROUND, dims, w, d);
                let after = lower_boundary(|i| r[i] == 1, dims, w, d);
                if after > before {
                    columns_extended += 1;
                }
            }
            for h in 0..dims.h {
                let i = dims.index(w, h, d);
                if r[i] == 0 {
                    continue;
                }
                out[i] = match p[i] {
                    BACKGROUND => match ped_hi {
                        Some(hi) if h > hi => PED,
                        _ => RETINA,
                    },
                    l => l,
                };
            }
        }
    }
    Ok(FusionResult { labels: LabelMap::new(dims, pred.spacing(), out)?, ped_present_in_unet: true, columns_extended })
}
