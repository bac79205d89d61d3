//! Volume preprocessing: binarization, axial smoothing, width reduction and grid resampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{BinaryShape, ClassProbabilities, Dims3, LabelMap, Spacing, Volume, BACKGROUND};

/// Anything that can be collapsed to a total-retina mask.
pub trait Binarize {
    fn binarize(&self) -> BinaryShape;
}

impl Binarize for LabelMap {
    fn binarize(&self) -> BinaryShape {
        let data = self.data().iter().map(|&l| u8::from(l != BACKGROUND)).collect();
        BinaryShape::new(self.dims(), self.spacing(), data).expect("label map invariants carry over")
    }
}

impl<T: Scalar> Binarize for ClassProbabilities<T> {
    fn binarize(&self) -> BinaryShape {
        let data = self.argmax().into_iter().map(|c| u8::from(c != BACKGROUND)).collect();
        BinaryShape::new(self.dims(), self.spacing(), data).expect("probability invariants carry over")
    }
}

impl Binarize for BinaryShape {
    fn binarize(&self) -> BinaryShape {
        self.clone()
    }
}

/// Merges PED into retina: argmax (ties to the lowest class) then `{1,2} -> 1`.
pub fn binarize<P: Binarize + ?Sized>(pred: &P) -> BinaryShape {
    pred.binarize()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderPolicy {
    #[default]
    Replicate,
    Zero,
    Periodic,
}

/// Box filter of odd width `k` along the axial (H) axis.
pub fn moving_average_axial<T: Scalar>(v: &Volume<T>, k: usize, border: BorderPolicy) -> Result<Volume<T>> {
    let dims = v.dims();
    if k == 0 || k % 2 == 0 {
        return Err(Error::Argument(format!("moving-average window must be odd and >= 1, got {k}")));
    }
    if k > dims.h {
        return Err(Error::Argument(format!("moving-average window {k} exceeds axial extent {}", dims.h)));
    }
    if k == 1 {
        return Ok(v.clone());
    }
    let r = (k / 2) as isize;
    let hn = dims.h as isize;
    let inv = 1.0 / k as f64;
    let src = v.data();
    let mut out = vec![T::zero(); src.len()];
    let mut column = vec![0.0f64; dims.h];
    for d in 0..dims.d {
        for w in 0..dims.w {
            for h in 0..dims.h {
                column[h] = src[dims.index(w, h, d)].as_f64();
            }
            for h in 0..hn {
                let mut acc = 0.0;
                for o in -r..=r {
                    let j = h + o;
                    acc += if (0..hn).contains(&j) {
                        column[j as usize]
                    } else {
                        match border {
                            BorderPolicy::Replicate => column[j.clamp(0, hn - 1) as usize],
                            BorderPolicy::Zero => 0.0,
                            BorderPolicy::Periodic => column[j.rem_euclid(hn) as usize],
                        }
                    };
                }
                out[dims.index(w, h as usize, d)] = T::c(acc * inv);
            }
        }
    }
    v.with_data(out)
}

/// Mean-pools the W axis by `factor`, cropping `W mod factor` columns first
/// (floor half at the low end, the rest at the high end). The crop is
/// recorded in `meta["width_crop"]` as `low,high`.
pub fn reduce_width<T: Scalar>(v: &Volume<T>, factor: usize) -> Result<Volume<T>> {
    if factor < 1 {
        return Err(Error::Argument("width reduction factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(v.clone());
    }
    let dims = v.dims();
    if dims.w < factor {
        return Err(Error::Argument(format!("width {} is smaller than factor {factor}", dims.w)));
    }
    let rem = dims.w % factor;
    let lo = rem / 2;
    let hi = rem - lo;
    let out_dims = Dims3::new((dims.w - rem) / factor, dims.h, dims.d);
    let mut out = Vec::with_capacity(out_dims.len());
    let inv = 1.0 / factor as f64;
    for d in 0..dims.d {
        for h in 0..dims.h {
            for ow in 0..out_dims.w {
                let base = lo + ow * factor;
                let s: f64 = (base..base + factor).map(|w| v.get(w, h, d).as_f64()).sum();
                out.push(T::c(s * inv));
            }
        }
    }
    let sp = v.spacing();
    let mut r = Volume::new(out_dims, Spacing::new(sp.w * factor as f64, sp.h, sp.d), out)?;
    r.meta = v.meta.clone();
    r.meta.insert("width_crop".into(), format!("{lo},{hi}"));
    r.meta.insert("width_reduction".into(), factor.to_string());
    Ok(r)
}

/// Source coordinate of output sample `o` when mapping `n_in` samples onto `n_out` (pixel-centre aligned).
#[inline]
fn source_coord(o: usize, n_in: usize, n_out: usize) -> f64 {
    let s = (o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
    s.clamp(0.0, (n_in - 1) as f64)
}

fn resampled_spacing(sp: Spacing, from: Dims3, to: Dims3) -> Spacing {
    Spacing::new(
        sp.w * from.w as f64 / to.w as f64,
        sp.h * from.h as f64 / to.h as f64,
        sp.d * from.d as f64 / to.d as f64,
    )
}

/// Trilinear resampling onto `to`; the physical extent is preserved, so spacing changes.
pub fn resample_volume<T: Scalar>(v: &Volume<T>, to: Dims3) -> Result<Volume<T>> {
    let from = v.dims();
    if to.is_empty() {
        return Err(Error::Argument("target grid must be non-empty".into()));
    }
    if from == to {
        return Ok(v.clone());
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let s = source_coord(o, n_in, n_out);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let (aw, ah, ad) = (axis(from.w, to.w), axis(from.h, to.h), axis(from.d, to.d));
    let mut out = Vec::with_capacity(to.len());
    for &(d0, d1, fd) in &ad {
        for &(h0, h1, fh) in &ah {
            for &(w0, w1, fw) in &aw {
                let g = |w, h, d| v.get(w, h, d).as_f64();
                let c00 = g(w0, h0, d0) * (1.0 - fw) + g(w1, h0, d0) * fw;
                let c10 = g(w0, h1, d0) * (1.0 - fw) + g(w1, h1, d0) * fw;
                let c01 = g(w0, h0, d1) * (1.0 - fw) + g(w1, h0, d1) * fw;
                let c11 = g(w0, h1, d1) * (1.0 - fw) + g(w1, h1, d1) * fw;
                let c0 = c00 * (1.0 - fh) + c10 * fh;
                let c1 = c01 * (1.0 - fh) + c11 * fh;
                out.push(T::c(c0 * (1.0 - fd) + c1 * fd));
            }
        }
    }
    let mut r = Volume::new(to, resampled_spacing(v.spacing(), from, to), out)?;
    r.meta = v.meta.clone();
    Ok(r)
}

fn nearest_indices(n_in: usize, n_out: usize) -> Vec<usize> {
    (0..n_out).map(|o| (source_coord(o, n_in, n_out) + 0.5).floor().min((n_in - 1) as f64) as usize).collect()
}

/// Nearest-neighbour resampling of labels onto `to`.
pub fn resample_labels(l: &LabelMap, to: Dims3) -> Result<LabelMap> {
    let from = l.dims();
    if to.is_empty() {
        return Err(Error::Argument("target grid must be non-empty".into()));
    }
    if from == to {
        return Ok(l.clone());
    }
    let (iw, ih, id) = (nearest_indices(from.w, to.w), nearest_indices(from.h, to.h), nearest_indices(from.d, to.d));
    let mut out = Vec::with_capacity(to.len());
    for &d in &id {
        for &h in &ih {
            for &w in &iw {
                out.push(l.get(w, h, d));
            }
        }
    }
    LabelMap::new(to, resampled_spacing(l.spacing(), from, to), out)
}

/// Zero-mean, unit-variance intensities (unit variance skipped for constant volumes).
pub fn standardize<T: Scalar>(v: &Volume<T>) -> Volume<T> {
    let mean = v.mean();
    let n = v.data().len().max(1) as f64;
    let var = v.data().iter().map(|x| (x.as_f64() - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
    let data = v.data().iter().map(|x| T::c((x.as_f64() - mean) * inv)).collect();
    v.with_data(data).expect("finite by construction")
}
