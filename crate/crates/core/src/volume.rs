//! Volumetric domain types.
//!
//! Axis convention used everywhere: `W` is the fast lateral axis, `H` the axial
//! (A-scan depth) axis and `D` the slow lateral axis. Voxel storage is
//! W-fastest: `index = (d * H + h) * W + w`, matching the order NRRD lists sizes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BACKGROUND: u8 = 0;
pub const RETINA: u8 = 1;
pub const PED: u8 = 2;
pub const NUM_CLASSES: usize = 3;

/// Grid extent in voxels, `(W, H, D)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims3 {
    pub w: usize,
    pub h: usize,
    pub d: usize,
}

impl Dims3 {
    pub const fn new(w: usize, h: usize, d: usize) -> Self {
        Self { w, h, d }
    }

    pub fn len(&self) -> usize {
        self.w * self.h * self.d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, w: usize, h: usize, d: usize) -> usize {
        (d * self.h + h) * self.w + w
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let w = idx % self.w;
        let rest = idx / self.w;
        (w, rest % self.h, rest / self.h)
    }

    /// Axis sizes ordered slowest to fastest, `[D, H, W]`.
    pub fn zyx(&self) -> [usize; 3] {
        [self.d, self.h, self.w]
    }

    pub fn from_zyx(z: [usize; 3]) -> Self {
        Self { w: z[2], h: z[1], d: z[0] }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.w, self.h, self.d]
    }
}

impl std::fmt::Display for Dims3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.w, self.h, self.d)
    }
}

/// Physical voxel size in micrometres, `(s_W, s_H, s_D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub w: f64,
    pub h: f64,
    pub d: f64,
}

impl Spacing {
    pub const fn new(w: f64, h: f64, d: f64) -> Self {
        Self { w, h, d }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("W", self.w), ("H", self.h), ("D", self.d)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("spacing along {name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { w: self.w * k, h: self.h * k, d: self.d * k }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.w, self.h, self.d]
    }
}

/// Acquisition grid of the imaging device: 6.4 μm (W), 9.1 μm axial, 12.8 μm (D).
pub const DEVICE_SPACING: Spacing = Spacing::new(6.4, 9.1, 12.8);
/// Acquisition grid extent in voxels.
pub const DEVICE_DIMS: Dims3 = Dims3::new(250, 496, 140);
/// Network grid used by the autoencoder and, by default, the whole pipeline.
pub const NETWORK_DIMS: Dims3 = Dims3::new(96, 256, 32);

pub type Meta = BTreeMap<String, String>;

/// Scalar intensity volume with spacing and free-form provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: Dims3,
    spacing: Spacing,
    data: Vec<T>,
    pub meta: Meta,
}

impl<T: Scalar> Volume<T> {
    pub fn new(dims: Dims3, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Validation(format!(
                "volume data has {} voxels, dims {} require {}",
                data.len(),
                dims,
                dims.len()
            )));
        }
        spacing.validate()?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite intensity at voxel {i}")));
        }
        Ok(Self { dims, spacing, data, meta: Meta::new() })
    }

    pub fn filled(dims: Dims3, spacing: Spacing, value: T) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access; callers must keep intensities finite.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, w: usize, h: usize, d: usize) -> T {
        self.data[self.dims.index(w, h, d)]
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v.as_f64()).sum::<f64>() / self.data.len() as f64
    }

    /// Same grid, different values.
    pub fn with_data(&self, data: Vec<T>) -> Result<Self> {
        let mut v = Self::new(self.dims, self.spacing, data)?;
        v.meta = self.meta.clone();
        Ok(v)
    }

    pub fn cast<U: Scalar>(&self) -> Volume<U> {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            meta: self.meta.clone(),
        }
    }
}

/// Hard per-voxel class labels (0 background, 1 retina, 2 PED).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    dims: Dims3,
    spacing: Spacing,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: Dims3, spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Validation(format!(
                "label data has {} voxels, dims {} require {}",
                data.len(),
                dims,
                dims.len()
            )));
        }
        spacing.validate()?;
        if let Some(i) = data.iter().position(|&v| v as usize >= NUM_CLASSES) {
            return Err(Error::Validation(format!("label {} at voxel {i} is not a class id", data[i])));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn background(dims: Dims3, spacing: Spacing) -> Self {
        Self { dims, spacing, data: vec![BACKGROUND; dims.len()] }
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, w: usize, h: usize, d: usize) -> u8 {
        self.data[self.dims.index(w, h, d)]
    }

    #[inline]
    pub fn set(&mut self, w: usize, h: usize, d: usize, label: u8) {
        assert!((label as usize) < NUM_CLASSES, "label {label} out of range");
        let i = self.dims.index(w, h, d);
        self.data[i] = label;
    }

    pub fn count(&self, class_id: u8) -> usize {
        self.data.iter().filter(|&&v| v == class_id).count()
    }

    pub fn histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for &v in &self.data {
            h[v as usize] += 1;
        }
        h
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Result<Self> {
        spacing.validate()?;
        self.spacing = spacing;
        Ok(self)
    }
}

/// Binary total-retina mask (PED merged into the retina).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryShape {
    dims: Dims3,
    spacing: Spacing,
    data: Vec<u8>,
}

impl BinaryShape {
    pub fn new(dims: Dims3, spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Validation(format!(
                "shape data has {} voxels, dims {} require {}",
                data.len(),
                dims,
                dims.len()
            )));
        }
        spacing.validate()?;
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Validation("binary shape values must be 0 or 1".into()));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn empty(dims: Dims3, spacing: Spacing) -> Self {
        Self { dims, spacing, data: vec![0; dims.len()] }
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, w: usize, h: usize, d: usize) -> bool {
        self.data[self.dims.index(w, h, d)] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Retina labels (1) where set, background elsewhere.
    pub fn to_label_map(&self) -> LabelMap {
        LabelMap { dims: self.dims, spacing: self.spacing, data: self.data.clone() }
    }
}

/// Per-voxel class probabilities, channels first: `(C, W, H, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities<T> {
    classes: usize,
    dims: Dims3,
    spacing: Spacing,
    data: Vec<T>,
}

impl<T: Scalar> ClassProbabilities<T> {
    pub const SUM_TOLERANCE: f64 = 1e-5;

    pub fn new(classes: usize, dims: Dims3, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        if classes == 0 || data.len() != classes * dims.len() {
            return Err(Error::Validation(format!(
                "probability data has {} entries, expected {} classes x {} voxels",
                data.len(),
                classes,
                dims.len()
            )));
        }
        spacing.validate()?;
        let n = dims.len();
        for v in 0..n {
            let mut s = 0.0;
            for c in 0..classes {
                let p = data[c * n + v].as_f64();
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Validation(format!("probability {p} outside [0,1] at voxel {v}")));
                }
                s += p;
            }
            if (s - 1.0).abs() > Self::SUM_TOLERANCE {
                return Err(Error::Validation(format!("channel sum {s} != 1 at voxel {v}")));
            }
        }
        Ok(Self { classes, dims, spacing, data })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Per-voxel argmax; ties resolve to the lowest class index.
    pub fn argmax(&self) -> Vec<u8> {
        let n = self.dims.len();
        (0..n)
            .map(|v| {
                let mut best = 0;
                let mut best_p = self.data[v];
                for c in 1..self.classes {
                    let p = self.data[c * n + v];
                    if p > best_p {
                        best = c;
                        best_p = p;
                    }
                }
                best as u8
            })
            .collect()
    }

    /// Hard labels via argmax. Requires at most three channels.
    pub fn to_label_map(&self) -> Result<LabelMap> {
        if self.classes > NUM_CLASSES {
            return Err(Error::Validation(format!("{} channels cannot map onto class ids", self.classes)));
        }
        LabelMap::new(self.dims, self.spacing, self.argmax())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip_is_w_fastest() {
        let d = Dims3::new(4, 3, 2);
        assert_eq!(d.index(1, 0, 0), 1);
        assert_eq!(d.index(0, 1, 0), 4);
        assert_eq!(d.index(0, 0, 1), 12);
        for i in 0..d.len() {
            let (w, h, z) = d.coords(i);
            assert_eq!(d.index(w, h, z), i);
        }
    }

    #[test]
    fn volume_rejects_bad_inputs() {
        let d = Dims3::new(2, 2, 1);
        assert!(Volume::<f32>::new(d, DEVICE_SPACING, vec![0.0; 3]).is_err());
        assert!(Volume::<f32>::new(d, Spacing::new(1.0, 0.0, 1.0), vec![0.0; 4]).is_err());
        assert!(Volume::<f32>::new(d, DEVICE_SPACING, vec![0.0, f32::NAN, 0.0, 0.0]).is_err());
        assert!(LabelMap::new(d, DEVICE_SPACING, vec![0, 1, 2, 3]).is_err());
        assert!(BinaryShape::new(d, DEVICE_SPACING, vec![0, 1, 2, 0]).is_err());
    }

    #[test]
    fn probabilities_validate_sum_and_argmax_ties_take_lowest() {
        let d = Dims3::new(2, 1, 1);
        assert!(ClassProbabilities::new(3, d, DEVICE_SPACING, vec![0.5f64, 0.2, 0.5, 0.3, 0.1, 0.6]).is_err());
        let p = ClassProbabilities::new(3, d, DEVICE_SPACING, vec![0.4f64, 0.2, 0.4, 0.3, 0.2, 0.5]).unwrap();
        assert_eq!(p.argmax(), vec![0, 2]);
    }
}
