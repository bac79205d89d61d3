//! Online augmentation: geometric and intensity transforms for segmentation
//! training, and shape corruption for the denoising autoencoder.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{BinaryShape, Dims3, LabelMap, Spacing, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntensityAugmentSpec {
    /// Probability of mirroring along W.
    pub flip_probability: f64,
    /// Probability of applying a random similarity transform.
    pub similarity_probability: f64,
    /// Rotation about the D axis is drawn from `±rotation_deg`.
    pub rotation_deg: f64,
    pub scale_range: [f64; 2],
    /// Lateral (W and D) translation is drawn from `±translation_voxels`.
    pub translation_voxels: f64,
    /// Probability of a gamma curve `v -> v^γ` on min-max normalized intensities.
    pub gamma_probability: f64,
    pub gamma_range: [f64; 2],
    pub rng_seed: u64,
}

impl Default for IntensityAugmentSpec {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            similarity_probability: 0.5,
            rotation_deg: 5.0,
            scale_range: [0.95, 1.05],
            translation_voxels: 5.0,
            gamma_probability: 0.5,
            gamma_range: [0.7, 1.4],
            rng_seed: 0,
        }
    }
}

impl IntensityAugmentSpec {
    /// No augmentation at all.
    pub fn disabled() -> Self {
        Self { flip_probability: 0.0, similarity_probability: 0.0, gamma_probability: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_probability", self.flip_probability),
            ("similarity_probability", self.similarity_probability),
            ("gamma_probability", self.gamma_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Spec(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.scale_range[0] > 0.0 && self.scale_range[0] <= self.scale_range[1]) {
            return Err(Error::Spec(format!("scale_range must be a positive interval, got {:?}", self.scale_range)));
        }
        if !(self.gamma_range[0] > 0.0 && self.gamma_range[0] <= self.gamma_range[1]) {
            return Err(Error::Spec(format!("gamma_range must be a positive interval, got {:?}", self.gamma_range)));
        }
        if !(self.rotation_deg >= 0.0 && self.translation_voxels >= 0.0) {
            return Err(Error::Spec("rotation_deg and translation_voxels must be >= 0".into()));
        }
        Ok(())
    }
}

/// Rotation about D, isotropic scale and lateral translation, in physical space
/// around the volume centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub angle_rad: f64,
    pub scale: f64,
    /// Voxels along (W, D).
    pub shift: [f64; 2],
}

impl Similarity {
    pub const IDENTITY: Self = Self { angle_rad: 0.0, scale: 1.0, shift: [0.0, 0.0] };

    /// Source position (in voxels) sampled by output voxel `(w, h, d)`.
    fn source(&self, dims: Dims3, sp: Spacing, w: usize, h: usize, d: usize) -> [f64; 3] {
        let c = [(dims.w as f64 - 1.0) / 2.0, (dims.h as f64 - 1.0) / 2.0, (dims.d as f64 - 1.0) / 2.0];
        let x = (w as f64 - c[0] - self.shift[0]) * sp.w;
        let y = (h as f64 - c[1]) * sp.h;
        let (s, co) = self.angle_rad.sin_cos();
        // inverse rotation, then inverse scale
        let xs = (co * x + s * y) / self.scale;
        let ys = (-s * x + co * y) / self.scale;
        let zs = (d as f64 - c[2] - self.shift[1]) / self.scale;
        [xs / sp.w + c[0], ys / sp.h + c[1], zs + c[2]]
    }
}

fn clampf(x: f64, n: usize) -> f64 {
    x.clamp(0.0, (n - 1) as f64)
}

fn trilinear<T: Scalar>(data: &[T], dims: Dims3, p: [f64; 3]) -> f64 {
    let (x, y, z) = (clampf(p[0], dims.w), clampf(p[1], dims.h), clampf(p[2], dims.d));
    let (x0, y0, z0) = (x.floor() as usize, y.floor() as usize, z.floor() as usize);
    let (x1, y1, z1) = ((x0 + 1).min(dims.w - 1), (y0 + 1).min(dims.h - 1), (z0 + 1).min(dims.d - 1));
    let (fx, fy, fz) = (x - x0 as f64, y - y0 as f64, z - z0 as f64);
    let g = |w, h, d| data[dims.index(w, h, d)].as_f64();
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c00 = lerp(g(x0, y0, z0), g(x1, y0, z0), fx);
    let c10 = lerp(g(x0, y1, z0), g(x1, y1, z0), fx);
    let c01 = lerp(g(x0, y0, z1), g(x1, y0, z1), fx);
    let c11 = lerp(g(x0, y1, z1), g(x1, y1, z1), fx);
    lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
}

fn nearest(dims: Dims3, p: [f64; 3]) -> usize {
    let r = |x: f64, n: usize| clampf(x, n).round() as usize;
    dims.index(r(p[0], dims.w), r(p[1], dims.h), r(p[2], dims.d))
}

/// Applies `t` with linear interpolation to intensities and nearest neighbour to labels.
pub fn apply_similarity<T: Scalar>(v: &Volume<T>, l: &LabelMap, t: &Similarity) -> Result<(Volume<T>, LabelMap)> {
    if !(t.scale > 0.0) {
        return Err(Error::Spec(format!("similarity scale must be > 0, got {}", t.scale)));
    }
    if *t == Similarity::IDENTITY {
        return Ok((v.clone(), l.clone()));
    }
    let (dims, sp) = (v.dims(), v.spacing());
    let mut vd = Vec::with_capacity(dims.len());
    let mut ld = Vec::with_capacity(dims.len());
    for d in 0..dims.d {
        for h in 0..dims.h {
            for w in 0..dims.w {
                let p = t.source(dims, sp, w, h, d);
                vd.push(T::c(trilinear(v.data(), dims, p)));
                ld.push(l.data()[nearest(dims, p)]);
            }
        }
    }
    Ok((v.with_data(vd)?, LabelMap::new(dims, l.spacing(), ld)?))
}

pub fn flip_w<T: Scalar>(v: &Volume<T>, l: &LabelMap) -> Result<(Volume<T>, LabelMap)> {
    let dims = v.dims();
    let mut vd = v.data().to_vec();
    let mut ld = l.data().to_vec();
    for row in vd.chunks_exact_mut(dims.w) {
        row.reverse();
    }
    for row in ld.chunks_exact_mut(dims.w) {
        row.reverse();
    }
    Ok((v.with_data(vd)?, LabelMap::new(dims, l.spacing(), ld)?))
}

/// `v -> min + (max - min) * ((v - min) / (max - min))^γ`.
pub fn gamma_shift<T: Scalar>(v: &Volume<T>, gamma: f64) -> Result<Volume<T>> {
    let (lo, hi) = v.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x.as_f64()), b.max(x.as_f64())));
    if !(hi > lo) {
        return Ok(v.clone());
    }
    let r = hi - lo;
    v.with_data(v.data().iter().map(|x| T::c(lo + r * ((x.as_f64() - lo) / r).powf(gamma))).collect())
}

pub fn augment_pair<T: Scalar, R: Rng + ?Sized>(
    v: &Volume<T>,
    l: &LabelMap,
    spec: &IntensityAugmentSpec,
    rng: &mut R,
) -> Result<(Volume<T>, LabelMap)> {
    spec.validate()?;
    if v.dims() != l.dims() {
        return Err(Error::Argument(format!("volume grid {} vs label grid {}", v.dims(), l.dims())));
    }
    let (mut v, mut l) = (v.clone(), l.clone());
    if spec.flip_probability > 0.0 && rng.random::<f64>() < spec.flip_probability {
        (v, l) = flip_w(&v, &l)?;
    }
    if spec.similarity_probability > 0.0 && rng.random::<f64>() < spec.similarity_probability {
        let sym = |rng: &mut R, a: f64| (rng.random::<f64>() * 2.0 - 1.0) * a;
        let t = Similarity {
            angle_rad: sym(rng, spec.rotation_deg).to_radians(),
            scale: spec.scale_range[0] + rng.random::<f64>() * (spec.scale_range[1] - spec.scale_range[0]),
            shift: [sym(rng, spec.translation_voxels), sym(rng, spec.translation_voxels)],
        };
        (v, l) = apply_similarity(&v, &l, &t)?;
    }
    if spec.gamma_probability > 0.0 && rng.random::<f64>() < spec.gamma_probability {
        let g = spec.gamma_range[0] + rng.random::<f64>() * (spec.gamma_range[1] - spec.gamma_range[0]);
        v = gamma_shift(&v, g)?;
    }
    Ok((v, l))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeCorruptionSpec {
    /// Per-voxel flip probability.
    pub flip_rate: f64,
    /// Control-point spacing of the elastic field, voxels per axis (W, H, D).
    pub elastic_grid: [usize; 3],
    /// σ of control-point displacements, voxels; 0 disables the deformation.
    pub elastic_sigma: f64,
    pub ellipsoid_count_range: [usize; 2],
    /// Semi-axis range in voxels along (W, H, D).
    pub semi_axis_range: [[f64; 2]; 3],
    /// Probability that an ellipsoid is added rather than subtracted.
    pub add_probability: f64,
    /// Horizontal bands (whole rows of constant H) cleared inside the shape's row span,
    /// mimicking signal lost to stripe artifacts. `[0, 0]` disables them.
    pub band_count_range: [usize; 2],
    pub band_half_width_range: [usize; 2],
    pub rng_seed: u64,
}

impl Default for ShapeCorruptionSpec {
    fn default() -> Self {
        Self {
            flip_rate: 0.01,
            elastic_grid: [16, 32, 8],
            elastic_sigma: 1.5,
            ellipsoid_count_range: [0, 4],
            semi_axis_range: [[3.0, 12.0], [3.0, 10.0], [2.0, 6.0]],
            add_probability: 0.5,
            band_count_range: [0, 0],
            band_half_width_range: [0, 1],
            rng_seed: 0,
        }
    }
}

impl ShapeCorruptionSpec {
    pub fn disabled() -> Self {
        Self { flip_rate: 0.0, elastic_sigma: 0.0, ellipsoid_count_range: [0, 0], ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_rate) || !(0.0..=1.0).contains(&self.add_probability) {
            return Err(Error::Spec("flip_rate and add_probability must lie in [0, 1]".into()));
        }
        if self.elastic_grid.contains(&0) || !(self.elastic_sigma >= 0.0) {
            return Err(Error::Spec("elastic_grid must be positive and elastic_sigma >= 0".into()));
        }
        if self.ellipsoid_count_range[0] > self.ellipsoid_count_range[1] {
            return Err(Error::Spec("ellipsoid_count_range is not ordered".into()));
        }
        if self.semi_axis_range.iter().any(|r| !(r[0] > 0.0 && r[0] <= r[1])) {
            return Err(Error::Spec("semi_axis_range entries must be positive intervals".into()));
        }
        if self.band_count_range[0] > self.band_count_range[1] || self.band_half_width_range[0] > self.band_half_width_range[1] {
            return Err(Error::Spec("band_count_range and band_half_width_range must be ordered".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub centre: [usize; 3],
    pub semi_axes: [f64; 3],
    pub add: bool,
}

impl Ellipsoid {
    pub fn contains(&self, w: usize, h: usize, d: usize) -> bool {
        let q = |x: usize, c: usize, a: f64| ((x as f64 - c as f64) / a).powi(2);
        q(w, self.centre[0], self.semi_axes[0]) + q(h, self.centre[1], self.semi_axes[1]) + q(d, self.centre[2], self.semi_axes[2]) <= 1.0
    }

    fn paint(&self, data: &mut [u8], dims: Dims3) {
        let range = |c: usize, a: f64, n: usize| c.saturating_sub(a.floor() as usize)..(c + a.floor() as usize + 1).min(n);
        for d in range(self.centre[2], self.semi_axes[2], dims.d) {
            for h in range(self.centre[1], self.semi_axes[1], dims.h) {
                for w in range(self.centre[0], self.semi_axes[0], dims.w) {
                    if self.contains(w, h, d) {
                        data[dims.index(w, h, d)] = self.add as u8;
                    }
                }
            }
        }
    }
}

/// Clears every voxel with `|h - row| <= half_width`.
pub fn clear_band(data: &mut [u8], dims: Dims3, row: usize, half_width: usize) {
    for d in 0..dims.d {
        for h in row.saturating_sub(half_width)..(row + half_width + 1).min(dims.h) {
            let start = dims.index(0, h, d);
            data[start..start + dims.w].fill(0);
        }
    }
}

/// What a corruption did, for inspection and tests.
#[derive(Debug, Clone, Default)]
pub struct CorruptionLog {
    pub ellipsoids: Vec<Ellipsoid>,
    /// Cleared bands as `(row, half_width)`.
    pub bands: Vec<(usize, usize)>,
    pub flips: usize,
}

fn elastic<R: Rng + ?Sized>(data: &[u8], dims: Dims3, grid: [usize; 3], sigma: f64, rng: &mut R) -> Vec<u8> {
    let nodes = [dims.w.div_ceil(grid[0]) + 1, dims.h.div_ceil(grid[1]) + 1, dims.d.div_ceil(grid[2]) + 1];
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let field: Vec<[f64; 3]> = (0..nodes.iter().product::<usize>())
        .map(|_| [normal.sample(rng), normal.sample(rng), normal.sample(rng)])
        .collect();
    let node = |i: usize, j: usize, k: usize| field[(k * nodes[1] + j) * nodes[0] + i];
    let mut out = vec![0u8; data.len()];
    for d in 0..dims.d {
        let (k, fz) = (d / grid[2], (d % grid[2]) as f64 / grid[2] as f64);
        for h in 0..dims.h {
            let (j, fy) = (h / grid[1], (h % grid[1]) as f64 / grid[1] as f64);
            for w in 0..dims.w {
                let (i, fx) = (w / grid[0], (w % grid[0]) as f64 / grid[0] as f64);
                let mut disp = [0.0; 3];
                for (dk, wz) in [(0, 1.0 - fz), (1, fz)] {
                    for (dj, wy) in [(0, 1.0 - fy), (1, fy)] {
                        for (di, wx) in [(0, 1.0 - fx), (1, fx)] {
                            let n = node(i + di, j + dj, k + dk);
                            let wt = wx * wy * wz;
                            for a in 0..3 {
                                disp[a] += wt * n[a];
                            }
                        }
                    }
                }
                let src = nearest(dims, [w as f64 + disp[0], h as f64 + disp[1], d as f64 + disp[2]]);
                out[dims.index(w, h, d)] = data[src];
            }
        }
    }
    out
}

/// Elastic deformation, then ellipsoid addition/subtraction, then band dropout, then voxel flips.
pub fn corrupt_shape_logged<R: Rng + ?Sized>(s: &BinaryShape, spec: &ShapeCorruptionSpec, rng: &mut R) -> Result<(BinaryShape, CorruptionLog)> {
    spec.validate()?;
    let dims = s.dims();
    let mut log = CorruptionLog::default();
    let mut out = s.clone();
    if spec.elastic_sigma > 0.0 {
        let warped = elastic(out.data(), dims, spec.elastic_grid, spec.elastic_sigma, rng);
        out.data_mut().copy_from_slice(&warped);
    }
    let [lo, hi] = spec.ellipsoid_count_range;
    let count = if hi > 0 { rng.random_range(lo..=hi) } else { 0 };
    for _ in 0..count {
        let add = rng.random::<f64>() < spec.add_probability;
        let semi_axes = [0, 1, 2].map(|a| {
            let r = spec.semi_axis_range[a];
            r[0] + rng.random::<f64>() * (r[1] - r[0])
        });
        let centre = if add {
            [rng.random_range(0..dims.w), rng.random_range(0..dims.h), rng.random_range(0..dims.d)]
        } else {
            let fg = out.count();
            if fg == 0 {
                continue;
            }
            let k = rng.random_range(0..fg);
            let i = out.data().iter().enumerate().filter(|(_, &x)| x == 1).nth(k).map(|(i, _)| i).expect("k < count");
            let (w, h, d) = dims.coords(i);
            [w, h, d]
        };
        let e = Ellipsoid { centre, semi_axes, add };
        e.paint(out.data_mut(), dims);
        log.ellipsoids.push(e);
    }
    let [lo, hi] = spec.band_count_range;
    let bands = if hi > 0 { rng.random_range(lo..=hi) } else { 0 };
    for _ in 0..bands {
        let rows: Vec<usize> = (0..dims.h).filter(|&h| (0..dims.d).any(|d| (0..dims.w).any(|w| out.get(w, h, d)))).collect();
        let (Some(&top), Some(&bottom)) = (rows.first(), rows.last()) else {
            break;
        };
        let row = rng.random_range(top..=bottom);
        let half = rng.random_range(spec.band_half_width_range[0]..=spec.band_half_width_range[1]);
        clear_band(out.data_mut(), dims, row, half);
        log.bands.push((row, half));
    }
    if spec.flip_rate > 0.0 {
        for x in out.data_mut() {
            if rng.random::<f64>() < spec.flip_rate {
                *x ^= 1;
                log.flips += 1;
            }
        }
    }
    Ok((out, log))
}

pub fn corrupt_shape<R: Rng + ?Sized>(s: &BinaryShape, spec: &ShapeCorruptionSpec, rng: &mut R) -> Result<BinaryShape> {
    Ok(corrupt_shape_logged(s, spec, rng)?.0)
}
