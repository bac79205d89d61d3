//! Synthetic low-SNR retinal OCT volumes with exact ground truth.
//!
//! Each A-scan column holds vitreous, a retina run bounded by the ILM above and
//! Bruch's membrane (BM) below, an optional PED run that pushes the lower
//! boundary further down, and fading choroid below.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nrrd;
use crate::scalar::Scalar;
use crate::volume::{Dims3, LabelMap, Spacing, Volume, BACKGROUND, DEVICE_SPACING, NETWORK_DIMS, PED, RETINA};

pub const VITREOUS_INTENSITY: f64 = 0.05;
pub const INNER_RETINA_INTENSITY: f64 = 0.65;
pub const MID_RETINA_INTENSITY: f64 = 0.4;
pub const RPE_INTENSITY: f64 = 0.95;
pub const PED_INTENSITY: f64 = 0.2;
pub const CHOROID_INTENSITY: f64 = 0.3;

/// Largest fraction of H that the thickest retina plus the tallest PED may take.
const MAX_TISSUE_FRACTION: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub shape: Dims3,
    /// μm per voxel along (W, H, D).
    pub spacing: Spacing,
    pub rng_seed: u64,
    /// μm
    pub retina_thickness_range: [f64; 2],
    pub ped_count_range: [usize; 2],
    /// μm
    pub ped_height_range: [f64; 2],
    /// Lateral Gaussian σ of a PED dome, μm.
    pub ped_radius_range: [f64; 2],
    /// σ of the multiplicative log-normal speckle.
    pub noise_level: f64,
    /// Expected number of stripes per volume.
    pub stripe_artifact_rate: f64,
    pub stripe_attenuation: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            shape: NETWORK_DIMS,
            spacing: DEVICE_SPACING,
            rng_seed: 0,
            retina_thickness_range: [220.0, 320.0],
            ped_count_range: [0, 2],
            ped_height_range: [60.0, 180.0],
            ped_radius_range: [60.0, 140.0],
            noise_level: 0.35,
            stripe_artifact_rate: 1.5,
            stripe_attenuation: 0.15,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] > 0.0 && r[0] <= r[1]) {
        return Err(Error::Spec(format!("{name} must be a positive interval [lo, hi], got {r:?}")));
    }
    Ok(())
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shape.is_empty() {
            return Err(Error::Spec(format!("shape {} has an empty axis", self.shape)));
        }
        self.spacing.validate().map_err(|e| Error::Spec(e.to_string()))?;
        check_range("retina_thickness_range", self.retina_thickness_range)?;
        check_range("ped_height_range", self.ped_height_range)?;
        check_range("ped_radius_range", self.ped_radius_range)?;
        if self.ped_count_range[0] > self.ped_count_range[1] {
            return Err(Error::Spec(format!("ped_count_range {:?} is not ordered", self.ped_count_range)));
        }
        if self.retina_thickness_range[0] < 2.0 * self.spacing.h {
            return Err(Error::Spec("retina_thickness_range must be at least two axial voxels".into()));
        }
        if self.ped_height_range[0] < self.spacing.h {
            return Err(Error::Spec("ped_height_range must be at least one axial voxel".into()));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Spec(format!("noise_level must be >= 0, got {}", self.noise_level)));
        }
        if !(self.stripe_artifact_rate >= 0.0 && self.stripe_artifact_rate.is_finite()) {
            return Err(Error::Spec(format!("stripe_artifact_rate must be >= 0, got {}", self.stripe_artifact_rate)));
        }
        if !(0.0..=1.0).contains(&self.stripe_attenuation) {
            return Err(Error::Spec(format!("stripe_attenuation must lie in [0, 1], got {}", self.stripe_attenuation)));
        }
        let tissue = self.retina_thickness_range[1] / self.spacing.h
            + if self.ped_count_range[1] > 0 { self.ped_height_range[1] / self.spacing.h } else { 0.0 };
        if tissue > MAX_TISSUE_FRACTION * self.shape.h as f64 {
            return Err(Error::Spec(format!(
                "retina plus PED can reach {tissue:.1} axial voxels, more than the H extent {} allows",
                self.shape.h
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { rng_seed: seed, ..self.clone() }
    }
}

/// Dome-shaped PED: height (voxels) and lateral σ (μm) around an integer centre column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedDome {
    pub w: usize,
    pub d: usize,
    pub height: f64,
    pub sigma_um: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stripe {
    pub row_h: usize,
    pub half_width: usize,
}

/// Per-column surfaces in voxel rows: retina `[top, bm)`, PED `[bm, bottom)`.
#[derive(Debug, Clone)]
pub struct PhantomGeometry {
    pub dims: Dims3,
    pub top: Vec<usize>,
    pub bm: Vec<usize>,
    pub bottom: Vec<usize>,
    pub domes: Vec<PedDome>,
}

impl PhantomGeometry {
    fn column(&self, w: usize, d: usize) -> usize {
        d * self.dims.w + w
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    r[0] + rng.random::<f64>() * (r[1] - r[0])
}

fn draw_geometry(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> PhantomGeometry {
    let Dims3 { w: nw, h: nh, d: nd } = spec.shape;
    let s = spec.spacing;
    let hf = nh as f64;
    let base = uniform(rng, [0.2, 0.3]) * hf;
    // low-order polynomial over normalized lateral coordinates
    let coef: Vec<f64> = (0..5).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * 0.01 * hf).collect();
    let thickness = uniform(rng, spec.retina_thickness_range) / s.h;
    let tilt = (rng.random::<f64>() * 2.0 - 1.0) * 0.1 * thickness;
    let fovea_w = (0.5 + (rng.random::<f64>() - 0.5) * 0.2) * nw as f64 * s.w;
    let fovea_d = (0.5 + (rng.random::<f64>() - 0.5) * 0.2) * nd as f64 * s.d;
    let fovea_sigma = 0.15 * nw as f64 * s.w;
    let dip_frac = uniform(rng, [0.15, 0.3]);
    let count = rng.random_range(spec.ped_count_range[0]..=spec.ped_count_range[1]);
    let domes: Vec<PedDome> = (0..count)
        .map(|_| {
            let w = ((0.2 + 0.6 * rng.random::<f64>()) * (nw - 1) as f64).round() as usize;
            let d = ((0.2 + 0.6 * rng.random::<f64>()) * (nd - 1) as f64).round() as usize;
            let height = uniform(rng, spec.ped_height_range) / s.h;
            let sigma_um = uniform(rng, spec.ped_radius_range);
            PedDome { w, d, height, sigma_um }
        })
        .collect();

    let ncol = nw * nd;
    let (mut top, mut bm, mut bottom) = (vec![0; ncol], vec![0; ncol], vec![0; ncol]);
    for d in 0..nd {
        let v = if nd > 1 { 2.0 * d as f64 / (nd - 1) as f64 - 1.0 } else { 0.0 };
        for w in 0..nw {
            let u = if nw > 1 { 2.0 * w as f64 / (nw - 1) as f64 - 1.0 } else { 0.0 };
            let ilm0 = base + coef[0] * u + coef[1] * v + coef[2] * u * u + coef[3] * v * v + coef[4] * u * v;
            let t = thickness + tilt * u;
            let (x, y) = (w as f64 * s.w, d as f64 * s.d);
            let r2 = (x - fovea_w).powi(2) + (y - fovea_d).powi(2);
            let dip = dip_frac * t * (-r2 / (2.0 * fovea_sigma * fovea_sigma)).exp();
            let t_row = (ilm0 + dip).round().max(0.0) as usize;
            let b_row = ((ilm0 + t).round() as usize).max(t_row + 1);
            let ped = domes
                .iter()
                .map(|p| {
                    let q = ((w as f64 - p.w as f64) * s.w).powi(2) + ((d as f64 - p.d as f64) * s.d).powi(2);
                    p.height * (-q / (2.0 * p.sigma_um * p.sigma_um)).exp()
                })
                .fold(0.0, f64::max);
            let i = d * nw + w;
            top[i] = t_row.min(nh - 1);
            bm[i] = b_row.min(nh);
            bottom[i] = (b_row + (ped + 0.5).floor() as usize).min(nh);
        }
    }
    PhantomGeometry { dims: spec.shape, top, bm, bottom, domes }
}

fn render_labels(g: &PhantomGeometry, spacing: Spacing) -> Result<LabelMap> {
    let dims = g.dims;
    let mut data = vec![BACKGROUND; dims.len()];
    for d in 0..dims.d {
        for w in 0..dims.w {
            let c = g.column(w, d);
            for h in g.top[c]..g.bm[c] {
                data[dims.index(w, h, d)] = RETINA;
            }
            for h in g.bm[c]..g.bottom[c] {
                data[dims.index(w, h, d)] = PED;
            }
        }
    }
    LabelMap::new(dims, spacing, data)
}

fn render_intensity(g: &PhantomGeometry) -> Vec<f64> {
    let dims = g.dims;
    let fade = 0.1 * dims.h as f64;
    let mut data = vec![VITREOUS_INTENSITY; dims.len()];
    for d in 0..dims.d {
        for w in 0..dims.w {
            let c = g.column(w, d);
            let (top, bm, bottom) = (g.top[c], g.bm[c], g.bottom[c]);
            let len = bm - top;
            let inner = top + (len as f64 * 0.25).round() as usize;
            let rpe = bm - ((len as f64 * 0.15).round() as usize).clamp(1, len);
            for h in top..bm {
                data[dims.index(w, h, d)] = if h >= rpe {
                    RPE_INTENSITY
                } else if h < inner {
                    INNER_RETINA_INTENSITY
                } else {
                    MID_RETINA_INTENSITY
                };
            }
            for h in bm..bottom {
                data[dims.index(w, h, d)] = PED_INTENSITY;
            }
            for h in bottom..dims.h {
                let x = (h - bottom) as f64 / fade;
                data[dims.index(w, h, d)] = VITREOUS_INTENSITY + (CHOROID_INTENSITY - VITREOUS_INTENSITY) * (-x).exp();
            }
        }
    }
    data
}

/// Multiplies every voxel with `|h - row_h| <= half_width` by `attenuation`.
pub fn inject_stripe_artifact<T: Scalar>(v: &Volume<T>, row_h: usize, half_width: usize, attenuation: f64) -> Result<Volume<T>> {
    let dims = v.dims();
    if row_h >= dims.h {
        return Err(Error::Argument(format!("stripe row {row_h} outside 0..{}", dims.h)));
    }
    if !(0.0..=1.0).contains(&attenuation) {
        return Err(Error::Argument(format!("attenuation must lie in [0, 1], got {attenuation}")));
    }
    let mut out = v.clone();
    let a = T::c(attenuation);
    let (lo, hi) = (row_h.saturating_sub(half_width), (row_h + half_width).min(dims.h - 1));
    let data = out.data_mut();
    for d in 0..dims.d {
        for h in lo..=hi {
            let start = dims.index(0, h, d);
            for x in &mut data[start..start + dims.w] {
                *x *= a;
            }
        }
    }
    Ok(out)
}

/// A generated volume with its labels and the hidden parameters that produced it.
#[derive(Debug, Clone)]
pub struct Phantom<T> {
    pub volume: Volume<T>,
    pub labels: LabelMap,
    pub domes: Vec<PedDome>,
    pub stripes: Vec<Stripe>,
}

pub fn generate<T: Scalar>(spec: &PhantomSpec) -> Result<Phantom<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let g = draw_geometry(spec, &mut rng);
    let labels = render_labels(&g, spec.spacing)?;
    let mut data = render_intensity(&g);
    if spec.noise_level > 0.0 {
        let sigma = spec.noise_level;
        for x in &mut data {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x *= (sigma * z - 0.5 * sigma * sigma).exp();
        }
    }
    let mut volume = Volume::new(spec.shape, spec.spacing, data.into_iter().map(T::c).collect())?;
    let mut stripes = Vec::new();
    if spec.stripe_artifact_rate > 0.0 {
        let n = Poisson::new(spec.stripe_artifact_rate).map_err(|e| Error::Spec(e.to_string()))?.sample(&mut rng) as usize;
        for _ in 0..n {
            let s = Stripe { row_h: rng.random_range(0..spec.shape.h), half_width: rng.random_range(0..=2) };
            volume = inject_stripe_artifact(&volume, s.row_h, s.half_width, spec.stripe_attenuation)?;
            stripes.push(s);
        }
    }
    volume.meta.insert("phantom_seed".into(), spec.rng_seed.to_string());
    Ok(Phantom { volume, labels, domes: g.domes, stripes })
}

pub fn generate_phantom<T: Scalar>(spec: &PhantomSpec) -> Result<(Volume<T>, LabelMap)> {
    let p = generate(spec)?;
    Ok((p.volume, p.labels))
}

/// SplitMix64 finalizer, used to derive independent per-volume seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derived_seed(base: u64, index: usize) -> u64 {
    splitmix64(base ^ splitmix64(index as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub patient: String,
    pub eye: String,
    pub seed: u64,
    pub volume: String,
    pub labels: String,
    pub sidecar: String,
    pub ped_present: bool,
    pub ped_voxels: usize,
    pub stripes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: PhantomSpec,
    pub entries: Vec<ManifestEntry>,
}

/// Per-volume JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub id: String,
    pub patient: String,
    pub eye: String,
    pub seed: u64,
    pub fold: Option<usize>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Writes `n` volume/label pairs (two eyes per patient) plus sidecars and `manifest.json`.
pub fn make_dataset(spec: &PhantomSpec, n: usize, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    spec.validate()?;
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let patient = format!("p{:03}", i / 2);
        let eye = if i % 2 == 0 { "OD" } else { "OS" }.to_string();
        let id = format!("{patient}_{}", eye.to_lowercase());
        let seed = derived_seed(spec.rng_seed, i);
        let p = generate::<f32>(&spec.with_seed(seed))?;
        let (volume, labels, sidecar) = (format!("{id}_volume.nrrd"), format!("{id}_labels.nrrd"), format!("{id}.json"));
        nrrd::write_volume(&p.volume, dir.join(&volume))?;
        nrrd::write_labels(&p.labels, dir.join(&labels))?;
        let sc = Sidecar { id: id.clone(), patient: patient.clone(), eye: eye.clone(), seed, fold: None };
        let sc_path = dir.join(&sidecar);
        fs::write(&sc_path, serde_json::to_string_pretty(&sc)? + "\n").map_err(|e| Error::io(&sc_path, e))?;
        let ped_voxels = p.labels.count(PED);
        entries.push(ManifestEntry {
            id,
            patient,
            eye,
            seed,
            volume,
            labels,
            sidecar,
            ped_present: ped_voxels > 0,
            ped_voxels,
            stripes: p.stripes.len(),
        });
    }
    let manifest = DatasetManifest { spec: spec.clone(), entries };
    manifest.save(dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
