//! Generalized Dice loss with class weighting, and the evaluation metrics
//! (Dice similarity coefficient, average symmetric surface distance, Hausdorff
//! distance).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{ClassProbabilities, Dims3, LabelMap, Spacing, NUM_CLASSES, PED, RETINA};

/// Stabilizer added to both the numerator and denominator of the Dice ratio.
pub const DICE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingScheme {
    /// `w_c = N / (C * n_c)`
    #[default]
    InverseFrequency,
    /// `w_c = 1 / n_c^2`
    InverseSquaredVolume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: Vec<f64>,
}

impl ClassWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Validation(format!("class weights must be finite and positive, got {w:?}")));
        }
        Ok(Self { w })
    }

    pub fn uniform(classes: usize) -> Self {
        Self { w: vec![1.0; classes] }
    }

    pub fn classes(&self) -> usize {
        self.w.len()
    }
}

/// Weights from raw labels `< classes`; absent classes count as one voxel.
pub fn class_weights(labels: &[u8], classes: usize, scheme: WeightingScheme) -> Result<ClassWeights> {
    if labels.is_empty() {
        return Err(Error::Argument("cannot weight an empty label set".into()));
    }
    let mut counts = vec![0usize; classes];
    for &l in labels {
        let l = l as usize;
        if l >= classes {
            return Err(Error::Argument(format!("label {l} outside 0..{classes}")));
        }
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    let w = counts
        .iter()
        .map(|&c| {
            let c = c.max(1) as f64;
            match scheme {
                WeightingScheme::InverseFrequency => n / (classes as f64 * c),
                WeightingScheme::InverseSquaredVolume => 1.0 / (c * c),
            }
        })
        .collect();
    ClassWeights::new(w)
}

/// Inverse class frequency over the three segmentation classes.
pub fn class_frequencies(truth: &LabelMap) -> Result<ClassWeights> {
    class_weights(truth.data(), NUM_CLASSES, WeightingScheme::InverseFrequency)
}

/// Loss value and its gradient with respect to every probability entry.
#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub loss: f64,
    pub grad: Vec<T>,
}

/// `L = 1 - (2 sum_c w_c sum_v p r + eps) / (sum_c w_c sum_v (p + r) + eps)` over
/// channels-first probabilities `probs[c * V + v]` and hard labels `truth[v]`.
pub fn generalized_dice_raw<T: Scalar>(probs: &[T], truth: &[u8], weights: &ClassWeights) -> Result<LossGrad<T>> {
    generalized_dice_batch(probs, 1, truth, weights)
}

/// Batched form: `probs` is `[n][C][V]`, `truth` is `[n][V]`; sums run over the whole batch.
pub fn generalized_dice_batch<T: Scalar>(probs: &[T], n: usize, truth: &[u8], weights: &ClassWeights) -> Result<LossGrad<T>> {
    let classes = weights.classes();
    if n == 0 || truth.len() % n != 0 {
        return Err(Error::Argument(format!("{} labels do not split into {n} samples", truth.len())));
    }
    let v = truth.len() / n;
    if probs.len() != classes * truth.len() {
        return Err(Error::Argument(format!("{} probabilities for {} classes x {} voxels", probs.len(), classes, truth.len())));
    }
    if let Some(&l) = truth.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Argument(format!("label {l} outside 0..{classes}")));
    }
    let channel = |i: usize, c: usize| (&probs[(i * classes + c) * v..(i * classes + c + 1) * v], &truth[i * v..(i + 1) * v]);
    let (mut num, mut den) = (0.0, 0.0);
    for c in 0..classes {
        let (mut inter, mut sum) = (0.0, 0.0);
        for i in 0..n {
            let (pc, tc) = channel(i, c);
            for (p, &t) in pc.iter().zip(tc) {
                let p = p.as_f64();
                let r = if t as usize == c { 1.0 } else { 0.0 };
                inter += p * r;
                sum += p + r;
            }
        }
        num += weights.w[c] * inter;
        den += weights.w[c] * sum;
    }
    let (a, b) = (2.0 * num + DICE_EPS, den + DICE_EPS);
    let loss = 1.0 - a / b;
    let mut grad = vec![T::zero(); probs.len()];
    for i in 0..n {
        for c in 0..classes {
            let w = weights.w[c];
            let off = T::c(w * a / (b * b));
            let hit = T::c(-2.0 * w / b) + off;
            let start = (i * classes + c) * v;
            for (g, &t) in grad[start..start + v].iter_mut().zip(&truth[i * v..(i + 1) * v]) {
                *g = if t as usize == c { hit } else { off };
            }
        }
    }
    Ok(LossGrad { loss, grad })
}

pub fn generalized_dice_loss<T: Scalar>(pred: &ClassProbabilities<T>, truth: &LabelMap, weights: &ClassWeights) -> Result<LossGrad<T>> {
    if pred.dims() != truth.dims() {
        return Err(Error::Argument(format!("prediction grid {} vs truth grid {}", pred.dims(), truth.dims())));
    }
    if pred.classes() != weights.classes() {
        return Err(Error::Argument(format!("{} channels but {} class weights", pred.classes(), weights.classes())));
    }
    generalized_dice_raw(pred.data(), truth.data(), weights)
}

/// Voxel counts behind a Dice coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiceCounts {
    pub intersection: usize,
    pub a: usize,
    pub b: usize,
}

impl DiceCounts {
    pub fn from_masks(a: impl IntoIterator<Item = bool>, b: impl IntoIterator<Item = bool>) -> Self {
        let mut out = Self { intersection: 0, a: 0, b: 0 };
        for (x, y) in a.into_iter().zip(b) {
            out.a += x as usize;
            out.b += y as usize;
            out.intersection += (x && y) as usize;
        }
        out
    }

    /// Both empty gives 1, one empty gives 0.
    pub fn value(&self) -> f64 {
        if self.a + self.b == 0 {
            1.0
        } else {
            (2 * self.intersection) as f64 / (self.a + self.b) as f64
        }
    }
}

fn check_grid(a: &LabelMap, b: &LabelMap) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Argument(format!("label grids differ: {} vs {}", a.dims(), b.dims())));
    }
    Ok(())
}

fn check_classes(set: &[u8]) -> Result<()> {
    if set.is_empty() || set.iter().any(|&c| c as usize >= NUM_CLASSES) {
        return Err(Error::Argument(format!("invalid class set {set:?}")));
    }
    Ok(())
}

pub fn dice_counts(a: &LabelMap, b: &LabelMap, class_set: &[u8]) -> Result<DiceCounts> {
    check_grid(a, b)?;
    check_classes(class_set)?;
    Ok(DiceCounts::from_masks(a.data().iter().map(|l| class_set.contains(l)), b.data().iter().map(|l| class_set.contains(l))))
}

pub fn dice_coefficient(a: &LabelMap, b: &LabelMap, class_id: u8) -> Result<f64> {
    Ok(dice_counts(a, b, &[class_id])?.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistances {
    pub assd: f64,
    pub hd: f64,
}

/// Voxels of the mask with at least one 6-neighbour outside it; the faces of the
/// volume count as outside.
pub fn boundary(mask: &[bool], dims: Dims3) -> Vec<bool> {
    let Dims3 { w: nw, h: nh, d: nd } = dims;
    let mut out = vec![false; mask.len()];
    for d in 0..nd {
        for h in 0..nh {
            for w in 0..nw {
                let i = dims.index(w, h, d);
                if !mask[i] {
                    continue;
                }
                out[i] = w == 0
                    || h == 0
                    || d == 0
                    || w + 1 == nw
                    || h + 1 == nh
                    || d + 1 == nd
                    || !mask[i - 1]
                    || !mask[i + 1]
                    || !mask[i - nw]
                    || !mask[i + nw]
                    || !mask[i - nw * nh]
                    || !mask[i + nw * nh];
            }
        }
    }
    out
}

/// 1-D lower envelope of parabolas with sample spacing `s`, in place on squared distances.
fn edt_1d(f: &mut [f64], s: f64, v: &mut Vec<usize>, z: &mut Vec<f64>, out: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    let s2 = s * s;
    let key = |q: usize, fq: f64| fq + s2 * (q * q) as f64;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                break;
            };
            let x = (key(q, f[q]) - key(p, f[p])) / (2.0 * s2 * (q - p) as f64);
            if z.last().is_some_and(|&zl| x <= zl) {
                v.pop();
                z.pop();
                continue;
            }
            z.push(x);
            v.push(q);
            break;
        }
    }
    if v.is_empty() {
        return;
    }
    out.clear();
    let mut k = 0;
    for q in 0..n {
        while k < z.len() && z[k] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = s * (q as f64 - p as f64);
        out.push(dq * dq + f[p]);
    }
    f.copy_from_slice(out);
}

/// Exact squared Euclidean distance (physical units) from every voxel to the nearest `seed`.
pub fn squared_distance_transform(seed: &[bool], dims: Dims3, spacing: Spacing) -> Vec<f64> {
    let Dims3 { w: nw, h: nh, d: nd } = dims;
    let mut f: Vec<f64> = seed.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let (mut v, mut z, mut out) = (Vec::new(), Vec::new(), Vec::new());
    let mut line = Vec::new();
    let mut pass = |f: &mut [f64], n: usize, stride: usize, starts: &mut dyn Iterator<Item = usize>, s: f64| {
        for start in starts {
            line.clear();
            line.extend((0..n).map(|i| f[start + i * stride]));
            edt_1d(&mut line, s, &mut v, &mut z, &mut out);
            for (i, &x) in line.iter().enumerate() {
                f[start + i * stride] = x;
            }
        }
    };
    pass(&mut f, nw, 1, &mut (0..nd * nh).map(|r| r * nw), spacing.w);
    pass(&mut f, nh, nw, &mut (0..nd).flat_map(|d| (0..nw).map(move |w| d * nw * nh + w)), spacing.h);
    pass(&mut f, nd, nw * nh, &mut (0..nw * nh), spacing.d);
    f
}

/// ASSD and HD between the boundaries of `class_set` in `a` and `b`, in the units of `spacing`.
pub fn surface_distances(a: &LabelMap, b: &LabelMap, class_set: &[u8], spacing: Spacing) -> Result<SurfaceDistances> {
    check_grid(a, b)?;
    check_classes(class_set)?;
    spacing.validate()?;
    let dims = a.dims();
    let ma: Vec<bool> = a.data().iter().map(|l| class_set.contains(l)).collect();
    let mb: Vec<bool> = b.data().iter().map(|l| class_set.contains(l)).collect();
    mask_surface_distances(&ma, &mb, dims, spacing)
}

pub fn mask_surface_distances(ma: &[bool], mb: &[bool], dims: Dims3, spacing: Spacing) -> Result<SurfaceDistances> {
    let (ba, bb) = (boundary(ma, dims), boundary(mb, dims));
    let (na, nb) = (ba.iter().filter(|&&x| x).count(), bb.iter().filter(|&&x| x).count());
    if na == 0 || nb == 0 {
        return Err(Error::UndefinedDistance(format!("empty surface ({na} vs {nb} boundary voxels)")));
    }
    let (da, db) = (squared_distance_transform(&ba, dims, spacing), squared_distance_transform(&bb, dims, spacing));
    let (mut sum, mut hd) = (0.0, 0.0f64);
    for (from, to) in [(&ba, &db), (&bb, &da)] {
        for (i, _) in from.iter().enumerate().filter(|(_, &x)| x) {
            let d = to[i].sqrt();
            sum += d;
            hd = hd.max(d);
        }
    }
    Ok(SurfaceDistances { assd: sum / (na + nb) as f64, hd })
}

/// Mean absolute second difference of the per-column lower boundary (largest H
/// index inside the mask), taken along W and along D over runs of non-empty columns.
pub fn boundary_roughness(mask: &[bool], dims: Dims3) -> f64 {
    let mut lower = vec![None; dims.w * dims.d];
    for d in 0..dims.d {
        for h in 0..dims.h {
            for w in 0..dims.w {
                if mask[dims.index(w, h, d)] {
                    lower[d * dims.w + w] = Some(h as f64);
                }
            }
        }
    }
    let (mut sum, mut n) = (0.0, 0usize);
    let mut second = |a: Option<f64>, b: Option<f64>, c: Option<f64>| {
        if let (Some(a), Some(b), Some(c)) = (a, b, c) {
            sum += (a - 2.0 * b + c).abs();
            n += 1;
        }
    };
    for d in 0..dims.d {
        for w in 1..dims.w.saturating_sub(1) {
            let i = d * dims.w + w;
            second(lower[i - 1], lower[i], lower[i + 1]);
        }
    }
    for d in 1..dims.d.saturating_sub(1) {
        for w in 0..dims.w {
            let i = d * dims.w + w;
            second(lower[i - dims.w], lower[i], lower[i + dims.w]);
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Metrics of one predicted volume. Distances are for the retina only and are
/// `None` when a surface is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMetrics {
    pub volume_id: String,
    pub dsc_retina: f64,
    pub dsc_ped: f64,
    pub assd_um: Option<f64>,
    pub hd_um: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub dsc_retina: f64,
    pub dsc_ped: f64,
    pub assd_um: Option<f64>,
    pub hd_um: Option<f64>,
    pub volumes: usize,
    /// Volumes whose distances were undefined and left out of the distance means.
    pub undefined_distances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub fold: Option<usize>,
    pub volumes: Vec<VolumeMetrics>,
    pub mean: AggregateMetrics,
}

/// Retina metrics use class 1, PED metrics class 2.
pub fn evaluate_volume(volume_id: &str, pred: &LabelMap, truth: &LabelMap) -> Result<VolumeMetrics> {
    let dsc_retina = dice_coefficient(pred, truth, RETINA)?;
    let dsc_ped = dice_coefficient(pred, truth, PED)?;
    let dist = match surface_distances(pred, truth, &[RETINA], truth.spacing()) {
        Ok(d) => Some(d),
        Err(Error::UndefinedDistance(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(VolumeMetrics {
        volume_id: volume_id.to_string(),
        dsc_retina,
        dsc_ped,
        assd_um: dist.map(|d| d.assd),
        hd_um: dist.map(|d| d.hd),
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

impl MetricsReport {
    pub fn new(variant: &str, fold: Option<usize>, volumes: Vec<VolumeMetrics>) -> Self {
        let defined = || volumes.iter().filter(|v| v.assd_um.is_some());
        let mean = AggregateMetrics {
            dsc_retina: mean(volumes.iter().map(|v| v.dsc_retina)).unwrap_or(f64::NAN),
            dsc_ped: mean(volumes.iter().map(|v| v.dsc_ped)).unwrap_or(f64::NAN),
            assd_um: mean(defined().filter_map(|v| v.assd_um)),
            hd_um: mean(defined().filter_map(|v| v.hd_um)),
            volumes: volumes.len(),
            undefined_distances: volumes.len() - defined().count(),
        };
        Self { variant: variant.to_string(), fold, volumes, mean }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per volume per class plus `mean` rows; distances only on retina rows.
    pub fn to_csv(&self) -> String {
        let fold = self.fold.map(|f| f.to_string()).unwrap_or_default();
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::from("variant,fold,volume_id,class,dsc,assd_um,hd_um\n");
        let rows = self
            .volumes
            .iter()
            .map(|v| (v.volume_id.as_str(), v.dsc_retina, v.dsc_ped, v.assd_um, v.hd_um))
            .chain(std::iter::once(("mean", self.mean.dsc_retina, self.mean.dsc_ped, self.mean.assd_um, self.mean.hd_um)));
        for (id, dr, dp, assd, hd) in rows {
            s += &format!("{},{fold},{id},retina,{dr},{},{}\n", self.variant, opt(assd), opt(hd));
            s += &format!("{},{fold},{id},ped,{dp},,\n", self.variant);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(dims: Dims3, data: Vec<u8>) -> LabelMap {
        LabelMap::new(dims, Spacing::new(1.0, 1.0, 1.0), data).unwrap()
    }

    fn one_hot(truth: &[u8], classes: usize) -> Vec<f64> {
        let v = truth.len();
        let mut p = vec![0.0; classes * v];
        for (i, &t) in truth.iter().enumerate() {
            p[t as usize * v + i] = 1.0;
        }
        p
    }

    fn random_probs(rng: &mut ChaCha8Rng, classes: usize, v: usize) -> Vec<f64> {
        let mut p = vec![0.0; classes * v];
        for i in 0..v {
            let e: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() + 0.05).collect();
            let s: f64 = e.iter().sum();
            for c in 0..classes {
                p[c * v + i] = e[c] / s;
            }
        }
        p
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let truth = vec![0, 1, 2, 1, 0, 0, 2, 1];
        let w = class_weights(&truth, 3, WeightingScheme::InverseFrequency).unwrap();
        let l = generalized_dice_raw(&one_hot(&truth, 3), &truth, &w).unwrap();
        assert!(l.loss.abs() <= 1e-6);
    }

    #[test]
    fn total_miss_has_unit_loss() {
        let truth = vec![0, 0, 1, 1, 2, 2];
        let pred: Vec<u8> = truth.iter().map(|&t| (t + 1) % 3).collect();
        let w = class_weights(&truth, 3, WeightingScheme::InverseFrequency).unwrap();
        let l = generalized_dice_raw(&one_hot(&pred, 3), &truth, &w).unwrap();
        assert!((l.loss - 1.0).abs() <= 1e-6, "{}", l.loss);
    }

    #[test]
    fn frequency_weights() {
        let mut t = vec![0u8; 90];
        t.extend([1u8; 9]);
        t.push(2);
        let w = class_weights(&t, 3, WeightingScheme::InverseFrequency).unwrap().w;
        let expect = [100.0 / 270.0, 100.0 / 27.0, 100.0 / 3.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((w[1] / w[0] - 10.0).abs() < 1e-12 && (w[2] / w[0] - 90.0).abs() < 1e-12);
        let w = class_weights(&[0, 1, 0, 1], 2, WeightingScheme::InverseFrequency).unwrap().w;
        assert_eq!(w[0], w[1]);
        let w = class_weights(&[0, 0, 0, 1], 3, WeightingScheme::InverseFrequency).unwrap().w;
        assert!(w.iter().all(|v| v.is_finite()));
        assert_eq!(w[2], 4.0 / 3.0);
        let w = class_weights(&[0, 0, 1], 2, WeightingScheme::InverseSquaredVolume).unwrap().w;
        assert_eq!(w, vec![0.25, 1.0]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let v = 64;
            let truth: Vec<u8> = (0..v).map(|_| rng.random_range(0..3)).collect();
            let p = random_probs(&mut rng, 3, v);
            let w = class_weights(&truth, 3, WeightingScheme::InverseFrequency).unwrap();
            let g = generalized_dice_raw(&p, &truth, &w).unwrap().grad;
            let h = 1e-6;
            for j in 0..p.len() {
                let (mut pp, mut pm) = (p.clone(), p.clone());
                pp[j] += h;
                pm[j] -= h;
                let fd = (generalized_dice_raw(&pp, &truth, &w).unwrap().loss - generalized_dice_raw(&pm, &truth, &w).unwrap().loss) / (2.0 * h);
                assert!((fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-8) < 1e-3, "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn moving_mass_toward_truth_lowers_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let v = 27;
            let truth: Vec<u8> = (0..v).map(|_| rng.random_range(0..3)).collect();
            let mut p = random_probs(&mut rng, 3, v);
            let w = class_weights(&truth, 3, WeightingScheme::InverseFrequency).unwrap();
            let before = generalized_dice_raw(&p, &truth, &w).unwrap().loss;
            let i = rng.random_range(0..v);
            let t = truth[i] as usize;
            let other = (t + 1 + rng.random_range(0..2)) % 3;
            let delta = p[other * v + i] * 0.5;
            p[other * v + i] -= delta;
            p[t * v + i] += delta;
            assert!(generalized_dice_raw(&p, &truth, &w).unwrap().loss < before);
        }
    }

    #[test]
    fn batch_loss_equals_loss_over_concatenated_voxels() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = 10;
        let truth: Vec<u8> = (0..2 * v).map(|_| rng.random_range(0..3)).collect();
        let (p0, p1) = (random_probs(&mut rng, 3, v), random_probs(&mut rng, 3, v));
        let batch: Vec<f64> = p0.iter().chain(&p1).copied().collect();
        // same voxels laid out as one sample of 2V voxels
        let mut flat = vec![0.0; 3 * 2 * v];
        for c in 0..3 {
            flat[c * 2 * v..c * 2 * v + v].copy_from_slice(&p0[c * v..(c + 1) * v]);
            flat[c * 2 * v + v..(c + 1) * 2 * v].copy_from_slice(&p1[c * v..(c + 1) * v]);
        }
        let w = class_weights(&truth, 3, WeightingScheme::InverseFrequency).unwrap();
        let a = generalized_dice_batch(&batch, 2, &truth, &w).unwrap();
        let b = generalized_dice_raw(&flat, &truth, &w).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
        assert_eq!(a.grad[0], b.grad[0]);
    }

    #[test]
    fn roughness_of_planes_and_zigzags() {
        let dims = Dims3::new(5, 6, 3);
        let flat: Vec<bool> = (0..dims.len()).map(|i| dims.coords(i).1 <= 3).collect();
        assert_eq!(boundary_roughness(&flat, dims), 0.0);
        let tilted: Vec<bool> = (0..dims.len()).map(|i| dims.coords(i).1 <= dims.coords(i).0).collect();
        assert_eq!(boundary_roughness(&tilted, dims), 0.0);
        // lower boundary 2,4,2,4,2 along W: |second difference| = 4 at 3 interior columns per row
        let zig: Vec<bool> = (0..dims.len()).map(|i| dims.coords(i).1 <= 2 + 2 * (dims.coords(i).0 % 2)).collect();
        let r = boundary_roughness(&zig, dims);
        assert_eq!(r, (4.0 * 9.0) / (9.0 + 5.0));
    }

    #[test]
    fn shape_mismatch_is_an_argument_error() {
        let w = ClassWeights::uniform(3);
        assert!(matches!(generalized_dice_raw(&[0.5f64; 5], &[0, 1], &w), Err(Error::Argument(_))));
    }

    #[test]
    fn dice_examples() {
        let dims = Dims3::new(4, 4, 1);
        let mut a = vec![0u8; 16];
        let mut b = vec![0u8; 16];
        a[..8].fill(1);
        b[4..12].fill(1);
        let (a, b) = (labels(dims, a), labels(dims, b));
        assert_eq!(dice_coefficient(&a, &b, 1).unwrap(), 0.5);
        assert_eq!(dice_coefficient(&a, &a, 1).unwrap(), 1.0);
        assert_eq!(dice_coefficient(&a, &b, 2).unwrap(), 1.0);
        let empty = labels(dims, vec![0; 16]);
        assert_eq!(dice_coefficient(&a, &empty, 1).unwrap(), 0.0);
        assert!(matches!(dice_coefficient(&a, &b, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn one_axial_step_is_one_spacing() {
        let dims = Dims3::new(1, 2, 1);
        let a = labels(dims, vec![1, 0]);
        let b = labels(dims, vec![0, 1]);
        let d = surface_distances(&a, &b, &[1], Spacing::new(6.4, 9.1, 12.8)).unwrap();
        assert_eq!((d.assd, d.hd), (9.1, 9.1));
        let same = surface_distances(&a, &a, &[1], Spacing::new(6.4, 9.1, 12.8)).unwrap();
        assert_eq!((same.assd, same.hd), (0.0, 0.0));
    }

    #[test]
    fn empty_surface_is_undefined() {
        let dims = Dims3::new(2, 2, 2);
        let a = labels(dims, vec![1; 8]);
        let b = labels(dims, vec![0; 8]);
        assert!(matches!(surface_distances(&a, &b, &[1], Spacing::new(1.0, 1.0, 1.0)), Err(Error::UndefinedDistance(_))));
    }

    #[test]
    fn boundary_of_a_solid_cube_is_its_shell() {
        let dims = Dims3::new(5, 5, 5);
        let b = boundary(&vec![true; 125], dims);
        assert_eq!(b.iter().filter(|&&x| x).count(), 125 - 27);
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = Dims3::new(7, 5, 6);
        let sp = Spacing::new(1.3, 0.7, 2.1);
        for density in [0.02, 0.2] {
            let seed: Vec<bool> = (0..dims.len()).map(|_| rng.random::<f64>() < density).collect();
            let edt = squared_distance_transform(&seed, dims, sp);
            for i in 0..dims.len() {
                let (w, h, d) = dims.coords(i);
                let mut best = f64::INFINITY;
                for j in (0..dims.len()).filter(|&j| seed[j]) {
                    let (w2, h2, d2) = dims.coords(j);
                    let dx = (w as f64 - w2 as f64) * sp.w;
                    let dy = (h as f64 - h2 as f64) * sp.h;
                    let dz = (d as f64 - d2 as f64) * sp.d;
                    best = best.min(dx * dx + dy * dy + dz * dz);
                }
                assert!((edt[i] - best).abs() < 1e-9, "{} vs {best}", edt[i]);
            }
        }
    }

    #[test]
    fn csv_has_a_row_per_volume_and_class() {
        let v = VolumeMetrics { volume_id: "p0_od".into(), dsc_retina: 1.0, dsc_ped: 0.5, assd_um: Some(0.0), hd_um: None };
        let r = MetricsReport::new("unet", Some(2), vec![v]);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 4);
        assert!(csv.contains("unet,2,p0_od,retina,1,0,\n"));
        assert_eq!(r.mean.undefined_distances, 0);
    }

    fn arb_map() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (prop::collection::vec(0u8..3, 64), prop::collection::vec(0u8..3, 64))
    }

    proptest! {
        #[test]
        fn dice_is_symmetric_and_bounded((a, b) in arb_map()) {
            let dims = Dims3::new(4, 4, 4);
            let (a, b) = (labels(dims, a), labels(dims, b));
            for c in 0..3 {
                let x = dice_coefficient(&a, &b, c).unwrap();
                prop_assert_eq!(x, dice_coefficient(&b, &a, c).unwrap());
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn surface_distances_symmetric_and_scale((a, b) in arb_map(), k in 0i32..4) {
            let dims = Dims3::new(4, 4, 4);
            let (a, b) = (labels(dims, a), labels(dims, b));
            let sp = Spacing::new(0.9, 1.7, 1.1);
            let ab = surface_distances(&a, &b, &[1], sp);
            if let Ok(ab) = ab {
                let ba = surface_distances(&b, &a, &[1], sp).unwrap();
                prop_assert!((ab.assd - ba.assd).abs() < 1e-12);
                prop_assert_eq!(ab.hd, ba.hd);
                // power-of-two scale factors keep the arithmetic exact
                let lambda = 2f64.powi(k - 1);
                let sc = surface_distances(&a, &b, &[1], sp.scaled(lambda)).unwrap();
                prop_assert_eq!(sc.hd, ab.hd * lambda);
                prop_assert_eq!(sc.assd, ab.assd * lambda);
            }
        }

        #[test]
        fn loss_is_in_unit_interval(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<u8> = (0..27).map(|_| rng.random_range(0..3)).collect();
            let p = random_probs(&mut rng, 3, 27);
            let w = class_weights(&truth, 3, WeightingScheme::InverseFrequency).unwrap();
            let l = generalized_dice_raw(&p, &truth, &w).unwrap().loss;
            prop_assert!((0.0..=1.0).contains(&l));
        }
    }
}
