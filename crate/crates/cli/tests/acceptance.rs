//! Acceptance suite. Every test prints one `criterion N: PASS|FAIL ...` line to
//! stderr and then asserts, so the test log doubles as a report.
//! Tolerances and desk-scale configurations are pinned as constants below.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use octseg::augment::{clear_band, IntensityAugmentSpec, ShapeCorruptionSpec};
use octseg::nn::{AnyNet, Cdae, CdaeConfig, NetworkCheckpoint, Tensor, UNet, UNetConfig, VolumetricNet};
use octseg::objectives::{
    boundary_roughness, class_weights, dice_coefficient, dice_counts, generalized_dice_raw, surface_distances, DiceCounts, WeightingScheme,
};
use octseg::phantom::{generate_phantom, PhantomSpec};
use octseg::pipeline::{fuse, make_folds, predict_case, refine, train_cdae, train_unet, FusionOptions, LabeledVolume, NamedShape, PatientVolume, TrainConfig};
use octseg::preprocess::binarize;
use octseg::volume::{BACKGROUND, NETWORK_DIMS, PED, RETINA};
use octseg::{BinaryShape, Dims3, LabelMap, Spacing};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DISTANCE_TOL: f64 = 1e-9;
const GRAD_REL_TOL: f64 = 1e-3;
const PROB_SUM_TOL: f64 = 1e-5;
const ROUNDTRIP_TOL: f64 = 1e-6;
const OVERFIT_RETINA_DSC: f64 = 0.95;
const OVERFIT_PED_DSC: f64 = 0.7;

/// Written straight to stderr so the line shows even when the harness captures output.
fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1. Metrics against brute force

fn random_labels(rng: &mut ChaCha8Rng, dims: Dims3) -> Vec<u8> {
    let mut data = vec![BACKGROUND; dims.len()];
    for (class, blobs) in [(RETINA, rng.random_range(1..=3)), (PED, rng.random_range(0..=2))] {
        for _ in 0..blobs {
            let c: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..12.0));
            let r: [f64; 3] = std::array::from_fn(|_| rng.random_range(1.5..5.0));
            for (i, l) in data.iter_mut().enumerate() {
                let (w, h, d) = dims.coords(i);
                let q = [w as f64, h as f64, d as f64];
                if (0..3).map(|a| ((q[a] - c[a]) / r[a]).powi(2)).sum::<f64>() <= 1.0 {
                    *l = class;
                }
            }
        }
    }
    for l in data.iter_mut() {
        if rng.random::<f64>() < 0.03 {
            *l = rng.random_range(0..3);
        }
    }
    data
}

fn brute_boundary(mask: &[bool], dims: Dims3) -> Vec<(usize, usize, usize)> {
    let inside = |w: isize, h: isize, d: isize| {
        w >= 0
            && h >= 0
            && d >= 0
            && (w as usize) < dims.w
            && (h as usize) < dims.h
            && (d as usize) < dims.d
            && mask[dims.index(w as usize, h as usize, d as usize)]
    };
    let mut out = Vec::new();
    for d in 0..dims.d {
        for h in 0..dims.h {
            for w in 0..dims.w {
                let (wi, hi, di) = (w as isize, h as isize, d as isize);
                if !inside(wi, hi, di) {
                    continue;
                }
                let steps = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)];
                if steps.iter().any(|&(a, b, c)| !inside(wi + a, hi + b, di + c)) {
                    out.push((w, h, d));
                }
            }
        }
    }
    out
}

/// All-pairs ASSD and HD, or None when either surface is empty.
fn brute_distances(a: &[bool], b: &[bool], dims: Dims3, s: Spacing) -> Option<(f64, f64)> {
    let (ba, bb) = (brute_boundary(a, dims), brute_boundary(b, dims));
    if ba.is_empty() || bb.is_empty() {
        return None;
    }
    let dist = |p: (usize, usize, usize), q: (usize, usize, usize)| {
        let dw = (p.0 as f64 - q.0 as f64) * s.w;
        let dh = (p.1 as f64 - q.1 as f64) * s.h;
        let dd = (p.2 as f64 - q.2 as f64) * s.d;
        (dw * dw + dh * dh + dd * dd).sqrt()
    };
    let (mut sum, mut hd) = (0.0, 0.0f64);
    for (from, to) in [(&ba, &bb), (&bb, &ba)] {
        for &p in from.iter() {
            let m = to.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min);
            sum += m;
            hd = hd.max(m);
        }
    }
    Some((sum / (ba.len() + bb.len()) as f64, hd))
}

#[test]
fn criterion_1_metric_oracle_equivalence() {
    let t = Instant::now();
    let dims = Dims3::new(12, 12, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut dsc_checks, mut dist_checks, mut undefined, mut worst) = (0, 0, 0, 0.0f64);
    let mut failures = Vec::new();
    for case in 0..60 {
        let s = Spacing::new(rng.random_range(3.0..15.0), rng.random_range(3.0..15.0), rng.random_range(3.0..15.0));
        let a = LabelMap::new(dims, s, random_labels(&mut rng, dims)).unwrap();
        let b = LabelMap::new(dims, s, random_labels(&mut rng, dims)).unwrap();
        for set in [&[RETINA][..], &[PED][..], &[RETINA, PED][..]] {
            let ma: Vec<bool> = a.data().iter().map(|l| set.contains(l)).collect();
            let mb: Vec<bool> = b.data().iter().map(|l| set.contains(l)).collect();
            let (na, nb) = (ma.iter().filter(|&&x| x).count(), mb.iter().filter(|&&x| x).count());
            let inter = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
            let counts = dice_counts(&a, &b, set).unwrap();
            let expect = DiceCounts { intersection: inter, a: na, b: nb };
            let ratio = if na + nb == 0 { 1.0 } else { (2 * inter) as f64 / (na + nb) as f64 };
            let single = if set.len() == 1 { dice_coefficient(&a, &b, set[0]).unwrap() } else { ratio };
            if counts != expect || counts.value() != ratio || single != ratio {
                failures.push(format!("case {case} set {set:?}: dice {counts:?} vs {expect:?}"));
            }
            dsc_checks += 1;
            match (surface_distances(&a, &b, set, s), brute_distances(&ma, &mb, dims, s)) {
                (Ok(got), Some((assd, hd))) => {
                    let err = (got.assd - assd).abs().max((got.hd - hd).abs());
                    worst = worst.max(err);
                    if err > DISTANCE_TOL {
                        failures.push(format!("case {case} set {set:?}: {got:?} vs ({assd}, {hd})"));
                    }
                    dist_checks += 1;
                }
                (Err(octseg::Error::UndefinedDistance(_)), None) => undefined += 1,
                (got, want) => failures.push(format!("case {case} set {set:?}: {got:?} vs {want:?}")),
            }
        }
    }
    let detail = format!(
        "60 maps, {dsc_checks} DSC checks exact, {dist_checks} distance checks max err {worst:.2e} (tol {DISTANCE_TOL:e}), {undefined} undefined agreed, {:.1?}; {}",
        t.elapsed(),
        failures.first().map(String::as_str).unwrap_or("no mismatches")
    );
    verdict(1, "metric oracle equivalence", failures.is_empty() && dist_checks >= 50, &detail);
}

// ---------------------------------------------------------------------------
// 2. Generalized Dice gradient

#[test]
fn criterion_2_loss_gradient_check() {
    let dims = Dims3::new(4, 4, 4);
    let v = dims.len();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let truth: Vec<u8> = (0..v).map(|_| rng.random_range(0..3)).collect();
        let logits: Vec<f64> = (0..3 * v).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut probs = vec![0.0f64; 3 * v];
        for i in 0..v {
            let z: f64 = (0..3).map(|c| logits[c * v + i].exp()).sum();
            for c in 0..3 {
                probs[c * v + i] = logits[c * v + i].exp() / z;
            }
        }
        let scheme = if rng.random::<bool>() { WeightingScheme::InverseFrequency } else { WeightingScheme::InverseSquaredVolume };
        let weights = class_weights(&truth, 3, scheme).unwrap();
        let analytic = generalized_dice_raw(&probs, &truth, &weights).unwrap().grad;
        for j in 0..probs.len() {
            let mut p = probs.clone();
            p[j] = probs[j] + h;
            let up = generalized_dice_raw(&p, &truth, &weights).unwrap().loss;
            p[j] = probs[j] - h;
            let down = generalized_dice_raw(&p, &truth, &weights).unwrap().loss;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - analytic[j]).abs() / analytic[j].abs().max(fd.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    verdict(2, "generalized Dice gradient", worst < GRAD_REL_TOL, &format!("25 instances of 4x4x4x3, max rel err {worst:.2e} (tol {GRAD_REL_TOL:e})"));
}

// ---------------------------------------------------------------------------
// 3. Architecture conformance

/// The autoencoder's layer table: output shape and channel count of every row.
const CDAE_TABLE: [(&str, usize); 23] = [
    ("96×256×32", 8),
    ("96×128×32", 16),
    ("96×128×32", 32),
    ("96×64×32", 32),
    ("96×64×32", 32),
    ("48×32×16", 32),
    ("48×32×16", 64),
    ("24×16×8", 64),
    ("24×16×8", 64),
    ("12×8×4", 128),
    ("12×8×4", 128),
    ("12×8×4", 8),
    ("24×16×8", 8),
    ("24×16×8", 128),
    ("48×32×16", 128),
    ("48×32×16", 64),
    ("96×64×32", 64),
    ("96×64×32", 32),
    ("96×128×32", 32),
    ("96×128×32", 16),
    ("96×256×32", 16),
    ("96×256×32", 8),
    ("96×256×32", 2),
];

fn parse_shape(s: &str) -> Dims3 {
    let v: Vec<usize> = s.split('×').map(|x| x.parse().unwrap()).collect();
    Dims3::new(v[0], v[1], v[2])
}

#[test]
fn criterion_3_architecture_conformance() {
    let t = Instant::now();
    let cdae = Cdae::<f32>::new(CdaeConfig::default(), 0).unwrap();
    let got: Vec<(Dims3, usize)> = cdae.layer_shapes().iter().map(|l| (l.dims, l.channels)).collect();
    let want: Vec<(Dims3, usize)> = CDAE_TABLE.iter().map(|&(s, c)| (parse_shape(s), c)).collect();
    let table_ok = got == want;
    let bottleneck = got[11];
    let x = Tensor::from_vec(1, 1, NETWORK_DIMS, (0..NETWORK_DIMS.len()).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
    let y = cdae.forward(&x).unwrap();
    let cdae_out_ok = (y.n, y.c, y.dims) == (1, 2, NETWORK_DIMS);

    let unet = UNet::<f32>::new(UNetConfig::default(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let x = Tensor::from_vec(1, 1, NETWORK_DIMS, (0..NETWORK_DIMS.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let p = unet.forward(&x).unwrap();
    let v = NETWORK_DIMS.len();
    let worst_sum = (0..v).map(|i| ((0..3).map(|c| f64::from(p.data[c * v + i])).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    let unet_ok = (p.n, p.c, p.dims) == (1, 3, NETWORK_DIMS) && worst_sum <= PROB_SUM_TOL;
    let detail = format!(
        "autoencoder table {} (bottleneck {}x{}), autoencoder out ({}, {}, {}), U-Net out ({}, {}, {}) max |sum-1| {worst_sum:.1e} (tol {PROB_SUM_TOL:e}), {:.1?}",
        if table_ok { "matches" } else { "differs" },
        bottleneck.0,
        bottleneck.1,
        y.n,
        y.c,
        y.dims,
        p.n,
        p.c,
        p.dims,
        t.elapsed()
    );
    verdict(3, "architecture conformance", table_ok && cdae_out_ok && unet_ok, &detail);
}

// ---------------------------------------------------------------------------
// 4. Overfit capacity

/// Desk-scale overfit setup: a 32x64x16 grid and U-Net channels halved.
fn overfit_setup() -> (TrainConfig, Vec<LabeledVolume<f32>>) {
    let grid = Dims3::new(32, 64, 16);
    let spec = PhantomSpec {
        shape: grid,
        spacing: Spacing::new(48.0, 12.0, 112.0),
        ped_count_range: [1, 2],
        ped_height_range: [60.0, 120.0],
        ped_radius_range: [150.0, 300.0],
        noise_level: 0.0,
        stripe_artifact_rate: 0.0,
        ..Default::default()
    };
    let cases = (0..4)
        .map(|i| {
            let (volume, labels) = generate_phantom::<f32>(&spec.with_seed(100 + i)).unwrap();
            LabeledVolume { id: format!("overfit{i}"), volume, labels }
        })
        .collect();
    let mut cfg = TrainConfig { epochs: 200, seed: 1, ..Default::default() };
    cfg.preprocess.grid = grid;
    cfg.unet = cfg.unet.reduced(2, grid);
    cfg.cdae.input_shape = grid;
    cfg.augment = IntensityAugmentSpec::disabled();
    cfg.validate().unwrap();
    (cfg, cases)
}

#[test]
fn criterion_4_overfit_capacity() {
    let t = Instant::now();
    let (cfg, cases) = overfit_setup();
    let diag = tempfile::tempdir().unwrap();
    let out = train_unet(&cfg, &cases, &[], diag.path(), &mut |_| {}).unwrap();
    let AnyNet::UNet(net) = out.checkpoint.restore().unwrap() else { panic!("expected a U-Net checkpoint") };
    let (mut retina, mut ped) = (0.0, 0.0);
    for c in &cases {
        let pred = predict_case(&net, &cfg.preprocess, &c.volume).unwrap().to_label_map().unwrap();
        retina += dice_coefficient(&pred, &c.labels, RETINA).unwrap();
        ped += dice_coefficient(&pred, &c.labels, PED).unwrap();
    }
    let n = cases.len() as f64;
    let (retina, ped) = (retina / n, ped / n);
    let detail = format!(
        "4 noiseless phantoms, {} epochs, channels {:?}, lr {}: train retina DSC {retina:.4} (>= {OVERFIT_RETINA_DSC}), PED DSC {ped:.4} (>= {OVERFIT_PED_DSC}), {:.0?}",
        cfg.epochs,
        cfg.unet.encoder_channels,
        cfg.initial_lr,
        t.elapsed()
    );
    verdict(4, "overfit capacity", retina >= OVERFIT_RETINA_DSC && ped >= OVERFIT_PED_DSC, &detail);
}

// ---------------------------------------------------------------------------
// 5. Refinement efficacy

/// Segmentation failure under a stripe artifact: tissue in the attenuated rows is
/// lost, plus sparse label noise.
fn stripe_damaged(truth: &BinaryShape, rng: &mut ChaCha8Rng, stripes: usize, half_width: usize, flip_rate: f64) -> BinaryShape {
    let dims = truth.dims();
    let rows: Vec<usize> = (0..dims.h).filter(|&h| (0..dims.d).any(|d| (0..dims.w).any(|w| truth.get(w, h, d)))).collect();
    let mut data = truth.data().to_vec();
    for _ in 0..stripes {
        let row = rng.random_range(rows[0]..=rows[rows.len() - 1]);
        clear_band(&mut data, dims, row, half_width);
    }
    for x in data.iter_mut() {
        if rng.random::<f64>() < flip_rate {
            *x ^= 1;
        }
    }
    BinaryShape::new(dims, truth.spacing(), data).unwrap()
}

#[test]
fn criterion_5_refinement_efficacy() {
    let t = Instant::now();
    let grid = Dims3::new(32, 64, 16);
    let spec = PhantomSpec {
        shape: grid,
        spacing: Spacing::new(48.0, 12.0, 112.0),
        ped_count_range: [0, 2],
        ped_height_range: [60.0, 120.0],
        ped_radius_range: [150.0, 300.0],
        ..Default::default()
    };
    let shape = |seed: u64| binarize(&generate_phantom::<f32>(&spec.with_seed(seed)).unwrap().1);
    let train: Vec<NamedShape> = (0..32).map(|i| NamedShape { id: format!("t{i}"), shape: shape(1000 + i) }).collect();
    let val: Vec<NamedShape> = (0..4).map(|i| NamedShape { id: format!("v{i}"), shape: shape(3000 + i) }).collect();
    let mut cfg = TrainConfig { epochs: 30, seed: 5, ..Default::default() };
    cfg.preprocess.grid = grid;
    cfg.unet = cfg.unet.reduced(4, grid);
    cfg.cdae.input_shape = grid;
    cfg.corruption = ShapeCorruptionSpec {
        flip_rate: 0.01,
        elastic_grid: [8, 16, 4],
        elastic_sigma: 1.0,
        ellipsoid_count_range: [0, 3],
        semi_axis_range: [[1.0, 4.0], [1.0, 4.0], [1.0, 2.0]],
        band_count_range: [0, 2],
        band_half_width_range: [0, 1],
        ..Default::default()
    };
    cfg.validate().unwrap();
    let diag = tempfile::tempdir().unwrap();
    let out = train_cdae::<f32>(&cfg, &train, &val, diag.path(), &mut |_| {}).unwrap();
    let AnyNet::Cdae(net) = out.checkpoint.restore().unwrap() else { panic!("expected an autoencoder checkpoint") };

    let n = 20;
    let (mut dsc_in, mut dsc_out, mut rough_in, mut rough_out) = (0.0, 0.0, 0.0, 0.0);
    let bits = |s: &BinaryShape| s.data().iter().map(|&x| x == 1).collect::<Vec<_>>();
    for k in 0..n {
        let truth = shape(5000 + k);
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let input = stripe_damaged(&truth, &mut rng, 2, 1, 0.005);
        let refined = refine(&net, &input).unwrap();
        dsc_in += DiceCounts::from_masks(bits(&input), bits(&truth)).value();
        dsc_out += DiceCounts::from_masks(bits(&refined), bits(&truth)).value();
        rough_in += boundary_roughness(&bits(&input), grid);
        rough_out += boundary_roughness(&bits(&refined), grid);
    }
    let nf = n as f64;
    let (dsc_in, dsc_out, rough_in, rough_out) = (dsc_in / nf, dsc_out / nf, rough_in / nf, rough_out / nf);
    let detail = format!(
        "{n} stripe-damaged masks: mean DSC {dsc_in:.4} -> {dsc_out:.4}, roughness {rough_in:.3} -> {rough_out:.3}, {:.0?}",
        t.elapsed()
    );
    verdict(5, "refinement efficacy", dsc_out > dsc_in && rough_out <= rough_in, &detail);
}

// ---------------------------------------------------------------------------
// 6. Fusion

/// Written from the rule description alone: presence via 6-connected components of
/// at least `min_blob` voxels, then per-column relabelling inside the refined shape.
fn oracle_fuse(pred: &[u8], refined: &[u8], dims: Dims3, min_blob: usize) -> (Vec<u8>, bool, usize) {
    let mut seen = vec![false; pred.len()];
    let mut present = false;
    for start in 0..pred.len() {
        if pred[start] != PED || seen[start] {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (w, h, d) = dims.coords(i);
            let mut nbrs = Vec::new();
            if w > 0 {
                nbrs.push(dims.index(w - 1, h, d));
            }
            if w + 1 < dims.w {
                nbrs.push(dims.index(w + 1, h, d));
            }
            if h > 0 {
                nbrs.push(dims.index(w, h - 1, d));
            }
            if h + 1 < dims.h {
                nbrs.push(dims.index(w, h + 1, d));
            }
            if d > 0 {
                nbrs.push(dims.index(w, h, d - 1));
            }
            if d + 1 < dims.d {
                nbrs.push(dims.index(w, h, d + 1));
            }
            for j in nbrs {
                if pred[j] == PED && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        present |= size >= min_blob.max(1);
    }
    if !present {
        return (refined.iter().map(|&r| if r == 1 { RETINA } else { BACKGROUND }).collect(), false, 0);
    }
    let mut out = vec![BACKGROUND; pred.len()];
    let mut extended = 0;
    for d in 0..dims.d {
        for w in 0..dims.w {
            let col = |h: usize| dims.index(w, h, d);
            let deepest_ped = (0..dims.h).filter(|&h| pred[col(h)] == PED).max();
            if deepest_ped.is_some() {
                let old = (0..dims.h).filter(|&h| pred[col(h)] != BACKGROUND).max();
                let new = (0..dims.h).filter(|&h| refined[col(h)] == 1).max();
                if new.is_some() && (old.is_none() || new > old) {
                    extended += 1;
                }
            }
            for h in 0..dims.h {
                let i = col(h);
                if refined[i] == 1 {
                    out[i] = match (pred[i], deepest_ped) {
                        (BACKGROUND, Some(p)) if h > p => PED,
                        (BACKGROUND, _) => RETINA,
                        (l, _) => l,
                    };
                }
            }
        }
    }
    (out, true, extended)
}

/// Layered columns (retina over PED) with a jittered lower boundary, or plain noise.
fn fuzz_pair(rng: &mut ChaCha8Rng, dims: Dims3) -> (Vec<u8>, Vec<u8>) {
    let mut pred = vec![BACKGROUND; dims.len()];
    let mut refined = vec![0u8; dims.len()];
    if rng.random::<f64>() < 0.2 {
        for i in 0..dims.len() {
            pred[i] = rng.random_range(0..3);
            refined[i] = rng.random_range(0..2);
        }
        return (pred, refined);
    }
    let ped_rate = [0.0, 0.05, 0.4][rng.random_range(0..3)];
    for d in 0..dims.d {
        for w in 0..dims.w {
            let top = rng.random_range(0..dims.h / 3);
            let bm = rng.random_range(top..dims.h);
            let ped = if rng.random::<f64>() < ped_rate { rng.random_range(bm..dims.h) } else { bm };
            for h in top..bm {
                pred[dims.index(w, h, d)] = RETINA;
            }
            for h in bm..ped {
                pred[dims.index(w, h, d)] = PED;
            }
            let rtop = (top as isize + rng.random_range(-2i64..=2) as isize).clamp(0, dims.h as isize - 1) as usize;
            let rbot = (ped as isize + rng.random_range(-2i64..=4) as isize).clamp(rtop as isize, dims.h as isize) as usize;
            for h in rtop..rbot {
                refined[dims.index(w, h, d)] = 1;
            }
        }
    }
    for i in 0..dims.len() {
        if rng.random::<f64>() < 0.02 {
            pred[i] = rng.random_range(0..3);
        }
        if rng.random::<f64>() < 0.02 {
            refined[i] ^= 1;
        }
    }
    (pred, refined)
}

#[test]
fn criterion_6_fusion_suite() {
    let sp = Spacing::new(10.0, 5.0, 20.0);
    let mut failures: Vec<String> = Vec::new();

    // Case (a): the output is exactly the refined shape, with zero PED voxels or a lone one filtered out.
    let dims = Dims3::new(5, 20, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let refined: Vec<u8> = (0..dims.len()).map(|_| rng.random_range(0..2)).collect();
    let mut pred: Vec<u8> = (0..dims.len()).map(|_| rng.random_range(0..2)).collect();
    let r = BinaryShape::new(dims, sp, refined.clone()).unwrap();
    let retina_of_refined: Vec<u8> = refined.iter().map(|&x| if x == 1 { RETINA } else { BACKGROUND }).collect();
    let f = fuse(&LabelMap::new(dims, sp, pred.clone()).unwrap(), &r, &FusionOptions::default()).unwrap();
    if f.labels.data() != retina_of_refined.as_slice() || f.ped_present_in_unet {
        failures.push("zero-PED case".into());
    }
    pred[dims.index(2, 10, 1)] = PED;
    let f = fuse(&LabelMap::new(dims, sp, pred.clone()).unwrap(), &r, &FusionOptions { min_ped_blob: 2 }).unwrap();
    if f.labels.data() != retina_of_refined.as_slice() || f.ped_present_in_unet {
        failures.push("single filtered PED voxel".into());
    }

    // Extension: retina 10..=30 and PED 31..=40 in one column, refined shape reaching row 44.
    let col = Dims3::new(1, 64, 1);
    let mut pred = vec![BACKGROUND; 64];
    pred[10..=30].fill(RETINA);
    pred[31..=40].fill(PED);
    let mut refined = vec![0u8; 64];
    refined[10..=44].fill(1);
    let f = fuse(&LabelMap::new(col, sp, pred.clone()).unwrap(), &BinaryShape::new(col, sp, refined).unwrap(), &FusionOptions::default()).unwrap();
    let changed: Vec<usize> = (0..64).filter(|&h| f.labels.data()[h] != pred[h]).collect();
    if changed != (41..=44).collect::<Vec<_>>() || (41..=44).any(|h| f.labels.data()[h] != PED) || f.columns_extended != 1 {
        failures.push(format!("extension changed rows {changed:?}"));
    }

    // Fuzz against the oracle, including extension rows and the support invariant.
    let cases = 1500;
    let mut extended_columns = 0;
    for case in 0..cases {
        let dims = Dims3::new(rng.random_range(1..7), rng.random_range(4..24), rng.random_range(1..4));
        let (pred, refined) = fuzz_pair(&mut rng, dims);
        let min_blob = [0, 1, 2, 4][rng.random_range(0..4)];
        let got = fuse(
            &LabelMap::new(dims, sp, pred.clone()).unwrap(),
            &BinaryShape::new(dims, sp, refined.clone()).unwrap(),
            &FusionOptions { min_ped_blob: min_blob },
        )
        .unwrap();
        let (want, present, extended) = oracle_fuse(&pred, &refined, dims, min_blob);
        let support = got.labels.data().iter().zip(&refined).all(|(&l, &r)| (l != BACKGROUND) == (r == 1));
        if got.labels.data() != want.as_slice() || got.ped_present_in_unet != present || got.columns_extended != extended || !support {
            failures.push(format!("fuzz case {case} on {dims}"));
        }
        extended_columns += extended;
    }
    let detail = format!(
        "zero-PED and filtered single-voxel PED give the refined shape, extension fills rows 41..=44 only, {cases} fuzz cases ({extended_columns} extended columns) agree with the oracle and keep support = refined; {}",
        failures.first().map(String::as_str).unwrap_or("no mismatches")
    );
    verdict(6, "fusion unit suite", failures.is_empty(), &detail);
}

// ---------------------------------------------------------------------------
// 7. Cross-validation integrity

#[test]
fn criterion_7_fold_integrity() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut failures = Vec::new();
    let mut plans = 0;
    for patients in 5..=50usize {
        for rep in 0..3 {
            let volumes: Vec<PatientVolume> = (0..patients)
                .flat_map(|p| {
                    let eyes = rng.random_range(1..=2);
                    (0..eyes).map(move |e| PatientVolume { id: format!("p{p}_e{e}"), patient: format!("p{p}") })
                })
                .collect();
            let seed = rng.random();
            let plan = make_folds(&volumes, 5, [0.6, 0.2, 0.2], seed).unwrap();
            plans += 1;
            let owner: BTreeMap<&str, &str> = volumes.iter().map(|v| (v.id.as_str(), v.patient.as_str())).collect();
            for (f, sets) in plan.folds.iter().enumerate() {
                let pats = |ids: &[String]| ids.iter().map(|i| owner[i.as_str()]).collect::<std::collections::BTreeSet<_>>();
                let (tr, va, te) = (pats(&sets.train), pats(&sets.val), pats(&sets.test));
                if !tr.is_disjoint(&va) || !tr.is_disjoint(&te) || !va.is_disjoint(&te) {
                    failures.push(format!("{patients} patients rep {rep} fold {f}: leakage"));
                }
                if sets.train.len() + sets.val.len() + sets.test.len() != volumes.len() {
                    failures.push(format!("{patients} patients rep {rep} fold {f}: volumes lost or duplicated"));
                }
                for (got, ratio) in [(tr.len(), 0.6), (va.len(), 0.2), (te.len(), 0.2)] {
                    if (got as f64 - ratio * patients as f64).abs() > 1.0 {
                        failures.push(format!("{patients} patients rep {rep} fold {f}: {got} vs {ratio}"));
                    }
                }
            }
        }
    }
    let detail = format!("{plans} plans over 5..=50 patients x 5 folds; {}", failures.first().map(String::as_str).unwrap_or("no leakage, all ratios within one patient"));
    verdict(7, "cross-validation integrity", failures.is_empty(), &detail);
}

// ---------------------------------------------------------------------------
// 8. End-to-end determinism

const SMOKE_PHANTOM: &str = r#"{"shape":{"w":16,"h":64,"d":8},"spacing":{"w":96.0,"h":36.4,"d":224.0}}"#;
const SMOKE_CONFIG: &str = r#"{
  "epochs": 2,
  "preprocess": {"grid": {"w": 16, "h": 64, "d": 8}},
  "unet": {"encoder_channels": [2, 4, 8, 16, 32], "input_shape": {"w": 16, "h": 64, "d": 8}},
  "cdae": {"input_shape": {"w": 16, "h": 64, "d": 8}},
  "corruption": {"elastic_grid": [4, 16, 4]}
}"#;

fn octseg(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_octseg")).args(args).arg("--quiet").output().unwrap();
    if !out.status.success() {
        eprintln!("octseg {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.code().unwrap_or(-1)
}

fn chain(root: &Path) -> Vec<(String, i32)> {
    let (data, run) = (root.join("data"), root.join("run"));
    let (phantom, config) = (root.join("phantom.json"), root.join("train.json"));
    fs::write(&phantom, SMOKE_PHANTOM).unwrap();
    fs::write(&config, SMOKE_CONFIG).unwrap();
    let (data, run, phantom, config) = (data.to_str().unwrap(), run.to_str().unwrap(), phantom.to_str().unwrap(), config.to_str().unwrap());
    let steps: Vec<(&str, Vec<&str>)> = vec![
        ("generate", vec!["generate", "--n", "10", "--config", phantom, "--seed", "3", "--out", data]),
        ("folds", vec!["folds", "--data", data, "--config", config, "--seed", "3", "--out", run]),
        ("train-unet", vec!["train-unet", "--data", data, "--fold", "0", "--out", run]),
        ("train-cdae", vec!["train-cdae", "--data", data, "--fold", "0", "--out", run]),
        ("predict", vec!["predict", "--data", data, "--fold", "0", "--out", run]),
        ("refine", vec!["refine", "--fold", "0", "--out", run]),
        ("evaluate", vec!["evaluate", "--data", data, "--fold", "0", "--out", run]),
        ("report", vec!["report", "--data", data, "--out", run]),
    ];
    steps.into_iter().map(|(name, args)| (name.to_string(), octseg(&args))).collect()
}

fn json_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
        }
    }
    out
}

#[test]
fn criterion_8_end_to_end_determinism() {
    let t = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (chain(a.path()), chain(b.path()));
    let all_ok = ra.iter().chain(&rb).all(|(_, c)| *c == 0);
    let failed: Vec<_> = ra.iter().chain(&rb).filter(|(_, c)| *c != 0).map(|(n, c)| format!("{n} exit {c}")).collect();
    let reports_a = json_files(&a.path().join("run/reports"));
    let reports_b = json_files(&b.path().join("run/reports"));
    let identical = !reports_a.is_empty() && reports_a == reports_b;
    let names: Vec<String> = reports_a.keys().map(|p| p.display().to_string()).collect();
    let detail = format!(
        "two runs of {} steps, {}; reports {names:?} {}, {:.1?}",
        ra.len(),
        if all_ok { "all exit 0".to_string() } else { failed.join(", ") },
        if identical { "byte-identical" } else { "differ" },
        t.elapsed()
    );
    verdict(8, "end-to-end determinism", all_ok && identical, &detail);
}

// ---------------------------------------------------------------------------
// 9. Schedule and checkpoints

fn tiny_config(epochs: usize) -> (TrainConfig, Vec<LabeledVolume<f32>>) {
    let grid = Dims3::new(16, 64, 8);
    let spec = PhantomSpec { shape: grid, spacing: Spacing::new(96.0, 36.4, 224.0), ..Default::default() };
    let cases = (0..2)
        .map(|i| {
            let (volume, labels) = generate_phantom::<f32>(&spec.with_seed(900 + i)).unwrap();
            LabeledVolume { id: format!("tiny{i}"), volume, labels }
        })
        .collect();
    let mut cfg = TrainConfig { epochs, seed: 9, ..Default::default() };
    cfg.preprocess.grid = grid;
    cfg.unet = cfg.unet.reduced(16, grid);
    cfg.cdae.input_shape = grid;
    cfg.corruption.elastic_grid = [4, 16, 4];
    (cfg, cases)
}

fn max_abs_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| f64::from((x - y).abs())).fold(0.0, f64::max)
}

fn roundtrip(ckpt: &NetworkCheckpoint<f32>, dir: &Path, name: &str, x: &Tensor<f32>) -> f64 {
    let path = dir.join(name);
    ckpt.save(&path).unwrap();
    let original = ckpt.restore().unwrap();
    let loaded = NetworkCheckpoint::<f32>::load(&path).unwrap().restore().unwrap();
    let (ya, yb) = (original.as_dyn().forward(x).unwrap(), loaded.as_dyn().forward(x).unwrap());
    assert_eq!((ya.n, ya.c, ya.dims), (yb.n, yb.c, yb.dims));
    max_abs_diff(&ya, &yb)
}

#[test]
fn criterion_9_schedule_and_checkpoints() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (cfg, cases) = tiny_config(500);
    let mut lrs = Vec::new();
    let unet = train_unet(&cfg, &cases[..1], &[], dir.path(), &mut |e| lrs.push((e.epoch, e.lr))).unwrap();
    let mismatched: Vec<_> = lrs.iter().filter(|&&(e, lr)| lr != 1e-3 * 0.99f64.powi(e as i32)).collect();
    let schedule_ok = lrs.len() == 500 && lrs.iter().enumerate().all(|(i, &(e, _))| i == e) && mismatched.is_empty();

    let (cfg, _) = tiny_config(2);
    let shapes: Vec<NamedShape> = cases.iter().map(|c| NamedShape { id: c.id.clone(), shape: binarize(&c.labels) }).collect();
    let cdae = train_cdae::<f32>(&cfg, &shapes, &[], dir.path(), &mut |_| {}).unwrap();
    let grid = cfg.preprocess.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x = Tensor::from_vec(1, 1, grid, (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let du = roundtrip(&unet.checkpoint, dir.path(), "unet.ckpt", &x);
    let dc = roundtrip(&cdae.checkpoint, dir.path(), "cdae.ckpt", &x);
    let detail = format!(
        "{} epochs logged, {} lr mismatches vs 1e-3*0.99^epoch; checkpoint round-trip max diff U-Net {du:.1e}, autoencoder {dc:.1e} (tol {ROUNDTRIP_TOL:e}), {:.1?}",
        lrs.len(),
        mismatched.len(),
        t.elapsed()
    );
    verdict(9, "schedule and checkpoint conformance", schedule_ok && du <= ROUNDTRIP_TOL && dc <= ROUNDTRIP_TOL, &detail);
}
