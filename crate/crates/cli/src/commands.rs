use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use octseg::nn::AnyNet;
use octseg::phantom::{make_dataset, DatasetManifest, ManifestEntry, PhantomSpec, MANIFEST_FILE};
use octseg::pipeline::{
    fuse, make_folds, predict_case, refine, train_cdae, train_unet, EpochLog, FoldPlan, LabeledVolume, NamedShape, TrainConfig,
    TrainOutcome, VARIANT_FUSED, VARIANT_UNET,
};
use octseg::preprocess::binarize;
use octseg::objectives::{evaluate_volume, MetricsReport};
use octseg::{nrrd, Checkpoint32, Cdae32, LabelMap, UNet32};
use serde::{Deserialize, Serialize};

use crate::overlay::{pick_bscan, write_overlay};
use crate::run::{usage, Recorder, RunDir};
use crate::{Cli, Command};

pub fn run(cli: &Cli) -> Result<()> {
    let out = cli.out.as_deref().ok_or_else(|| usage("--out is required"))?;
    match &cli.command {
        Command::Generate { n } => generate(cli, out, *n),
        Command::Folds { data, k } => folds(cli, out, data, *k),
        Command::TrainUnet { data } => train(cli, out, data, Net::UNet),
        Command::TrainCdae { data } => train(cli, out, data, Net::Cdae),
        Command::Predict { data } => predict(cli, out, data),
        Command::Refine => refine_fold(cli, out),
        Command::Evaluate { data } => evaluate(cli, out, data),
        Command::Report { data } => report(cli, out, data),
    }
}

fn argv() -> Vec<String> {
    std::env::args().collect()
}

fn require_fold(cli: &Cli) -> Result<usize> {
    cli.fold.ok_or_else(|| usage("--fold is required for this subcommand"))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn generate(cli: &Cli, out: &Path, n: usize) -> Result<()> {
    let mut spec = match &cli.config {
        Some(p) => {
            require_file(p, "config")?;
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<PhantomSpec>(&text).with_context(|| format!("parsing phantom spec {}", p.display()))?
        }
        None => PhantomSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.rng_seed = s;
    }
    spec.validate()?;
    let manifest = make_dataset(&spec, n, out)?;
    let mut rec = Recorder::new("generate", argv(), Some(spec.rng_seed), None, serde_json::to_value(&spec)?);
    for e in &manifest.entries {
        for f in [&e.volume, &e.labels, &e.sidecar] {
            rec.output(out.join(f));
        }
    }
    rec.output(out.join(MANIFEST_FILE));
    log::info!("generated volumes={} dir={}", n, out.display());
    rec.finish(&out.join("manifests"))?;
    Ok(())
}

/// Training config from `--config`, else the run directory's `config.json`, else defaults.
fn train_config(cli: &Cli, run: &RunDir) -> Result<TrainConfig> {
    let path = match &cli.config {
        Some(p) => {
            require_file(p, "config")?;
            Some(p.clone())
        }
        None => Some(run.config()).filter(|p| p.is_file()),
    };
    let mut cfg = match &path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_config(run: &RunDir, cfg: &TrainConfig, rec: &mut Recorder) -> Result<()> {
    rec.write_json(&run.config(), cfg)
}

fn load_manifest(data: &Path) -> Result<DatasetManifest> {
    let path = data.join(MANIFEST_FILE);
    require_file(&path, "dataset manifest")?;
    Ok(DatasetManifest::load(&path)?)
}

fn folds(cli: &Cli, out: &Path, data: &Path, k: usize) -> Result<()> {
    let run = RunDir::new(out)?;
    let manifest = load_manifest(data)?;
    let cfg = train_config(cli, &run)?;
    let volumes: Vec<_> =
        manifest.entries.iter().map(|e| octseg::pipeline::PatientVolume { id: e.id.clone(), patient: e.patient.clone() }).collect();
    let kf = k as f64;
    let plan = make_folds(&volumes, k, [1.0 - 2.0 / kf, 1.0 / kf, 1.0 / kf], cfg.seed)?;
    let mut rec = Recorder::new("folds", argv(), Some(cfg.seed), None, serde_json::to_value(&cfg)?);
    rec.input(data.join(MANIFEST_FILE));
    write_config(&run, &cfg, &mut rec)?;
    rec.write_json(&run.folds(), &plan)?;
    for f in 0..k {
        let [tr, va, te] = plan.patient_counts(f);
        log::info!("fold={f} train_patients={tr} val_patients={va} test_patients={te}");
    }
    rec.finish(&run.manifests()?)?;
    Ok(())
}

fn load_plan(run: &RunDir) -> Result<FoldPlan> {
    let path = run.folds();
    require_file(&path, "fold plan (run `folds` first)")?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn entries(manifest: &DatasetManifest) -> BTreeMap<&str, &ManifestEntry> {
    manifest.entries.iter().map(|e| (e.id.as_str(), e)).collect()
}

fn load_cases(data: &Path, manifest: &DatasetManifest, ids: &[String], rec: &mut Recorder) -> Result<Vec<LabeledVolume<f32>>> {
    let by_id = entries(manifest);
    ids.iter()
        .map(|id| {
            let e = by_id.get(id.as_str()).ok_or_else(|| usage(format!("volume {id} is not in the dataset manifest")))?;
            let (vp, lp) = (data.join(&e.volume), data.join(&e.labels));
            rec.input(&vp);
            rec.input(&lp);
            Ok(LabeledVolume { id: id.clone(), volume: nrrd::read_volume(&vp)?, labels: nrrd::read_labels(&lp)? })
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Net {
    UNet,
    Cdae,
}

impl Net {
    fn name(self) -> &'static str {
        match self {
            Net::UNet => "unet",
            Net::Cdae => "cdae",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TrainLog {
    net: String,
    fold: usize,
    best_epoch: usize,
    best_loss: Option<f64>,
    curve: Vec<EpochLog>,
}

fn curve_csv(curve: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,train_loss,val_loss\n");
    for e in curve {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        s += &format!("{},{},{},{}\n", e.epoch, e.lr, e.train_loss, val);
    }
    s
}

fn shapes(cfg: &TrainConfig, cases: &[LabeledVolume<f32>]) -> Result<Vec<NamedShape>> {
    cases.iter().map(|c| Ok(NamedShape { id: c.id.clone(), shape: binarize(&cfg.preprocess.labels(&c.labels)?) })).collect()
}

fn train(cli: &Cli, out: &Path, data: &Path, net: Net) -> Result<()> {
    let fold = require_fold(cli)?;
    let run = RunDir::new(out)?;
    let cfg = train_config(cli, &run)?;
    let plan = load_plan(&run)?;
    let sets = plan.fold(fold)?;
    let manifest = load_manifest(data)?;
    let subcommand = format!("train-{}", net.name());
    let mut rec = Recorder::new(&subcommand, argv(), Some(cfg.seed), Some(fold), serde_json::to_value(&cfg)?);
    rec.input(run.folds());
    write_config(&run, &cfg, &mut rec)?;
    let train = load_cases(data, &manifest, &sets.train, &mut rec)?;
    let val = load_cases(data, &manifest, &sets.val, &mut rec)?;
    let logs = run.logs()?;
    let name = net.name();
    let mut on_epoch = |e: &EpochLog| {
        let val = e.val_loss.map(|v| format!("{v:.6}")).unwrap_or_else(|| "none".into());
        log::info!("net={name} fold={fold} epoch={} lr={} train_loss={:.6} val_loss={val}", e.epoch, e.lr, e.train_loss);
    };
    let outcome: TrainOutcome<f32> = match net {
        Net::UNet => train_unet(&cfg, &train, &val, &logs, &mut on_epoch)?,
        Net::Cdae => train_cdae(&cfg, &shapes(&cfg, &train)?, &shapes(&cfg, &val)?, &logs, &mut on_epoch)?,
    };
    let ckpt = run.checkpoint(name, fold)?;
    outcome.checkpoint.save(&ckpt)?;
    rec.output(&ckpt);
    let stem = format!("{name}_fold{fold}");
    rec.write_text(&logs.join(format!("{stem}.csv")), &curve_csv(&outcome.curve))?;
    let tl = TrainLog { net: name.into(), fold, best_epoch: outcome.best_epoch, best_loss: outcome.best_loss, curve: outcome.curve };
    rec.write_json(&logs.join(format!("{stem}.json")), &tl)?;
    log::info!("net={name} fold={fold} best_epoch={} checkpoint={}", tl.best_epoch, ckpt.display());
    rec.finish(&run.manifests()?)?;
    Ok(())
}

fn load_checkpoint(cli: &Cli, run: &RunDir, net: Net, fold: usize, rec: &mut Recorder) -> Result<AnyNet<f32>> {
    let path = match &cli.checkpoint {
        Some(p) => p.clone(),
        None => run.checkpoint(net.name(), fold)?,
    };
    require_file(&path, "checkpoint")?;
    rec.input(&path);
    Ok(Checkpoint32::load(&path)?.restore()?)
}

fn load_unet(cli: &Cli, run: &RunDir, fold: usize, rec: &mut Recorder) -> Result<UNet32> {
    match load_checkpoint(cli, run, Net::UNet, fold, rec)? {
        AnyNet::UNet(n) => Ok(n),
        AnyNet::Cdae(_) => Err(usage("checkpoint holds an autoencoder, expected a U-Net")),
    }
}

fn load_cdae(cli: &Cli, run: &RunDir, fold: usize, rec: &mut Recorder) -> Result<Cdae32> {
    match load_checkpoint(cli, run, Net::Cdae, fold, rec)? {
        AnyNet::Cdae(n) => Ok(n),
        AnyNet::UNet(_) => Err(usage("checkpoint holds a U-Net, expected an autoencoder")),
    }
}

fn predict(cli: &Cli, out: &Path, data: &Path) -> Result<()> {
    let fold = require_fold(cli)?;
    let run = RunDir::new(out)?;
    let cfg = train_config(cli, &run)?;
    let plan = load_plan(&run)?;
    let manifest = load_manifest(data)?;
    let mut rec = Recorder::new("predict", argv(), Some(cfg.seed), Some(fold), serde_json::to_value(&cfg)?);
    let unet = load_unet(cli, &run, fold, &mut rec)?;
    let dir = run.predictions(fold)?;
    for case in load_cases(data, &manifest, &plan.fold(fold)?.test, &mut rec)? {
        let labels = predict_case(&unet, &cfg.preprocess, &case.volume)?.to_label_map()?;
        let path = dir.join(format!("{}_unet.nrrd", case.id));
        nrrd::write_labels(&labels, &path)?;
        rec.output(&path);
        log::info!("fold={fold} volume={} retina_voxels={} ped_voxels={}", case.id, labels.count(1), labels.count(2));
    }
    rec.finish(&run.manifests()?)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct FusionRecord {
    volume_id: String,
    ped_present_in_unet: bool,
    columns_extended: usize,
}

fn read_prediction(path: &Path, rec: &mut Recorder) -> Result<LabelMap> {
    require_file(path, "prediction (run `predict` first)")?;
    rec.input(path);
    Ok(nrrd::read_labels(path)?)
}

fn refine_fold(cli: &Cli, out: &Path) -> Result<()> {
    let fold = require_fold(cli)?;
    let run = RunDir::new(out)?;
    let cfg = train_config(cli, &run)?;
    let plan = load_plan(&run)?;
    let mut rec = Recorder::new("refine", argv(), Some(cfg.seed), Some(fold), serde_json::to_value(&cfg)?);
    let cdae = load_cdae(cli, &run, fold, &mut rec)?;
    let dir = run.predictions(fold)?;
    let mut records = Vec::new();
    for id in &plan.fold(fold)?.test {
        let pred = read_prediction(&dir.join(format!("{id}_unet.nrrd")), &mut rec)?;
        let refined = refine(&cdae, &binarize(&pred))?;
        let fused = fuse(&pred, &refined, &cfg.fusion)?;
        let (rp, fp) = (dir.join(format!("{id}_refined.nrrd")), dir.join(format!("{id}_fused.nrrd")));
        nrrd::write_shape(&refined, &rp)?;
        nrrd::write_labels(&fused.labels, &fp)?;
        rec.output(&rp);
        rec.output(&fp);
        log::info!("fold={fold} volume={id} ped_present={} columns_extended={}", fused.ped_present_in_unet, fused.columns_extended);
        records.push(FusionRecord { volume_id: id.clone(), ped_present_in_unet: fused.ped_present_in_unet, columns_extended: fused.columns_extended });
    }
    rec.write_json(&dir.join("fusion.json"), &records)?;
    rec.finish(&run.manifests()?)?;
    Ok(())
}

fn variant_file(variant: &str) -> String {
    variant.replace('+', "_")
}

fn write_report(rec: &mut Recorder, dir: &Path, stem: &str, report: &MetricsReport) -> Result<()> {
    rec.write_text(&dir.join(format!("{stem}.json")), &(report.to_json()? + "\n"))?;
    rec.write_text(&dir.join(format!("{stem}.csv")), &report.to_csv())
}

fn evaluate(cli: &Cli, out: &Path, data: &Path) -> Result<()> {
    let fold = require_fold(cli)?;
    let run = RunDir::new(out)?;
    let cfg = train_config(cli, &run)?;
    let plan = load_plan(&run)?;
    let manifest = load_manifest(data)?;
    let by_id = entries(&manifest);
    let mut rec = Recorder::new("evaluate", argv(), Some(cfg.seed), Some(fold), serde_json::to_value(&cfg)?);
    let dir = run.predictions(fold)?;
    let test = &plan.fold(fold)?.test;
    let fused_available = test.iter().all(|id| dir.join(format!("{id}_fused.nrrd")).is_file());
    let mut metrics: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for id in test {
        let e = by_id.get(id.as_str()).ok_or_else(|| usage(format!("volume {id} is not in the dataset manifest")))?;
        let lp = data.join(&e.labels);
        rec.input(&lp);
        let truth = cfg.preprocess.labels(&nrrd::read_labels(&lp)?)?;
        let mut variants = vec![(VARIANT_UNET, "unet")];
        if fused_available {
            variants.push((VARIANT_FUSED, "fused"));
        }
        for (variant, suffix) in variants {
            let pred = read_prediction(&dir.join(format!("{id}_{suffix}.nrrd")), &mut rec)?;
            if pred.dims() != truth.dims() {
                return Err(usage(format!("prediction {id} is on grid {} but the config grid is {}", pred.dims(), truth.dims())));
            }
            let truth = truth.clone().with_spacing(pred.spacing())?;
            metrics.entry(variant).or_default().push(evaluate_volume(id, &pred, &truth)?);
        }
    }
    let reports = run.reports()?;
    for (variant, vols) in metrics {
        let report = MetricsReport::new(variant, Some(fold), vols);
        log::info!(
            "fold={fold} variant={variant} dsc_retina={:.4} dsc_ped={:.4} assd_um={:?} hd_um={:?}",
            report.mean.dsc_retina,
            report.mean.dsc_ped,
            report.mean.assd_um,
            report.mean.hd_um
        );
        write_report(&mut rec, &reports, &format!("fold{fold}_{}", variant_file(variant)), &report)?;
    }
    rec.finish(&run.manifests()?)?;
    Ok(())
}

fn report(cli: &Cli, out: &Path, data: &Path) -> Result<()> {
    let run = RunDir::new(out)?;
    let cfg = train_config(cli, &run)?;
    let plan = load_plan(&run)?;
    let manifest = load_manifest(data)?;
    let by_id = entries(&manifest);
    let folds: Vec<usize> = match cli.fold {
        Some(f) => vec![plan.fold(f).map(|_| f)?],
        None => (0..plan.k).collect(),
    };
    let mut rec = Recorder::new("report", argv(), Some(cfg.seed), cli.fold, serde_json::to_value(&cfg)?);
    let reports = run.reports()?;
    let mut found = 0;
    for variant in [VARIANT_UNET, VARIANT_FUSED] {
        let mut volumes = Vec::new();
        for &f in &folds {
            let path = reports.join(format!("fold{f}_{}.json", variant_file(variant)));
            if !path.is_file() {
                continue;
            }
            rec.input(&path);
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let r: MetricsReport = serde_json::from_str(&text)?;
            volumes.extend(r.volumes);
        }
        if volumes.is_empty() {
            continue;
        }
        found += 1;
        let summary = MetricsReport::new(variant, cli.fold, volumes);
        log::info!("summary variant={variant} volumes={} dsc_retina={:.4} dsc_ped={:.4}", summary.mean.volumes, summary.mean.dsc_retina, summary.mean.dsc_ped);
        write_report(&mut rec, &reports, &format!("summary_{}", variant_file(variant)), &summary)?;
    }
    if found == 0 {
        return Err(usage("no fold reports found (run `evaluate` first)"));
    }
    for &f in &folds {
        let dir = run.root.join("predictions").join(format!("fold{f}"));
        if !dir.is_dir() {
            continue;
        }
        let overlays = run.overlays(f)?;
        for id in &plan.fold(f)?.test {
            let up = dir.join(format!("{id}_unet.nrrd"));
            if !up.is_file() {
                continue;
            }
            let e = by_id.get(id.as_str()).ok_or_else(|| usage(format!("volume {id} is not in the dataset manifest")))?;
            let (vp, lp) = (data.join(&e.volume), data.join(&e.labels));
            rec.input(&vp);
            rec.input(&lp);
            let input = cfg.preprocess.volume(&nrrd::read_volume::<f32>(&vp)?)?;
            let truth = cfg.preprocess.labels(&nrrd::read_labels(&lp)?)?;
            let unet = read_prediction(&up, &mut rec)?;
            let fp = dir.join(format!("{id}_fused.nrrd"));
            let fused = if fp.is_file() { Some(read_prediction(&fp, &mut rec)?) } else { None };
            let d = pick_bscan(&truth);
            let path: PathBuf = overlays.join(format!("{id}_bscan{d:03}.png"));
            write_overlay(&path, &input, &[Some(&truth), Some(&unet), fused.as_ref()], d)?;
            rec.output(&path);
        }
    }
    rec.finish(&run.manifests()?)?;
    Ok(())
}
