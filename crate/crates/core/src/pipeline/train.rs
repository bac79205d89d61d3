use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::TrainConfig;
use crate::augment::{augment_pair, corrupt_shape};
use crate::error::{Error, Result};
use crate::nn::{Adam, Cdae, NetworkCheckpoint, Tensor, UNet, VolumetricNet};
use crate::objectives::{class_weights, generalized_dice_batch};
use crate::phantom::derived_seed;
use crate::scalar::Scalar;
use crate::volume::{BinaryShape, LabelMap, Volume};

/// A raw volume with its reference labels.
#[derive(Debug, Clone)]
pub struct LabeledVolume<T> {
    pub id: String,
    pub volume: Volume<T>,
    pub labels: LabelMap,
}

/// A reference shape for autoencoder training.
#[derive(Debug, Clone)]
pub struct NamedShape {
    pub id: String,
    pub shape: BinaryShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Absent when there is no validation data.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters of the epoch with the lowest validation loss (training loss without validation data).
    pub checkpoint: NetworkCheckpoint<T>,
    pub curve: Vec<EpochLog>,
    pub best_epoch: usize,
    /// `None` when no epoch ran; the checkpoint then holds the initial parameters.
    pub best_loss: Option<f64>,
}

struct Sample<T> {
    id: String,
    input: Tensor<T>,
    target: Vec<u8>,
}

fn volume_tensor<T: Scalar>(v: &Volume<T>) -> Tensor<T> {
    Tensor::from_vec(1, 1, v.dims(), v.data().to_vec()).expect("volume length matches its grid")
}

fn shape_tensor<T: Scalar>(s: &BinaryShape) -> Tensor<T> {
    Tensor::from_vec(1, 1, s.dims(), s.data().iter().map(|&x| T::c(f64::from(x))).collect()).expect("shape length matches its grid")
}

fn dump_diagnostics<T: Scalar>(net: &dyn VolumetricNet<T>, dir: &Path, epoch: usize, step: usize, lr: f64, loss: f64, ids: &[String]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("nonfinite_{:?}_epoch{epoch}_step{step}.json", net.kind()).to_lowercase());
    let params: Vec<_> = net
        .params()
        .iter()
        .map(|p| {
            let finite = p.value.iter().all(|x| x.as_f64().is_finite()) && p.grad.iter().all(|x| x.as_f64().is_finite());
            let norm = p.value.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
            let grad_norm = p.grad.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
            json!({ "name": p.name, "finite": finite, "norm": norm, "grad_norm": grad_norm })
        })
        .collect();
    let body = json!({
        "epoch": epoch,
        "step": step,
        "lr": lr,
        "loss": loss.to_string(),
        "samples": ids,
        "parameters": params,
    });
    fs::write(&path, serde_json::to_string_pretty(&body)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn batch_loss<T: Scalar>(net: &mut dyn VolumetricNet<T>, batch: &[&Sample<T>], cfg: &TrainConfig, train: bool) -> Result<(f64, Option<Tensor<T>>)> {
    let inputs: Vec<Tensor<T>> = batch.iter().map(|s| s.input.clone()).collect();
    let x = Tensor::stack(&inputs)?;
    let truth: Vec<u8> = batch.iter().flat_map(|s| s.target.iter().copied()).collect();
    let classes = net.out_channels();
    let weights = class_weights(&truth, classes, cfg.weighting)?;
    let probs = if train { net.forward_train(&x)? } else { net.forward(&x)? };
    let lg = generalized_dice_batch(&probs.data, batch.len(), &truth, &weights)?;
    let grad = train.then(|| Tensor { n: probs.n, c: probs.c, dims: probs.dims, data: lg.grad });
    Ok((lg.loss, grad))
}

/// Shared optimisation loop. `make_epoch` yields the (possibly augmented) training
/// samples for one epoch; `val` is fixed across epochs.
fn fit<T: Scalar, N, F>(
    net: &mut N,
    cfg: &TrainConfig,
    mut make_epoch: F,
    val: &[Sample<T>],
    diag_dir: &Path,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>>
where
    N: VolumetricNet<T> + Clone,
    F: FnMut(&mut ChaCha8Rng) -> Result<Vec<Sample<T>>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, 1));
    let mut adam = Adam::new(cfg.adam);
    let schedule = cfg.schedule();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, NetworkCheckpoint<T>)> = None;
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch);
        let mut samples = make_epoch(&mut rng)?;
        if samples.is_empty() {
            return Err(Error::Validation("training set is empty".into()));
        }
        samples.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in samples.chunks(cfg.batch_size) {
            let refs: Vec<&Sample<T>> = chunk.iter().collect();
            net.zero_grad();
            let (loss, grad) = batch_loss(net, &refs, cfg, true)?;
            let grad = grad.expect("training pass returns a gradient");
            if !loss.is_finite() || !grad.is_finite() {
                let ids: Vec<String> = chunk.iter().map(|s| s.id.clone()).collect();
                let dump = dump_diagnostics(net, diag_dir, epoch, step, lr, loss, &ids)?;
                return Err(Error::NonFiniteLoss { epoch, step, lr, dump });
            }
            net.backward(&grad);
            adam.step(net.params_mut(), lr);
            total += loss;
            batches += 1;
            step += 1;
        }
        let train_loss = total / batches as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            let mut s = 0.0;
            for sample in val {
                s += batch_loss(net, &[sample], cfg, false)?.0;
            }
            Some(s / val.len() as f64)
        };
        let score = val_loss.unwrap_or(train_loss);
        if !score.is_finite() {
            let ids: Vec<String> = val.iter().map(|s| s.id.clone()).collect();
            let dump = dump_diagnostics(net, diag_dir, epoch, step, lr, score, &ids)?;
            return Err(Error::NonFiniteLoss { epoch, step, lr, dump });
        }
        let log = EpochLog { epoch, lr, train_loss, val_loss };
        on_epoch(&log);
        curve.push(log);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, NetworkCheckpoint::capture(net, epoch, step as u64, Some(rng.clone()))));
        }
    }
    Ok(match best {
        Some((loss, best_epoch, checkpoint)) => TrainOutcome { checkpoint, curve, best_epoch, best_loss: Some(loss) },
        None => TrainOutcome { checkpoint: NetworkCheckpoint::capture(net, 0, 0, Some(rng)), curve, best_epoch: 0, best_loss: None },
    })
}

/// Trains the segmentation network on augmented, preprocessed volumes.
pub fn train_unet<T: Scalar>(
    cfg: &TrainConfig,
    train: &[LabeledVolume<T>],
    val: &[LabeledVolume<T>],
    diag_dir: &Path,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let prep = &cfg.preprocess;
    let prepared: Vec<(String, Volume<T>, LabelMap)> = train
        .iter()
        .map(|c| Ok((c.id.clone(), prep.smooth(&c.volume)?, prep.labels(&c.labels)?)))
        .collect::<Result<_>>()?;
    let val: Vec<Sample<T>> = val
        .iter()
        .map(|c| Ok(Sample { id: c.id.clone(), input: volume_tensor(&prep.volume(&c.volume)?), target: prep.labels(&c.labels)?.data().to_vec() }))
        .collect::<Result<_>>()?;
    let mut net = UNet::<T>::new(cfg.unet.clone(), derived_seed(cfg.seed, 0))?;
    let make_epoch = |rng: &mut ChaCha8Rng| -> Result<Vec<Sample<T>>> {
        prepared
            .iter()
            .map(|(id, v, l)| {
                let (v, l) = augment_pair(v, l, &cfg.augment, rng)?;
                Ok(Sample { id: id.clone(), input: volume_tensor(&prep.finish(v)), target: l.data().to_vec() })
            })
            .collect()
    };
    fit(&mut net, cfg, make_epoch, &val, diag_dir, on_epoch)
}

/// Trains the shape autoencoder to map corrupted shapes back onto clean ones.
/// Validation inputs use one fixed corruption per shape.
pub fn train_cdae<T: Scalar>(
    cfg: &TrainConfig,
    train: &[NamedShape],
    val: &[NamedShape],
    diag_dir: &Path,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let grid = cfg.cdae.input_shape;
    for s in train.iter().chain(val) {
        if s.shape.dims() != grid {
            return Err(Error::Argument(format!("shape {} is on grid {}, autoencoder expects {grid}", s.id, s.shape.dims())));
        }
    }
    let val: Vec<Sample<T>> = val
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed ^ 0x5eed_ca11, i));
            let noisy = corrupt_shape(&s.shape, &cfg.corruption, &mut rng)?;
            Ok(Sample { id: s.id.clone(), input: shape_tensor(&noisy), target: s.shape.data().to_vec() })
        })
        .collect::<Result<_>>()?;
    let mut net = Cdae::<T>::new(cfg.cdae.clone(), derived_seed(cfg.seed, 0))?;
    let make_epoch = |rng: &mut ChaCha8Rng| -> Result<Vec<Sample<T>>> {
        train
            .iter()
            .map(|s| {
                let noisy = corrupt_shape(&s.shape, &cfg.corruption, rng)?;
                Ok(Sample { id: s.id.clone(), input: shape_tensor(&noisy), target: s.shape.data().to_vec() })
            })
            .collect()
    };
    fit(&mut net, cfg, make_epoch, &val, diag_dir, on_epoch)
}
