use super::config::PreprocessConfig;
use super::fusion::{fuse, refine, FusionOptions, FusionResult};
use super::train::LabeledVolume;
use crate::error::Result;
use crate::nn::{Cdae, Tensor, UNet, VolumetricNet};
use crate::objectives::{evaluate_volume, MetricsReport};
use crate::preprocess::binarize;
use crate::scalar::Scalar;
use crate::volume::{ClassProbabilities, LabelMap, Volume};

/// Preprocesses a raw volume and runs the segmentation network on it. Results live
/// on the network grid.
pub fn predict_case<T: Scalar>(unet: &UNet<T>, prep: &PreprocessConfig, volume: &Volume<T>) -> Result<ClassProbabilities<T>> {
    let v = prep.volume(volume)?;
    let x = Tensor::from_vec(1, 1, v.dims(), v.data().to_vec())?;
    let y = unet.forward(&x)?;
    ClassProbabilities::new(y.c, v.dims(), v.spacing(), y.data)
}

#[derive(Debug, Clone)]
pub struct CaseOutput {
    pub id: String,
    pub truth: LabelMap,
    pub unet: LabelMap,
    pub fused: Option<FusionResult>,
}

#[derive(Debug, Clone)]
pub struct FoldEvaluation {
    pub unet: MetricsReport,
    /// Present when an autoencoder was supplied.
    pub fused: Option<MetricsReport>,
    pub cases: Vec<CaseOutput>,
}

pub const VARIANT_UNET: &str = "unet";
pub const VARIANT_FUSED: &str = "unet+cdae";

/// Scores the segmentation network, and optionally the refined pipeline, on held-out
/// cases. Metrics are computed on the network grid against nearest-resampled labels.
pub fn evaluate_fold<T: Scalar>(
    unet: &UNet<T>,
    cdae: Option<&Cdae<T>>,
    prep: &PreprocessConfig,
    fusion: &FusionOptions,
    fold: Option<usize>,
    cases: &[LabeledVolume<T>],
) -> Result<FoldEvaluation> {
    let mut unet_metrics = Vec::with_capacity(cases.len());
    let mut fused_metrics = Vec::with_capacity(cases.len());
    let mut outputs = Vec::with_capacity(cases.len());
    for case in cases {
        let probs = predict_case(unet, prep, &case.volume)?;
        let pred = probs.to_label_map()?;
        let truth = prep.labels(&case.labels)?.with_spacing(pred.spacing())?;
        unet_metrics.push(evaluate_volume(&case.id, &pred, &truth)?);
        let fused = match cdae {
            Some(net) => {
                let refined = refine(net, &binarize(&pred))?;
                let f = fuse(&pred, &refined, fusion)?;
                fused_metrics.push(evaluate_volume(&case.id, &f.labels, &truth)?);
                Some(f)
            }
            None => None,
        };
        outputs.push(CaseOutput { id: case.id.clone(), truth, unet: pred, fused });
    }
    Ok(FoldEvaluation {
        unet: MetricsReport::new(VARIANT_UNET, fold, unet_metrics),
        fused: cdae.map(|_| MetricsReport::new(VARIANT_FUSED, fold, fused_metrics)),
        cases: outputs,
    })
}
