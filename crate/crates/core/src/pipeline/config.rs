use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fusion::FusionOptions;
use crate::augment::{IntensityAugmentSpec, ShapeCorruptionSpec};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, CdaeConfig, ExponentialLr, UNetConfig};
use crate::objectives::WeightingScheme;
use crate::preprocess::{moving_average_axial, resample_labels, resample_volume, standardize, BorderPolicy};
use crate::scalar::Scalar;
use crate::volume::{Dims3, LabelMap, Volume, NETWORK_DIMS};

/// How a raw volume reaches the network grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Network grid; volumes on a different grid are resampled (linear, labels nearest).
    pub grid: Dims3,
    /// Axial moving-average window (odd); 1 disables the filter.
    pub axial_window: usize,
    pub border: BorderPolicy,
    /// Per-volume zero-mean, unit-variance intensities.
    pub standardize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { grid: NETWORK_DIMS, axial_window: 5, border: BorderPolicy::Replicate, standardize: true }
    }
}

impl PreprocessConfig {
    /// Resampling and smoothing only; augmentation happens between this and [`finish`](Self::finish).
    pub fn smooth<T: Scalar>(&self, v: &Volume<T>) -> Result<Volume<T>> {
        let v = resample_volume(v, self.grid)?;
        if self.axial_window > 1 {
            moving_average_axial(&v, self.axial_window, self.border)
        } else {
            Ok(v)
        }
    }

    pub fn finish<T: Scalar>(&self, v: Volume<T>) -> Volume<T> {
        if self.standardize {
            standardize(&v)
        } else {
            v
        }
    }

    pub fn volume<T: Scalar>(&self, v: &Volume<T>) -> Result<Volume<T>> {
        Ok(self.finish(self.smooth(v)?))
    }

    pub fn labels(&self, l: &LabelMap) -> Result<LabelMap> {
        resample_labels(l, self.grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub initial_lr: f64,
    /// Per-epoch multiplicative decay.
    pub lr_gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weighting: WeightingScheme,
    pub augment: IntensityAugmentSpec,
    pub corruption: ShapeCorruptionSpec,
    pub preprocess: PreprocessConfig,
    pub unet: UNetConfig,
    pub cdae: CdaeConfig,
    pub fusion: FusionOptions,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            initial_lr: 1e-3,
            lr_gamma: 0.99,
            epochs: 500,
            batch_size: 1,
            weighting: WeightingScheme::InverseFrequency,
            augment: IntensityAugmentSpec::default(),
            corruption: ShapeCorruptionSpec::default(),
            preprocess: PreprocessConfig::default(),
            unet: UNetConfig::default(),
            cdae: CdaeConfig::default(),
            fusion: FusionOptions::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> ExponentialLr {
        ExponentialLr { initial: self.initial_lr, gamma: self.lr_gamma }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Validation(format!("initial_lr must be positive, got {}", self.initial_lr)));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::Validation(format!("lr_gamma must lie in (0, 1], got {}", self.lr_gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        if self.unet.input_shape != self.preprocess.grid {
            return Err(Error::Validation(format!(
                "unet.input_shape {} differs from preprocess.grid {}",
                self.unet.input_shape, self.preprocess.grid
            )));
        }
        if self.cdae.input_shape != self.preprocess.grid {
            return Err(Error::Validation(format!(
                "cdae.input_shape {} differs from preprocess.grid {}",
                self.cdae.input_shape, self.preprocess.grid
            )));
        }
        self.augment.validate().map_err(|e| Error::Validation(format!("augment: {e}")))?;
        self.corruption.validate().map_err(|e| Error::Validation(format!("corruption: {e}")))?;
        self.unet.validate()?;
        self.cdae.validate()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
