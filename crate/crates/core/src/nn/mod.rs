//! CPU volumetric network engine: layers with explicit backward passes, the two
//! segmentation networks, Adam, and checkpoints.

pub mod cdae;
pub mod checkpoint;
pub mod layers;
pub(crate) mod ops;
pub mod optim;
pub mod tensor;
pub mod unet;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Scalar;

pub use cdae::{Cdae, CdaeConfig};
pub use checkpoint::NetworkCheckpoint;
pub use layers::Param;
pub use optim::{Adam, AdamConfig, ExponentialLr};
pub use tensor::Tensor;
pub use unet::{UNet, UNetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    UNet,
    Cdae,
}

/// Shared interface of the segmentation networks. `forward` is the pure eval-mode
/// pass (normalization uses running statistics); `forward_train` caches
/// activations for `backward` and updates running statistics.
pub trait VolumetricNet<T: Scalar>: Send + Sync {
    fn kind(&self) -> NetKind;
    fn in_channels(&self) -> usize;
    fn out_channels(&self) -> usize;
    fn check_input(&self, x: &Tensor<T>) -> Result<()>;
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
    fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>>;
    /// Back-propagates a gradient w.r.t. the output probabilities, accumulating parameter gradients.
    fn backward(&mut self, grad_probs: &Tensor<T>);
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;
    fn config_json(&self) -> serde_json::Value;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// Number of trainable scalars.
pub fn count_parameters<T: Scalar, N: VolumetricNet<T> + ?Sized>(net: &N) -> usize {
    net.params().iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
}

/// Either network, as restored from a checkpoint.
#[derive(Debug, Clone)]
pub enum AnyNet<T> {
    UNet(UNet<T>),
    Cdae(Cdae<T>),
}

impl<T: Scalar> AnyNet<T> {
    pub fn as_dyn(&self) -> &dyn VolumetricNet<T> {
        match self {
            AnyNet::UNet(n) => n,
            AnyNet::Cdae(n) => n,
        }
    }

    pub fn as_dyn_mut(&mut self) -> &mut dyn VolumetricNet<T> {
        match self {
            AnyNet::UNet(n) => n,
            AnyNet::Cdae(n) => n,
        }
    }
}
