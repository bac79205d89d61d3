//! Two-stage volumetric segmentation of the total retina and pigment-epithelial
//! detachments (PED) in low-SNR OCT: a 3-D U-Net produces a three-class label
//! map, a convolutional denoising autoencoder refines the binarized retina
//! shape, and a fusion rule merges both into the final segmentation.
//!
//! The numeric core is generic over [`Scalar`] (`f32` / `f64`); aliases for the
//! common instantiations live at the crate root.

pub mod augment;
pub mod error;
pub mod nn;
pub mod nrrd;
pub mod objectives;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod scalar;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use volume::{BinaryShape, ClassProbabilities, Dims3, LabelMap, Spacing, Volume};

pub type Volume32 = Volume<f32>;
pub type Volume64 = Volume<f64>;
pub type ClassProbabilities32 = ClassProbabilities<f32>;
pub type ClassProbabilities64 = ClassProbabilities<f64>;
pub type UNet32 = nn::UNet<f32>;
pub type UNet64 = nn::UNet<f64>;
pub type Cdae32 = nn::Cdae<f32>;
pub type Cdae64 = nn::Cdae<f64>;
pub type Checkpoint32 = nn::NetworkCheckpoint<f32>;
pub type Checkpoint64 = nn::NetworkCheckpoint<f64>;
