//! Convolutional denoising autoencoder over binary retina shapes.
//!
//! The layer table is fixed; only the input grid may change, in which case every
//! intermediate grid scales proportionally. No skip connections: the decoder sees
//! only the 8-channel bottleneck. Decoder upsampling is non-learned linear
//! interpolation followed by a 3x3x3 conv block.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{softmax, softmax_backward, Conv3d, ConvBlock, Param, Upsample};
use super::tensor::Tensor;
use super::{NetKind, VolumetricNet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{Dims3, NETWORK_DIMS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdaeLayer {
    /// 3x3x3 conv block with stride `(sW, sH, sD)`.
    Conv { stride: [usize; 3], out: usize },
    /// Linear upsampling by `(fW, fH, fD)`.
    Up { factor: [usize; 3] },
}

/// One row of the layer table with its output grid at the reference input 96x256x32.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CdaeRow {
    pub stage: &'static str,
    pub layer: CdaeLayer,
    pub reference_shape: Dims3,
}

const fn conv(stage: &'static str, stride: [usize; 3], out: usize, shape: [usize; 3]) -> CdaeRow {
    CdaeRow { stage, layer: CdaeLayer::Conv { stride, out }, reference_shape: Dims3::new(shape[0], shape[1], shape[2]) }
}

const fn up(stage: &'static str, factor: [usize; 3], shape: [usize; 3]) -> CdaeRow {
    CdaeRow { stage, layer: CdaeLayer::Up { factor }, reference_shape: Dims3::new(shape[0], shape[1], shape[2]) }
}

pub const CDAE_ENCODER: [CdaeRow; 12] = [
    conv("S1", [1, 1, 1], 8, [96, 256, 32]),
    conv("S2", [1, 2, 1], 16, [96, 128, 32]),
    conv("S2", [1, 1, 1], 32, [96, 128, 32]),
    conv("S3", [1, 2, 1], 32, [96, 64, 32]),
    conv("S3", [1, 1, 1], 32, [96, 64, 32]),
    conv("S4", [2, 2, 2], 32, [48, 32, 16]),
    conv("S4", [1, 1, 1], 64, [48, 32, 16]),
    conv("S5", [2, 2, 2], 64, [24, 16, 8]),
    conv("S5", [1, 1, 1], 64, [24, 16, 8]),
    conv("S6", [2, 2, 2], 128, [12, 8, 4]),
    conv("S6", [1, 1, 1], 128, [12, 8, 4]),
    // The bottleneck keeps the 12x8x4 grid of the row above, so this conv does not stride.
    conv("S6", [1, 1, 1], 8, [12, 8, 4]),
];

pub const CDAE_DECODER: [CdaeRow; 10] = [
    up("S5", [2, 2, 2], [24, 16, 8]),
    conv("S5", [1, 1, 1], 128, [24, 16, 8]),
    up("S4", [2, 2, 2], [48, 32, 16]),
    conv("S4", [1, 1, 1], 64, [48, 32, 16]),
    up("S3", [2, 2, 2], [96, 64, 32]),
    conv("S3", [1, 1, 1], 32, [96, 64, 32]),
    up("S2", [1, 2, 1], [96, 128, 32]),
    conv("S2", [1, 1, 1], 16, [96, 128, 32]),
    up("S1", [1, 2, 1], [96, 256, 32]),
    conv("S1", [1, 1, 1], 8, [96, 256, 32]),
];

pub const CDAE_BOTTLENECK_CHANNELS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdaeConfig {
    pub input_shape: Dims3,
    pub out_channels: usize,
    pub leaky_slope: f64,
    pub norm: bool,
}

impl Default for CdaeConfig {
    fn default() -> Self {
        Self { input_shape: NETWORK_DIMS, out_channels: 2, leaky_slope: 0.01, norm: true }
    }
}

/// Grid and channel count after one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub stage: &'static str,
    pub dims: Dims3,
    pub channels: usize,
}

impl CdaeConfig {
    /// Downsampling accumulated by the encoder, `(W, H, D)`.
    pub fn cumulative_stride() -> [usize; 3] {
        let mut c = [1, 1, 1];
        for row in CDAE_ENCODER {
            if let CdaeLayer::Conv { stride, .. } = row.layer {
                for a in 0..3 {
                    c[a] *= stride[a];
                }
            }
        }
        c
    }

    pub fn check_grid(dims: Dims3) -> Result<()> {
        let cum = Self::cumulative_stride();
        for (axis, (n, s)) in ["W", "H", "D"].into_iter().zip(dims.as_array().into_iter().zip(cum)) {
            if n == 0 || n % s != 0 {
                return Err(Error::Shape { axis, msg: format!("extent {n} is not divisible by the encoder stride {s}") });
            }
        }
        Ok(())
    }

    /// Expected grid of a table row for this input: the reference shape scaled by `input / 96x256x32`.
    pub fn expected_shape(&self, row: &CdaeRow) -> Dims3 {
        let r = row.reference_shape;
        let i = self.input_shape;
        Dims3::new(r.w * i.w / NETWORK_DIMS.w, r.h * i.h / NETWORK_DIMS.h, r.d * i.d / NETWORK_DIMS.d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels < 2 {
            return Err(Error::Argument("autoencoder needs >= 2 output channels".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Argument("leaky slope must be finite and >= 0".into()));
        }
        Self::check_grid(self.input_shape)
    }
}

#[derive(Debug, Clone)]
enum Stage<T> {
    Conv(ConvBlock<T>),
    Up(Upsample),
}

#[derive(Debug, Clone)]
pub struct Cdae<T> {
    cfg: CdaeConfig,
    encoder: Vec<Stage<T>>,
    decoder: Vec<Stage<T>>,
    head: Conv3d<T>,
    shapes: Vec<LayerShape>,
    probs: Option<Tensor<T>>,
}

impl<T: Scalar> Cdae<T> {
    /// Builds the network and asserts every layer's grid against the table.
    pub fn new(cfg: CdaeConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut cin = 1;
        let mut dims = cfg.input_shape;
        let mut shapes = Vec::new();
        let mut build = |rows: &[CdaeRow], prefix: &str, cin: &mut usize, dims: &mut Dims3| -> Vec<Stage<T>> {
            rows.iter()
                .enumerate()
                .map(|(i, row)| {
                    let stage = match row.layer {
                        CdaeLayer::Conv { stride, out } => {
                            let b = ConvBlock::new(&format!("{prefix}{i}.{}", row.stage), *cin, out, stride, cfg.norm, cfg.leaky_slope, &mut rng);
                            *dims = b.out_dims(*dims);
                            *cin = out;
                            Stage::Conv(b)
                        }
                        CdaeLayer::Up { factor } => {
                            let u = Upsample::new(factor);
                            *dims = u.out_dims(*dims);
                            Stage::Up(u)
                        }
                    };
                    let expected = cfg.expected_shape(row);
                    assert_eq!(*dims, expected, "{prefix} layer {i} ({}) produces {} but the table requires {}", row.stage, dims, expected);
                    shapes.push(LayerShape { stage: row.stage, dims: *dims, channels: *cin });
                    stage
                })
                .collect()
        };
        let encoder = build(&CDAE_ENCODER, "enc", &mut cin, &mut dims);
        assert_eq!(cin, CDAE_BOTTLENECK_CHANNELS);
        let decoder = build(&CDAE_DECODER, "dec", &mut cin, &mut dims);
        assert_eq!(dims, cfg.input_shape);
        let head = Conv3d::new("head", cin, cfg.out_channels, [1, 1, 1], [1, 1, 1], &mut rng);
        shapes.push(LayerShape { stage: "S1", dims, channels: cfg.out_channels });
        Ok(Self { cfg, encoder, decoder, head, shapes, probs: None })
    }

    pub fn config(&self) -> &CdaeConfig {
        &self.cfg
    }

    /// Output grid and channels of every layer in order: 12 encoder rows, 10 decoder rows, head.
    pub fn layer_shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    /// Bottleneck code for a batch (eval mode).
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for s in &self.encoder {
            cur = eval_stage(s, &cur);
        }
        Ok(cur)
    }
}

fn eval_stage<T: Scalar>(s: &Stage<T>, x: &Tensor<T>) -> Tensor<T> {
    match s {
        Stage::Conv(b) => b.eval(x),
        Stage::Up(u) => u.eval(x),
    }
}

fn train_stage<T: Scalar>(s: &mut Stage<T>, x: Tensor<T>) -> Tensor<T> {
    match s {
        Stage::Conv(b) => b.train_forward(x),
        Stage::Up(u) => u.train_forward(&x),
    }
}

fn backward_stage<T: Scalar>(s: &mut Stage<T>, dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
    match s {
        Stage::Conv(b) => b.backward(dy, need_dx),
        Stage::Up(u) => Some(u.backward(&dy)),
    }
}

impl<T: Scalar> VolumetricNet<T> for Cdae<T> {
    fn kind(&self) -> NetKind {
        NetKind::Cdae
    }

    fn in_channels(&self) -> usize {
        1
    }

    fn out_channels(&self) -> usize {
        self.cfg.out_channels
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.c != 1 {
            return Err(Error::Shape { axis: "C", msg: format!("expected 1 channel, got {}", x.c) });
        }
        if x.dims != self.cfg.input_shape {
            let axis = if x.dims.w != self.cfg.input_shape.w {
                "W"
            } else if x.dims.h != self.cfg.input_shape.h {
                "H"
            } else {
                "D"
            };
            return Err(Error::Shape { axis, msg: format!("autoencoder grid is {}, input is {}", self.cfg.input_shape, x.dims) });
        }
        Ok(())
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = self.encode(x)?;
        for s in &self.decoder {
            cur = eval_stage(s, &cur);
        }
        Ok(softmax(&self.head.eval(&cur)))
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for s in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            cur = train_stage(s, cur);
        }
        let probs = softmax(&self.head.train_forward(cur));
        self.probs = Some(probs.clone());
        Ok(probs)
    }

    fn backward(&mut self, grad_probs: &Tensor<T>) {
        let probs = self.probs.take().expect("backward without forward_train");
        let mut d = self.head.backward(&softmax_backward(&probs, grad_probs), true).expect("dx requested");
        let total = self.encoder.len() + self.decoder.len();
        for (i, s) in self.decoder.iter_mut().rev().chain(self.encoder.iter_mut().rev()).enumerate() {
            match backward_stage(s, d, i + 1 < total) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for s in self.encoder.iter().chain(&self.decoder) {
            if let Stage::Conv(b) = s {
                v.extend(b.params());
            }
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for s in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            if let Stage::Conv(b) = s {
                v.extend(b.params_mut());
            }
        }
        v.extend(self.head.params_mut());
        v
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("config serializes")
    }
}
