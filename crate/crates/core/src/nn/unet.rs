//! 3-D U-Net for three-class retina/PED segmentation.
//!
//! Encoder level `k`: two 3x3x3 conv blocks, then 2x2x2 max pooling with
//! `pool_strides[k]`. Decoder level `k` (deepest first): a 2x2x2 transposed
//! convolution with the mirrored stride, channel concatenation with the
//! level-`k` skip, and one 3x3x3 conv block. A 1x1x1 convolution and a
//! softmax produce class probabilities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{softmax, softmax_backward, Conv3d, ConvBlock, ConvTranspose3d, MaxPool3d, Param};
use super::tensor::Tensor;
use super::{NetKind, VolumetricNet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{Dims3, NETWORK_DIMS, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    /// Channels per encoder level, shallowest first.
    pub encoder_channels: Vec<usize>,
    /// Pooling stride `(sW, sH, sD)` applied after each encoder level.
    pub pool_strides: Vec<[usize; 3]>,
    pub leaky_slope: f64,
    pub norm: bool,
    /// Grid the network is built for; checked against the stride plan at construction.
    pub input_shape: Dims3,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            num_classes: NUM_CLASSES,
            encoder_channels: vec![16, 32, 64, 128, 256],
            pool_strides: vec![[2, 2, 2], [1, 2, 1], [1, 2, 1], [1, 2, 1], [1, 2, 1]],
            leaky_slope: 0.01,
            norm: true,
            input_shape: NETWORK_DIMS,
        }
    }
}

/// Spatial extents through the network for one input grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UNetPlan {
    /// Encoder level outputs (skip shapes), shallowest first.
    pub levels: Vec<Dims3>,
    /// Grid after the deepest pooling.
    pub bottleneck: Dims3,
}

impl UNetConfig {
    /// Same topology with every channel count divided by `div` (minimum 1).
    pub fn reduced(&self, div: usize, input_shape: Dims3) -> Self {
        Self {
            encoder_channels: self.encoder_channels.iter().map(|c| (c / div).max(1)).collect(),
            input_shape,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() {
            return Err(Error::Argument("U-Net needs at least one encoder level".into()));
        }
        if self.encoder_channels.len() != self.pool_strides.len() {
            return Err(Error::Argument(format!(
                "{} encoder levels but {} pooling strides",
                self.encoder_channels.len(),
                self.pool_strides.len()
            )));
        }
        if self.in_channels == 0 || self.num_classes < 2 || self.encoder_channels.contains(&0) {
            return Err(Error::Argument("channel counts must be positive (>= 2 classes)".into()));
        }
        if self.pool_strides.iter().flatten().any(|&s| s == 0 || s > 2) {
            return Err(Error::Argument("pooling strides must be 1 or 2".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Argument("leaky slope must be finite and >= 0".into()));
        }
        self.plan(self.input_shape).map(|_| ())
    }

    /// Cumulative downsampling per axis, `(W, H, D)`.
    pub fn cumulative_stride(&self) -> [usize; 3] {
        let mut c = [1, 1, 1];
        for s in &self.pool_strides {
            for a in 0..3 {
                c[a] *= s[a];
            }
        }
        c
    }

    pub fn plan(&self, input: Dims3) -> Result<UNetPlan> {
        let cum = self.cumulative_stride();
        for (axis, (n, s)) in ["W", "H", "D"].into_iter().zip(input.as_array().into_iter().zip(cum)) {
            if n == 0 || n % s != 0 {
                return Err(Error::Shape {
                    axis,
                    msg: format!("extent {n} is not divisible by the cumulative pooling stride {s}"),
                });
            }
        }
        let mut levels = Vec::new();
        let mut cur = input;
        for s in &self.pool_strides {
            levels.push(cur);
            cur = Dims3::new(cur.w / s[0], cur.h / s[1], cur.d / s[2]);
        }
        Ok(UNetPlan { levels, bottleneck: cur })
    }
}

#[derive(Debug, Clone)]
struct EncoderLevel<T> {
    first: ConvBlock<T>,
    second: ConvBlock<T>,
    pool: MaxPool3d,
}

#[derive(Debug, Clone)]
struct DecoderLevel<T> {
    up: ConvTranspose3d<T>,
    conv: ConvBlock<T>,
    up_channels: usize,
}

#[derive(Debug, Clone)]
pub struct UNet<T> {
    cfg: UNetConfig,
    encoder: Vec<EncoderLevel<T>>,
    /// Deepest level first.
    decoder: Vec<DecoderLevel<T>>,
    head: Conv3d<T>,
    probs: Option<Tensor<T>>,
}

impl<T: Scalar> UNet<T> {
    pub fn new(cfg: UNetConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let ch = &cfg.encoder_channels;
        let levels = ch.len();
        let mut encoder = Vec::with_capacity(levels);
        let mut cin = cfg.in_channels;
        for (k, (&c, &s)) in ch.iter().zip(&cfg.pool_strides).enumerate() {
            encoder.push(EncoderLevel {
                first: ConvBlock::new(&format!("enc{k}.a"), cin, c, [1, 1, 1], cfg.norm, cfg.leaky_slope, &mut rng),
                second: ConvBlock::new(&format!("enc{k}.b"), c, c, [1, 1, 1], cfg.norm, cfg.leaky_slope, &mut rng),
                pool: MaxPool3d::new(s),
            });
            cin = c;
        }
        let mut decoder = Vec::with_capacity(levels);
        for k in (0..levels).rev() {
            let from = if k + 1 == levels { ch[k] } else { ch[k + 1] };
            decoder.push(DecoderLevel {
                up: ConvTranspose3d::new(&format!("dec{k}.up"), from, ch[k], cfg.pool_strides[k], &mut rng),
                conv: ConvBlock::new(&format!("dec{k}.conv"), 2 * ch[k], ch[k], [1, 1, 1], cfg.norm, cfg.leaky_slope, &mut rng),
                up_channels: ch[k],
            });
        }
        let head = Conv3d::new("head", ch[0], cfg.num_classes, [1, 1, 1], [1, 1, 1], &mut rng);
        let net = Self { cfg, encoder, decoder, head, probs: None };
        net.assert_skip_shapes(net.cfg.input_shape)?;
        Ok(net)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    /// Each decoder upsampling must land exactly on its skip's grid.
    fn assert_skip_shapes(&self, input: Dims3) -> Result<()> {
        let plan = self.cfg.plan(input)?;
        let mut cur = plan.bottleneck;
        for (j, dec) in self.decoder.iter().enumerate() {
            let k = self.encoder.len() - 1 - j;
            cur = dec.up.out_dims(cur);
            assert_eq!(cur, plan.levels[k], "decoder level {k} does not match its skip connection");
        }
        Ok(())
    }
}

impl<T: Scalar> VolumetricNet<T> for UNet<T> {
    fn kind(&self) -> NetKind {
        NetKind::UNet
    }

    fn in_channels(&self) -> usize {
        self.cfg.in_channels
    }

    fn out_channels(&self) -> usize {
        self.cfg.num_classes
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.c != self.cfg.in_channels {
            return Err(Error::Shape { axis: "C", msg: format!("expected {} channels, got {}", self.cfg.in_channels, x.c) });
        }
        self.cfg.plan(x.dims).map(|_| ())
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut cur = x.clone();
        for lvl in &self.encoder {
            let a = lvl.first.eval(&cur);
            let b = lvl.second.eval(&a);
            cur = lvl.pool.eval(&b);
            skips.push(b);
        }
        for dec in &self.decoder {
            let skip = skips.pop().expect("one skip per level");
            let up = dec.up.eval(&cur);
            cur = dec.conv.eval(&Tensor::concat_channels(&up, &skip));
        }
        Ok(softmax(&self.head.eval(&cur)))
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut cur = x.clone();
        for lvl in &mut self.encoder {
            let a = lvl.first.train_forward(cur);
            let b = lvl.second.train_forward(a);
            cur = lvl.pool.train_forward(&b);
            skips.push(b);
        }
        for dec in &mut self.decoder {
            let skip = skips.pop().expect("one skip per level");
            let up = dec.up.train_forward(cur);
            cur = dec.conv.train_forward(Tensor::concat_channels(&up, &skip));
        }
        let probs = softmax(&self.head.train_forward(cur));
        self.probs = Some(probs.clone());
        Ok(probs)
    }

    fn backward(&mut self, grad_probs: &Tensor<T>) {
        let probs = self.probs.take().expect("backward without forward_train");
        let dlogits = softmax_backward(&probs, grad_probs);
        let mut d = self.head.backward(&dlogits, true).expect("dx requested");
        let mut skip_grads = Vec::with_capacity(self.decoder.len());
        for dec in self.decoder.iter_mut().rev() {
            let dcat = dec.conv.backward(d, true).expect("dx requested");
            let (dup, dskip) = dcat.split_channels(dec.up_channels);
            skip_grads.push(dskip);
            d = dec.up.backward(&dup);
        }
        for (k, lvl) in self.encoder.iter_mut().enumerate().rev() {
            let mut db = lvl.pool.backward(&d);
            db.add_assign(&skip_grads[k]);
            let da = lvl.second.backward(db, true).expect("dx requested");
            match lvl.first.backward(da, k > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for l in &self.encoder {
            v.extend(l.first.params());
            v.extend(l.second.params());
        }
        for l in &self.decoder {
            v.extend(l.up.params());
            v.extend(l.conv.params());
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for l in &mut self.encoder {
            v.extend(l.first.params_mut());
            v.extend(l.second.params_mut());
        }
        for l in &mut self.decoder {
            v.extend(l.up.params_mut());
            v.extend(l.conv.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("config serializes")
    }
}
