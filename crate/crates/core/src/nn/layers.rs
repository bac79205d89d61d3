use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{self, Geometry};
use super::tensor::Tensor;
use crate::scalar::Scalar;
use crate::volume::Dims3;

/// A named persistent tensor. Non-trainable entries (normalization running
/// statistics) are checkpointed but skipped by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    fn new(name: String, shape: Vec<usize>, value: Vec<T>, trainable: bool) -> Self {
        let grad = if trainable { vec![T::zero(); value.len()] } else { Vec::new() };
        Self { name, shape, value, grad, trainable }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

fn he_normal<T: Scalar, R: Rng>(n: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| T::c(dist.sample(rng))).collect()
}

/// `[W, H, D]` triple to slowest-first `[D, H, W]`.
pub(crate) fn zyx(t: [usize; 3]) -> [usize; 3] {
    [t[2], t[1], t[0]]
}

/// Same-padded 3-D convolution (odd kernels), optional stride.
#[derive(Debug, Clone)]
pub struct Conv3d<T> {
    pub cin: usize,
    pub cout: usize,
    geom: Geometry,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv3d<T> {
    /// `kernel` and `stride` are given in `(W, H, D)` order.
    pub fn new<R: Rng>(name: &str, cin: usize, cout: usize, kernel: [usize; 3], stride: [usize; 3], rng: &mut R) -> Self {
        let kernel = zyx(kernel);
        let stride = zyx(stride);
        let pad = [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2];
        let geom = Geometry { kernel, stride, pad };
        let k = cin * geom.kvol();
        Self {
            cin,
            cout,
            geom,
            weight: Param::new(format!("{name}.weight"), vec![cout, cin, kernel[0], kernel[1], kernel[2]], he_normal(cout * k, k, rng), true),
            bias: Param::new(format!("{name}.bias"), vec![cout], vec![T::zero(); cout], true),
            cache: None,
        }
    }

    pub fn out_dims(&self, d: Dims3) -> Dims3 {
        // same padding: ceil(n / s)
        let n = d.zyx();
        let s = self.geom.stride;
        Dims3::from_zyx([n[0].div_ceil(s[0]), n[1].div_ceil(s[1]), n[2].div_ceil(s[2])])
    }

    pub fn eval(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "{}: channel mismatch", self.weight.name);
        let od = self.out_dims(x.dims);
        let mut y = Tensor::zeros(x.n, self.cout, od);
        let mut scratch = Vec::new();
        for i in 0..x.n {
            ops::conv_forward(
                x.sample(i),
                self.cin,
                x.dims.zyx(),
                &self.weight.value,
                Some(&self.bias.value),
                self.cout,
                od.zyx(),
                &self.geom,
                y.sample_mut(i),
                &mut scratch,
            );
        }
        y
    }

    pub fn train_forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        let y = self.eval(&x);
        self.cache = Some(x);
        y
    }

    /// Accumulates parameter gradients; returns the input gradient when `need_dx`.
    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let x = self.cache.take().expect("backward without train_forward");
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.dims));
        let (mut s1, mut s2) = (Vec::new(), Vec::new());
        for i in 0..x.n {
            let dxi = dx.as_mut().map(|t| {
                let len = t.sample_len();
                &mut t.data[i * len..(i + 1) * len]
            });
            ops::conv_backward(
                x.sample(i),
                self.cin,
                x.dims.zyx(),
                &self.weight.value,
                self.cout,
                dy.dims.zyx(),
                &self.geom,
                dy.sample(i),
                &mut self.weight.grad,
                Some(&mut self.bias.grad),
                dxi,
                &mut s1,
                &mut s2,
            );
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// 2x2x2 transposed convolution; output is the input extent times the stride.
#[derive(Debug, Clone)]
pub struct ConvTranspose3d<T> {
    pub cin: usize,
    pub cout: usize,
    geom: Geometry,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> ConvTranspose3d<T> {
    pub fn new<R: Rng>(name: &str, cin: usize, cout: usize, stride: [usize; 3], rng: &mut R) -> Self {
        let geom = Geometry { kernel: [2, 2, 2], stride: zyx(stride), pad: [0, 0, 0] };
        let k2 = cout * geom.kvol();
        let overlap = geom.kvol() / stride.iter().product::<usize>();
        Self {
            cin,
            cout,
            geom,
            weight: Param::new(format!("{name}.weight"), vec![cin, cout, 2, 2, 2], he_normal(cin * k2, cin * overlap, rng), true),
            bias: Param::new(format!("{name}.bias"), vec![cout], vec![T::zero(); cout], true),
            cache: None,
        }
    }

    pub fn out_dims(&self, d: Dims3) -> Dims3 {
        let n = d.zyx();
        let s = self.geom.stride;
        Dims3::from_zyx([n[0] * s[0], n[1] * s[1], n[2] * s[2]])
    }

    pub fn eval(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "{}: channel mismatch", self.weight.name);
        let od = self.out_dims(x.dims);
        let mut y = Tensor::zeros(x.n, self.cout, od);
        let mut scratch = Vec::new();
        for i in 0..x.n {
            ops::convt_forward(
                x.sample(i),
                self.cin,
                x.dims.zyx(),
                &self.weight.value,
                Some(&self.bias.value),
                self.cout,
                od.zyx(),
                &self.geom,
                y.sample_mut(i),
                &mut scratch,
            );
        }
        y
    }

    pub fn train_forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        let y = self.eval(&x);
        self.cache = Some(x);
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.cache.take().expect("backward without train_forward");
        let mut dx = Tensor::zeros(x.n, x.c, x.dims);
        let mut s = Vec::new();
        let len = dx.sample_len();
        for i in 0..x.n {
            ops::convt_backward(
                x.sample(i),
                self.cin,
                x.dims.zyx(),
                &self.weight.value,
                self.cout,
                dy.dims.zyx(),
                &self.geom,
                dy.sample(i),
                &mut self.weight.grad,
                Some(&mut self.bias.grad),
                Some(&mut dx.data[i * len..(i + 1) * len]),
                &mut s,
            );
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Batch normalization over `(N, W, H, D)` per channel.
#[derive(Debug, Clone)]
pub struct BatchNorm3d<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    momentum: f64,
    eps: f64,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm3d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(format!("{name}.gamma"), vec![channels], vec![T::one(); channels], true),
            beta: Param::new(format!("{name}.beta"), vec![channels], vec![T::zero(); channels], true),
            running_mean: Param::new(format!("{name}.running_mean"), vec![channels], vec![T::zero(); channels], false),
            running_var: Param::new(format!("{name}.running_var"), vec![channels], vec![T::one(); channels], false),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let p = x.spatial();
        let mut y = x.clone();
        for c in 0..self.channels {
            let inv = T::c(1.0 / (self.running_var.value[c].as_f64() + self.eps).sqrt());
            let scale = self.gamma.value[c] * inv;
            let shift = self.beta.value[c] - self.running_mean.value[c] * scale;
            for i in 0..x.n {
                let off = (i * x.c + c) * p;
                for v in &mut y.data[off..off + p] {
                    *v = *v * scale + shift;
                }
            }
        }
        y
    }

    pub fn train_forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        let p = x.spatial();
        let m = (x.n * p) as f64;
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut inv_std = vec![T::zero(); self.channels];
        let mut y = x;
        for c in 0..self.channels {
            let mut mean = 0.0;
            for i in 0..y.n {
                mean += y.channel(i, c).iter().map(|v| v.as_f64()).sum::<f64>();
            }
            mean /= m;
            let mut var = 0.0;
            for i in 0..y.n {
                var += y.channel(i, c).iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
            }
            var /= m;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = T::c(inv);
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            let (mean_t, inv_t) = (T::c(mean), T::c(inv));
            for i in 0..y.n {
                let off = (i * y.c + c) * p;
                for (v, xh) in y.data[off..off + p].iter_mut().zip(&mut xhat[off..off + p]) {
                    *xh = (*v - mean_t) * inv_t;
                    *v = g * *xh + b;
                }
            }
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            let mo = self.momentum;
            self.running_mean.value[c] = T::c((1.0 - mo) * self.running_mean.value[c].as_f64() + mo * mean);
            self.running_var.value[c] = T::c((1.0 - mo) * self.running_var.value[c].as_f64() + mo * unbiased);
        }
        self.cache = Some(BnCache { xhat, inv_std });
        y
    }

    pub fn backward(&mut self, dy: Tensor<T>) -> Tensor<T> {
        let BnCache { xhat, inv_std } = self.cache.take().expect("backward without train_forward");
        let p = dy.spatial();
        let m = T::c((dy.n * p) as f64);
        let mut dx = dy;
        for c in 0..self.channels {
            let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
            for i in 0..dx.n {
                let off = (i * dx.c + c) * p;
                for (g, &xh) in dx.data[off..off + p].iter().zip(&xhat[off..off + p]) {
                    sum_dy += *g;
                    sum_dy_xhat += *g * xh;
                }
            }
            self.beta.grad[c] += sum_dy;
            self.gamma.grad[c] += sum_dy_xhat;
            let k = self.gamma.value[c] * inv_std[c] / m;
            for i in 0..dx.n {
                let off = (i * dx.c + c) * p;
                for (g, &xh) in dx.data[off..off + p].iter_mut().zip(&xhat[off..off + p]) {
                    *g = k * (m * *g - sum_dy - xh * sum_dy_xhat);
                }
            }
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}

/// 3x3x3 convolution, optional batch normalization, leaky ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock<T> {
    pub conv: Conv3d<T>,
    pub norm: Option<BatchNorm3d<T>>,
    slope: T,
    pre_act: Option<Tensor<T>>,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new<R: Rng>(name: &str, cin: usize, cout: usize, stride: [usize; 3], norm: bool, slope: f64, rng: &mut R) -> Self {
        Self {
            conv: Conv3d::new(&format!("{name}.conv"), cin, cout, [3, 3, 3], stride, rng),
            norm: norm.then(|| BatchNorm3d::new(&format!("{name}.bn"), cout)),
            slope: T::c(slope),
            pre_act: None,
        }
    }

    fn activate(&self, mut t: Tensor<T>) -> Tensor<T> {
        for v in &mut t.data {
            if *v < T::zero() {
                *v *= self.slope;
            }
        }
        t
    }

    pub fn out_dims(&self, d: Dims3) -> Dims3 {
        self.conv.out_dims(d)
    }

    pub fn eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.conv.eval(x);
        if let Some(bn) = &self.norm {
            y = bn.eval(&y);
        }
        self.activate(y)
    }

    pub fn train_forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        let mut y = self.conv.train_forward(x);
        if let Some(bn) = &mut self.norm {
            y = bn.train_forward(y);
        }
        self.pre_act = Some(y.clone());
        self.activate(y)
    }

    pub fn backward(&mut self, mut dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let pre = self.pre_act.take().expect("backward without train_forward");
        for (g, &z) in dy.data.iter_mut().zip(&pre.data) {
            if z < T::zero() {
                *g *= self.slope;
            }
        }
        if let Some(bn) = &mut self.norm {
            dy = bn.backward(dy);
        }
        self.conv.backward(&dy, need_dx)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.conv.params();
        if let Some(bn) = &self.norm {
            v.extend(bn.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv.params_mut();
        if let Some(bn) = &mut self.norm {
            v.extend(bn.params_mut());
        }
        v
    }
}

/// 2x2x2 max pooling with stride `(sW, sH, sD)`.
#[derive(Debug, Clone)]
pub struct MaxPool3d {
    stride: [usize; 3],
    cache: Option<(Vec<u32>, Dims3)>,
}

impl MaxPool3d {
    pub fn new(stride: [usize; 3]) -> Self {
        Self { stride: zyx(stride), cache: None }
    }

    pub fn out_dims(&self, d: Dims3) -> Dims3 {
        let n = d.zyx();
        let s = self.stride;
        Dims3::from_zyx([n[0].div_ceil(s[0]), n[1].div_ceil(s[1]), n[2].div_ceil(s[2])])
    }

    fn run<T: Scalar>(&self, x: &Tensor<T>, argmax: Option<&mut Vec<u32>>) -> Tensor<T> {
        let od = self.out_dims(x.dims);
        let mut y = Tensor::zeros(x.n, x.c, od);
        let ol = x.c * od.len();
        let mut arg = argmax;
        if let Some(a) = arg.as_deref_mut() {
            a.resize(x.n * ol, 0);
        }
        for i in 0..x.n {
            let a = arg.as_deref_mut().map(|a| &mut a[i * ol..(i + 1) * ol]);
            ops::maxpool_forward(x.sample(i), x.c, x.dims.zyx(), self.stride, od.zyx(), y.sample_mut(i), a);
        }
        y
    }

    pub fn eval<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x, None)
    }

    pub fn train_forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut arg = Vec::new();
        let y = self.run(x, Some(&mut arg));
        self.cache = Some((arg, x.dims));
        y
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (arg, in_dims) = self.cache.take().expect("backward without train_forward");
        let mut dx = Tensor::zeros(dy.n, dy.c, in_dims);
        let (ov, iv) = (dy.spatial(), in_dims.len());
        for i in 0..dy.n {
            for c in 0..dy.c {
                let base_o = (i * dy.c + c) * ov;
                let base_i = (i * dy.c + c) * iv;
                for o in 0..ov {
                    dx.data[base_i + arg[base_o + o] as usize] += dy.data[base_o + o];
                }
            }
        }
        dx
    }
}

/// Non-learned linear upsampling with integer factors `(fW, fH, fD)`; factor-1 axes untouched.
#[derive(Debug, Clone)]
pub struct Upsample {
    factor: [usize; 3],
    in_dims: Option<Dims3>,
}

impl Upsample {
    pub fn new(factor: [usize; 3]) -> Self {
        Self { factor, in_dims: None }
    }

    pub fn out_dims(&self, d: Dims3) -> Dims3 {
        Dims3::new(d.w * self.factor[0], d.h * self.factor[1], d.d * self.factor[2])
    }

    pub fn eval<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let nc = x.n * x.c;
        let mut dims = x.dims;
        let mut data = x.data.clone();
        // W axis: [nc*D*H, W, 1]
        if self.factor[0] > 1 {
            data = ops::upsample_axis(&data, nc * dims.d * dims.h, dims.w, 1, self.factor[0]);
            dims.w *= self.factor[0];
        }
        if self.factor[1] > 1 {
            data = ops::upsample_axis(&data, nc * dims.d, dims.h, dims.w, self.factor[1]);
            dims.h *= self.factor[1];
        }
        if self.factor[2] > 1 {
            data = ops::upsample_axis(&data, nc, dims.d, dims.h * dims.w, self.factor[2]);
            dims.d *= self.factor[2];
        }
        Tensor { n: x.n, c: x.c, dims, data }
    }

    pub fn train_forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.in_dims = Some(x.dims);
        self.eval(x)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let in_dims = self.in_dims.take().expect("backward without train_forward");
        let nc = dy.n * dy.c;
        let mut dims = dy.dims;
        let mut data = dy.data.clone();
        if self.factor[2] > 1 {
            dims.d /= self.factor[2];
            data = ops::upsample_axis_backward(&data, nc, dims.d, dims.h * dims.w, self.factor[2]);
        }
        if self.factor[1] > 1 {
            dims.h /= self.factor[1];
            data = ops::upsample_axis_backward(&data, nc * dims.d, dims.h, dims.w, self.factor[1]);
        }
        if self.factor[0] > 1 {
            dims.w /= self.factor[0];
            data = ops::upsample_axis_backward(&data, nc * dims.d * dims.h, dims.w, 1, self.factor[0]);
        }
        debug_assert_eq!(dims, in_dims);
        Tensor { n: dy.n, c: dy.c, dims, data }
    }
}

/// Channel softmax head.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(logits.n, logits.c, logits.dims);
    let p = logits.spatial();
    for i in 0..logits.n {
        ops::softmax_channels(logits.sample(i), logits.c, p, out.sample_mut(i));
    }
    out
}

pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(probs.n, probs.c, probs.dims);
    let p = probs.spatial();
    for i in 0..probs.n {
        ops::softmax_backward(probs.sample(i), grad.sample(i), probs.c, p, out.sample_mut(i));
    }
    out
}
