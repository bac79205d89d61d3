use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::Dims3;

/// Batched channels-first volume, `(N, C, W, H, D)` with W-fastest storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub dims: Dims3,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(n: usize, c: usize, dims: Dims3) -> Self {
        Self { n, c, dims, data: vec![T::zero(); n * c * dims.len()] }
    }

    pub fn from_vec(n: usize, c: usize, dims: Dims3, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * dims.len() {
            return Err(Error::Argument(format!(
                "tensor data has {} entries, shape ({n}, {c}, {dims}) needs {}",
                data.len(),
                n * c * dims.len()
            )));
        }
        Ok(Self { n, c, dims, data })
    }

    pub fn spatial(&self) -> usize {
        self.dims.len()
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.dims.len()
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.sample_len();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn channel(&self, i: usize, c: usize) -> &[T] {
        let p = self.dims.len();
        let off = (i * self.c + c) * p;
        &self.data[off..off + p]
    }

    /// Concatenates along channels: `[a, b]`.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        assert_eq!(a.n, b.n);
        assert_eq!(a.dims, b.dims);
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        for i in 0..a.n {
            data.extend_from_slice(a.sample(i));
            data.extend_from_slice(b.sample(i));
        }
        Tensor { n: a.n, c: a.c + b.c, dims: a.dims, data }
    }

    /// Inverse of [`concat_channels`](Self::concat_channels).
    pub fn split_channels(&self, first: usize) -> (Tensor<T>, Tensor<T>) {
        assert!(first <= self.c);
        let p = self.dims.len();
        let mut a = Vec::with_capacity(self.n * first * p);
        let mut b = Vec::with_capacity(self.n * (self.c - first) * p);
        for i in 0..self.n {
            let s = self.sample(i);
            a.extend_from_slice(&s[..first * p]);
            b.extend_from_slice(&s[first * p..]);
        }
        (
            Tensor { n: self.n, c: first, dims: self.dims, data: a },
            Tensor { n: self.n, c: self.c - first, dims: self.dims, data: b },
        )
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Stacks single-sample tensors into a batch.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items.first().ok_or_else(|| Error::Argument("cannot stack an empty batch".into()))?;
        let mut data = Vec::with_capacity(items.len() * first.sample_len());
        let mut n = 0;
        for t in items {
            if t.c != first.c || t.dims != first.dims {
                return Err(Error::Argument("batch members differ in shape".into()));
            }
            data.extend_from_slice(&t.data);
            n += t.n;
        }
        Ok(Tensor { n, c: first.c, dims: first.dims, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
