//! Floating-point scalar abstraction shared by the volume types and the network engine.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// NRRD `type:` field for this scalar.
    const NRRD_TYPE: &'static str;
    /// Tag used in checkpoint headers.
    const DTYPE: &'static str;
    const BYTES: usize;

    fn from_f64_lossy(v: f64) -> Self;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = alpha * a * b + beta * c` on strided row/column-major views.
    ///
    /// # Safety
    /// All pointers must be valid for the extents implied by the dimensions and strides,
    /// and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const NRRD_TYPE: &'static str = "float";
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const NRRD_TYPE: &'static str = "double";
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(b)
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided matrix view used by [`gemm`].
#[derive(Debug, Clone, Copy)]
pub struct MatView<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatView<'a, T> {
    /// Row-major view with leading dimension `ld`.
    pub fn row_major(data: &'a [T], rows: usize, cols: usize, ld: usize) -> Self {
        Self { data, rows, cols, rs: ld, cs: 1 }
    }

    /// Transposed view of a row-major matrix stored as `cols x rows` with leading dimension `ld`.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize, ld: usize) -> Self {
        Self { data, rows, cols, rs: 1, cs: ld }
    }

    fn extent(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c[m x n] (row stride ldc) = alpha * a * b + beta * c`, bounds-checked.
pub fn gemm<T: Scalar>(
    alpha: T,
    a: MatView<'_, T>,
    b: MatView<'_, T>,
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.extent() <= a.data.len(), "gemm: lhs view out of bounds");
    assert!(b.extent() <= b.data.len(), "gemm: rhs view out of bounds");
    assert!((m - 1) * ldc + n <= c.len(), "gemm: output view out of bounds");
    if k == 0 {
        for r in 0..m {
            for v in &mut c[r * ldc..r * ldc + n] {
                *v = if beta == T::zero() { T::zero() } else { *v * beta };
            }
        }
        return;
    }
    // SAFETY: extents checked above; `c` is a distinct mutable borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}
