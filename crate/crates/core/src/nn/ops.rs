//! Low-level kernels. Spatial triples here are ordered slowest to fastest, `[D, H, W]`.

use crate::scalar::{gemm, MatView, Scalar};

/// Upper bound on im2col scratch entries per block.
const COL_BUDGET: usize = 1 << 22;

/// Kernel geometry of a (transposed) convolution; field coordinate = `o * stride + k - pad`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Geometry {
    pub fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Output extent of a padded convolution over `n`.
    #[cfg(test)]
    pub fn conv_out(&self, n: [usize; 3]) -> [usize; 3] {
        let mut o = [0; 3];
        for a in 0..3 {
            o[a] = (n[a] + 2 * self.pad[a] - self.kernel[a]) / self.stride[a] + 1;
        }
        o
    }
}

#[inline]
fn valid_range(n_field: usize, n_grid: usize, s: usize, off: isize) -> (usize, usize) {
    let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(s) };
    let top = n_field as isize - 1 - off;
    let hi = if top < 0 { 0 } else { (top as usize / s + 1).min(n_grid) };
    (lo.min(hi), hi)
}

fn z_blocks(grid: [usize; 3], rows: usize) -> usize {
    let plane = grid[1] * grid[2];
    (COL_BUDGET / (rows * plane).max(1)).max(1)
}

/// Gathers `col[(c * kvol + k), p]` for grid positions with `z` in `z0..z1`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col<T: Scalar>(
    field: &[T],
    channels: usize,
    field_n: [usize; 3],
    grid: [usize; 3],
    z0: usize,
    z1: usize,
    g: &Geometry,
    col: &mut [T],
) {
    let [gz, gy, gx] = grid;
    let _ = gz;
    let [fz, fy, fx] = field_n;
    let fvol = fz * fy * fx;
    let plane = gy * gx;
    let pblk = (z1 - z0) * plane;
    let [kzn, kyn, kxn] = g.kernel;
    let [sz, sy, sx] = g.stride;
    let kvol = g.kvol();
    for c in 0..channels {
        let fc = &field[c * fvol..(c + 1) * fvol];
        for kz in 0..kzn {
            let offz = kz as isize - g.pad[0] as isize;
            let (zlo, zhi) = valid_range(fz, grid[0], sz, offz);
            for ky in 0..kyn {
                let offy = ky as isize - g.pad[1] as isize;
                let (ylo, yhi) = valid_range(fy, gy, sy, offy);
                for kx in 0..kxn {
                    let offx = kx as isize - g.pad[2] as isize;
                    let (xlo, xhi) = valid_range(fx, gx, sx, offx);
                    let row = c * kvol + (kz * kyn + ky) * kxn + kx;
                    let dst = &mut col[row * pblk..(row + 1) * pblk];
                    for oz in z0..z1 {
                        let zrow = &mut dst[(oz - z0) * plane..(oz - z0 + 1) * plane];
                        if oz < zlo || oz >= zhi {
                            zrow.fill(T::zero());
                            continue;
                        }
                        let iz = (oz as isize * sz as isize + offz) as usize;
                        for oy in 0..gy {
                            let r = &mut zrow[oy * gx..(oy + 1) * gx];
                            if oy < ylo || oy >= yhi {
                                r.fill(T::zero());
                                continue;
                            }
                            let iy = (oy as isize * sy as isize + offy) as usize;
                            let src = &fc[(iz * fy + iy) * fx..(iz * fy + iy + 1) * fx];
                            r[..xlo].fill(T::zero());
                            r[xhi..].fill(T::zero());
                            if sx == 1 {
                                let ix0 = (xlo as isize + offx) as usize;
                                r[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                            } else {
                                for (ox, v) in r.iter_mut().enumerate().take(xhi).skip(xlo) {
                                    *v = src[(ox as isize * sx as isize + offx) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `col` into `field`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im<T: Scalar>(
    col: &[T],
    channels: usize,
    field_n: [usize; 3],
    grid: [usize; 3],
    z0: usize,
    z1: usize,
    g: &Geometry,
    field: &mut [T],
) {
    let [_, gy, gx] = grid;
    let [fz, fy, fx] = field_n;
    let fvol = fz * fy * fx;
    let plane = gy * gx;
    let pblk = (z1 - z0) * plane;
    let [kzn, kyn, kxn] = g.kernel;
    let [sz, sy, sx] = g.stride;
    let kvol = g.kvol();
    for c in 0..channels {
        let fc = &mut field[c * fvol..(c + 1) * fvol];
        for kz in 0..kzn {
            let offz = kz as isize - g.pad[0] as isize;
            let (zlo, zhi) = valid_range(fz, grid[0], sz, offz);
            for ky in 0..kyn {
                let offy = ky as isize - g.pad[1] as isize;
                let (ylo, yhi) = valid_range(fy, gy, sy, offy);
                for kx in 0..kxn {
                    let offx = kx as isize - g.pad[2] as isize;
                    let (xlo, xhi) = valid_range(fx, gx, sx, offx);
                    let row = c * kvol + (kz * kyn + ky) * kxn + kx;
                    let src = &col[row * pblk..(row + 1) * pblk];
                    for oz in z0.max(zlo)..z1.min(zhi) {
                        let iz = (oz as isize * sz as isize + offz) as usize;
                        for oy in ylo..yhi {
                            let iy = (oy as isize * sy as isize + offy) as usize;
                            let r = &src[(oz - z0) * plane + oy * gx..(oz - z0) * plane + (oy + 1) * gx];
                            let dst = &mut fc[(iz * fy + iy) * fx..(iz * fy + iy + 1) * fx];
                            if sx == 1 {
                                let ix0 = (xlo as isize + offx) as usize;
                                for (d, &v) in dst[ix0..ix0 + (xhi - xlo)].iter_mut().zip(&r[xlo..xhi]) {
                                    *d += v;
                                }
                            } else {
                                for (ox, &v) in r.iter().enumerate().take(xhi).skip(xlo) {
                                    dst[(ox as isize * sx as isize + offx) as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// One sample of a convolution: `y[cout, P] = w[cout, cin*kvol] * im2col(x) + b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward<T: Scalar>(
    x: &[T],
    cin: usize,
    in_n: [usize; 3],
    w: &[T],
    b: Option<&[T]>,
    cout: usize,
    out_n: [usize; 3],
    g: &Geometry,
    y: &mut [T],
    scratch: &mut Vec<T>,
) {
    let k = cin * g.kvol();
    let plane = out_n[1] * out_n[2];
    let ptot = out_n[0] * plane;
    let blk = z_blocks(out_n, k);
    let mut z0 = 0;
    while z0 < out_n[0] {
        let z1 = (z0 + blk).min(out_n[0]);
        let pblk = (z1 - z0) * plane;
        scratch.resize(k * pblk, T::zero());
        im2col(x, cin, in_n, out_n, z0, z1, g, scratch);
        gemm(
            T::one(),
            MatView::row_major(w, cout, k, k),
            MatView::row_major(scratch, k, pblk, pblk),
            T::zero(),
            &mut y[z0 * plane..],
            ptot,
        );
        z0 = z1;
    }
    if let Some(b) = b {
        for (co, &bv) in b.iter().enumerate() {
            for v in &mut y[co * ptot..(co + 1) * ptot] {
                *v += bv;
            }
        }
    }
}

/// Gradients of one convolution sample. `dw`/`db` accumulate; `dx` is overwritten when given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    cin: usize,
    in_n: [usize; 3],
    w: &[T],
    cout: usize,
    out_n: [usize; 3],
    g: &Geometry,
    dy: &[T],
    dw: &mut [T],
    db: Option<&mut [T]>,
    mut dx: Option<&mut [T]>,
    scratch: &mut Vec<T>,
    scratch2: &mut Vec<T>,
) {
    let k = cin * g.kvol();
    let plane = out_n[1] * out_n[2];
    let ptot = out_n[0] * plane;
    if let Some(db) = db {
        for (co, v) in db.iter_mut().enumerate() {
            *v += dy[co * ptot..(co + 1) * ptot].iter().copied().sum::<T>();
        }
    }
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(T::zero());
    }
    let blk = z_blocks(out_n, k);
    let mut z0 = 0;
    while z0 < out_n[0] {
        let z1 = (z0 + blk).min(out_n[0]);
        let pblk = (z1 - z0) * plane;
        let dyb = MatView { data: &dy[z0 * plane..], rows: cout, cols: pblk, rs: ptot, cs: 1 };
        scratch.resize(k * pblk, T::zero());
        im2col(x, cin, in_n, out_n, z0, z1, g, scratch);
        gemm(T::one(), dyb, MatView::transposed(scratch, pblk, k, pblk), T::one(), dw, k);
        if let Some(dx) = dx.as_deref_mut() {
            scratch2.resize(k * pblk, T::zero());
            gemm(T::one(), MatView::transposed(w, k, cout, k), dyb, T::zero(), scratch2, pblk);
            col2im(scratch2, cin, in_n, out_n, z0, z1, g, dx);
        }
        z0 = z1;
    }
}

/// One sample of a transposed convolution; `w` is `[cin, cout*kvol]`, output cropped to `out_n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn convt_forward<T: Scalar>(
    x: &[T],
    cin: usize,
    in_n: [usize; 3],
    w: &[T],
    b: Option<&[T]>,
    cout: usize,
    out_n: [usize; 3],
    g: &Geometry,
    y: &mut [T],
    scratch: &mut Vec<T>,
) {
    let k2 = cout * g.kvol();
    let plane = in_n[1] * in_n[2];
    let ptot = in_n[0] * plane;
    y.fill(T::zero());
    let blk = z_blocks(in_n, k2);
    let mut z0 = 0;
    while z0 < in_n[0] {
        let z1 = (z0 + blk).min(in_n[0]);
        let pblk = (z1 - z0) * plane;
        scratch.resize(k2 * pblk, T::zero());
        let xb = MatView { data: &x[z0 * plane..], rows: cin, cols: pblk, rs: ptot, cs: 1 };
        gemm(T::one(), MatView::transposed(w, k2, cin, k2), xb, T::zero(), scratch, pblk);
        col2im(scratch, cout, out_n, in_n, z0, z1, g, y);
        z0 = z1;
    }
    if let Some(b) = b {
        let ov: usize = out_n.iter().product();
        for (co, &bv) in b.iter().enumerate() {
            for v in &mut y[co * ov..(co + 1) * ov] {
                *v += bv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn convt_backward<T: Scalar>(
    x: &[T],
    cin: usize,
    in_n: [usize; 3],
    w: &[T],
    cout: usize,
    out_n: [usize; 3],
    g: &Geometry,
    dy: &[T],
    dw: &mut [T],
    db: Option<&mut [T]>,
    dx: Option<&mut [T]>,
    scratch: &mut Vec<T>,
) {
    let k2 = cout * g.kvol();
    let plane = in_n[1] * in_n[2];
    let ptot = in_n[0] * plane;
    if let Some(db) = db {
        let ov: usize = out_n.iter().product();
        for (co, v) in db.iter_mut().enumerate() {
            *v += dy[co * ov..(co + 1) * ov].iter().copied().sum::<T>();
        }
    }
    let mut dx = dx;
    let blk = z_blocks(in_n, k2);
    let mut z0 = 0;
    while z0 < in_n[0] {
        let z1 = (z0 + blk).min(in_n[0]);
        let pblk = (z1 - z0) * plane;
        scratch.resize(k2 * pblk, T::zero());
        im2col(dy, cout, out_n, in_n, z0, z1, g, scratch);
        let xb = MatView { data: &x[z0 * plane..], rows: cin, cols: pblk, rs: ptot, cs: 1 };
        gemm(T::one(), xb, MatView::transposed(scratch, pblk, k2, pblk), T::one(), dw, k2);
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                T::one(),
                MatView::row_major(w, cin, k2, k2),
                MatView::row_major(scratch, k2, pblk, pblk),
                T::zero(),
                &mut dx[z0 * plane..],
                ptot,
            );
        }
        z0 = z1;
    }
}

/// 2x2x2 max pooling with per-axis stride; output extent `ceil(n / s)`.
pub(crate) fn maxpool_forward<T: Scalar>(
    x: &[T],
    channels: usize,
    in_n: [usize; 3],
    stride: [usize; 3],
    out_n: [usize; 3],
    y: &mut [T],
    mut argmax: Option<&mut [u32]>,
) {
    let iv: usize = in_n.iter().product();
    let ov: usize = out_n.iter().product();
    for c in 0..channels {
        let xc = &x[c * iv..(c + 1) * iv];
        for oz in 0..out_n[0] {
            for oy in 0..out_n[1] {
                for ox in 0..out_n[2] {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0usize;
                    for iz in oz * stride[0]..(oz * stride[0] + 2).min(in_n[0]) {
                        for iy in oy * stride[1]..(oy * stride[1] + 2).min(in_n[1]) {
                            for ix in ox * stride[2]..(ox * stride[2] + 2).min(in_n[2]) {
                                let i = (iz * in_n[1] + iy) * in_n[2] + ix;
                                if xc[i] > best {
                                    best = xc[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let o = c * ov + (oz * out_n[1] + oy) * out_n[2] + ox;
                    y[o] = best;
                    if let Some(a) = argmax.as_deref_mut() {
                        a[o] = best_i as u32;
                    }
                }
            }
        }
    }
}

/// Linear-interpolation taps for upsampling `n` samples by `f` (pixel-centre aligned).
fn lerp_taps(n: usize, f: usize) -> Vec<(usize, usize, f64)> {
    (0..n * f)
        .map(|o| {
            let s = ((o as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Linear upsampling along the middle axis of an `[outer, n, inner]` view.
pub(crate) fn upsample_axis<T: Scalar>(x: &[T], outer: usize, n: usize, inner: usize, f: usize) -> Vec<T> {
    let taps = lerp_taps(n, f);
    let m = n * f;
    let mut y = vec![T::zero(); outer * m * inner];
    for o in 0..outer {
        let xs = &x[o * n * inner..(o + 1) * n * inner];
        let ys = &mut y[o * m * inner..(o + 1) * m * inner];
        for (j, &(i0, i1, t)) in taps.iter().enumerate() {
            let (a, b) = (T::c(1.0 - t), T::c(t));
            let dst = &mut ys[j * inner..(j + 1) * inner];
            let s0 = &xs[i0 * inner..(i0 + 1) * inner];
            let s1 = &xs[i1 * inner..(i1 + 1) * inner];
            for ((d, &u), &v) in dst.iter_mut().zip(s0).zip(s1) {
                *d = a * u + b * v;
            }
        }
    }
    y
}

/// Adjoint of [`upsample_axis`].
pub(crate) fn upsample_axis_backward<T: Scalar>(dy: &[T], outer: usize, n: usize, inner: usize, f: usize) -> Vec<T> {
    let taps = lerp_taps(n, f);
    let m = n * f;
    let mut dx = vec![T::zero(); outer * n * inner];
    for o in 0..outer {
        let ds = &dy[o * m * inner..(o + 1) * m * inner];
        let xs = &mut dx[o * n * inner..(o + 1) * n * inner];
        for (j, &(i0, i1, t)) in taps.iter().enumerate() {
            let (a, b) = (T::c(1.0 - t), T::c(t));
            let src = &ds[j * inner..(j + 1) * inner];
            for (k, &g) in src.iter().enumerate() {
                xs[i0 * inner + k] += a * g;
                xs[i1 * inner + k] += b * g;
            }
        }
    }
    dx
}

/// Channel softmax of one sample laid out `[C, P]`.
pub(crate) fn softmax_channels<T: Scalar>(logits: &[T], c: usize, p: usize, out: &mut [T]) {
    for v in 0..p {
        let mut mx = T::neg_infinity();
        for k in 0..c {
            mx = mx.max(logits[k * p + v]);
        }
        let mut s = T::zero();
        for k in 0..c {
            let e = (logits[k * p + v] - mx).exp();
            out[k * p + v] = e;
            s += e;
        }
        let inv = T::one() / s;
        for k in 0..c {
            out[k * p + v] *= inv;
        }
    }
}

/// `dz_k = p_k (g_k - sum_j p_j g_j)` for one sample.
pub(crate) fn softmax_backward<T: Scalar>(probs: &[T], grad: &[T], c: usize, p: usize, out: &mut [T]) {
    for v in 0..p {
        let mut dot = T::zero();
        for k in 0..c {
            dot += probs[k * p + v] * grad[k * p + v];
        }
        for k in 0..c {
            out[k * p + v] = probs[k * p + v] * (grad[k * p + v] - dot);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-summation convolution used as an independent reference.
    fn conv_direct(
        x: &[f64],
        cin: usize,
        in_n: [usize; 3],
        w: &[f64],
        cout: usize,
        g: &Geometry,
    ) -> (Vec<f64>, [usize; 3]) {
        let out_n = g.conv_out(in_n);
        let ov: usize = out_n.iter().product();
        let iv: usize = in_n.iter().product();
        let kv = g.kvol();
        let mut y = vec![0.0; cout * ov];
        for co in 0..cout {
            for oz in 0..out_n[0] {
                for oy in 0..out_n[1] {
                    for ox in 0..out_n[2] {
                        let mut s = 0.0;
                        for ci in 0..cin {
                            for kz in 0..g.kernel[0] {
                                for ky in 0..g.kernel[1] {
                                    for kx in 0..g.kernel[2] {
                                        let iz = (oz * g.stride[0] + kz) as isize - g.pad[0] as isize;
                                        let iy = (oy * g.stride[1] + ky) as isize - g.pad[1] as isize;
                                        let ix = (ox * g.stride[2] + kx) as isize - g.pad[2] as isize;
                                        if iz < 0 || iy < 0 || ix < 0 {
                                            continue;
                                        }
                                        let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                        if iz >= in_n[0] || iy >= in_n[1] || ix >= in_n[2] {
                                            continue;
                                        }
                                        let wi = co * cin * kv + ci * kv + (kz * g.kernel[1] + ky) * g.kernel[2] + kx;
                                        s += w[wi] * x[ci * iv + (iz * in_n[1] + iy) * in_n[2] + ix];
                                    }
                                }
                            }
                        }
                        y[co * ov + (oz * out_n[1] + oy) * out_n[2] + ox] = s;
                    }
                }
            }
        }
        (y, out_n)
    }

    fn seq(n: usize, a: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * a).sin()).collect()
    }

    #[test]
    fn im2col_conv_matches_direct_sum() {
        for (stride, in_n) in [([1, 1, 1], [3, 5, 4]), ([1, 2, 1], [4, 6, 3]), ([2, 2, 2], [5, 4, 6])] {
            let g = Geometry { kernel: [3, 3, 3], stride, pad: [1, 1, 1] };
            let (cin, cout) = (2, 3);
            let iv: usize = in_n.iter().product();
            let x = seq(cin * iv, 0.37);
            let w = seq(cout * cin * 27, 0.11);
            let (want, out_n) = conv_direct(&x, cin, in_n, &w, cout, &g);
            let mut y = vec![0.0; want.len()];
            let mut scratch = Vec::new();
            conv_forward(&x, cin, in_n, &w, None, cout, out_n, &g, &mut y, &mut scratch);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "stride {stride:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Geometry { kernel: [3, 3, 3], stride: [1, 2, 1], pad: [1, 1, 1] };
        let field_n = [3, 6, 4];
        let grid = g.conv_out(field_n);
        let c = 2;
        let fv: usize = field_n.iter().product();
        let p: usize = grid.iter().product();
        let x = seq(c * fv, 0.3);
        let y = seq(c * 27 * p, 0.7);
        let mut col = vec![0.0; c * 27 * p];
        im2col(&x, c, field_n, grid, 0, grid[0], &g, &mut col);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; c * fv];
        col2im(&y, c, field_n, grid, 0, grid[0], &g, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_strided_conv() {
        // <conv(x), y> == <x, convT(y)> with shared weights (bias-free)
        let g = Geometry { kernel: [2, 2, 2], stride: [1, 2, 1], pad: [0, 0, 0] };
        let small = [3, 4, 5];
        let big = [3, 8, 5];
        let (cs, cb) = (3, 2);
        let w = seq(cs * cb * 8, 0.21); // convT layout [cs, cb*kvol] == conv layout [cout=cs, cin=cb*kvol]
        let xb = seq(cb * big.iter().product::<usize>(), 0.13);
        let ys = seq(cs * small.iter().product::<usize>(), 0.17);
        // conv big -> small uses field=big, grid=small
        let mut conv_out = vec![0.0; ys.len()];
        let mut s = Vec::new();
        conv_forward(&xb, cb, big, &w, None, cs, small, &g, &mut conv_out, &mut s);
        let lhs: f64 = conv_out.iter().zip(&ys).map(|(a, b)| a * b).sum();
        let mut t_out = vec![0.0; xb.len()];
        convt_forward(&ys, cs, small, &w, None, cb, big, &g, &mut t_out, &mut s);
        let rhs: f64 = t_out.iter().zip(&xb).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let (outer, n, inner, f) = (2, 5, 3, 2);
        let x = seq(outer * n * inner, 0.4);
        let y = seq(outer * n * f * inner, 0.9);
        let up = upsample_axis(&x, outer, n, inner, f);
        let lhs: f64 = up.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = upsample_axis_backward(&y, outer, n, inner, f);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        // constants stay constant
        let c = upsample_axis(&[2.0f64; 4], 1, 4, 1, 2);
        assert!(c.iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn maxpool_picks_window_maximum_with_overlap() {
        // stride 1 on the last axis: windows overlap and the tail window is clipped
        let x: Vec<f64> = vec![1.0, 5.0, 2.0, 4.0, 3.0, 0.0, 7.0, 1.0];
        let mut y = vec![0.0; 4];
        maxpool_forward(&x, 1, [1, 2, 4], [1, 2, 1], [1, 1, 4], &mut y, None);
        assert_eq!(y, vec![5.0, 7.0, 7.0, 4.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let l = vec![1.0f64, -2.0, 0.5, 3.0, 0.0, 0.0];
        let mut p = vec![0.0; 6];
        softmax_channels(&l, 3, 2, &mut p);
        for v in 0..2 {
            let s: f64 = (0..3).map(|k| p[k * 2 + v]).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }
}
