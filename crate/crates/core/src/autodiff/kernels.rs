//! Dense compute kernels: matrix products, im2col convolution, resampling.

use std::ops::Range;

/// `C = op(A) · op(B) + beta · C` with row-major storage.
///
/// `A` is stored `m x k` (or `k x m` when `trans_a`), `B` is `k x n` (or `n x k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(trans_a: bool, trans_b: bool, m: usize, n: usize, k: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices have been checked to hold exactly the addressed elements
    // for the given dims and strides.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// 3D convolution geometry. 2D convolutions use depth 1 with kernel depth 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub in_dims: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: usize,
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn out_dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| (self.in_dims[a] + 2 * self.pad[a] - self.kernel[a]) / self.stride + 1)
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_dims().iter().product()
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_volume()
    }
}

/// Expands `x: [C, D, H, W]` to `cols: [C·kd·kh·kw, Do·Ho·Wo]`.
pub fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let od = g.out_dims()[0];
    let mut cols = vec![0.0; g.col_rows() * g.out_len()];
    im2col_slab(x, g, 0..od, &mut cols);
    cols
}

/// Adjoint of [`im2col`]: scatter-adds `cols` back into `dx`.
pub fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    col2im_slab(cols, g, 0..g.out_dims()[0], dx);
}

/// Visits `(row, column range of the slab, input offset)` runs of the column
/// matrix restricted to output planes `oz`, one call per output row segment.
#[inline]
fn for_each_run(g: &ConvGeom, oz: Range<usize>, mut f: impl FnMut(usize, usize, usize, usize, isize)) {
    let [d, h, w] = g.in_dims;
    let [kd, kh, kw] = g.kernel;
    let [_, oh, ow] = g.out_dims();
    let s = g.stride;
    let mut row = 0;
    for c in 0..g.channels {
        let base_c = c * d * h * w;
        for dz in 0..kd {
            for dy in 0..kh {
                for dx in 0..kw {
                    for (local_z, oz_i) in oz.clone().enumerate() {
                        let iz = (oz_i * s + dz) as isize - g.pad[0] as isize;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * s + dy) as isize - g.pad[1] as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            // valid ox: 0 <= ox*s + dx - pad < w
                            let pad = g.pad[2] as isize;
                            let lo = ((pad - dx as isize).max(0) as usize).div_ceil(s);
                            let hi_num = w as isize - 1 + pad - dx as isize;
                            if hi_num < 0 {
                                continue;
                            }
                            let hi = (hi_num as usize / s + 1).min(ow);
                            if lo >= hi {
                                continue;
                            }
                            let col = (local_z * oh + oy) * ow;
                            let input = base_c + (iz as usize * h + iy as usize) * w;
                            let ix0 = (lo * s + dx) as isize - pad;
                            f(row, col + lo, hi - lo, input, ix0);
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// [`im2col`] for output planes `oz` only, into `cols: [C·k³, |oz|·Ho·Wo]`,
/// which must be zeroed by the caller where padding applies.
pub fn im2col_slab(x: &[f64], g: &ConvGeom, oz: Range<usize>, cols: &mut [f64]) {
    let [_, oh, ow] = g.out_dims();
    let n = oz.len() * oh * ow;
    let s = g.stride;
    cols.fill(0.0);
    for_each_run(g, oz, |row, col, len, input, ix0| {
        let dst = &mut cols[row * n + col..row * n + col + len];
        let src = &x[input..];
        if s == 1 {
            dst.copy_from_slice(&src[ix0 as usize..ix0 as usize + len]);
        } else {
            for (k, v) in dst.iter_mut().enumerate() {
                *v = src[ix0 as usize + k * s];
            }
        }
    });
}

/// Adjoint of [`im2col_slab`].
pub fn col2im_slab(cols: &[f64], g: &ConvGeom, oz: Range<usize>, dx: &mut [f64]) {
    let [_, oh, ow] = g.out_dims();
    let n = oz.len() * oh * ow;
    let s = g.stride;
    for_each_run(g, oz, |row, col, len, input, ix0| {
        let src = &cols[row * n + col..row * n + col + len];
        let base = input + ix0 as usize;
        if s == 1 {
            for (d, v) in dx[base..base + len].iter_mut().zip(src) {
                *d += v;
            }
        } else {
            for (k, v) in src.iter().enumerate() {
                dx[base + k * s] += v;
            }
        }
    });
}

/// Column-matrix entries per slab; keeps the working set cache-sized.
const SLAB_ENTRIES: usize = 1 << 17;

/// Calls `f(planes, column offset, cols buffer)` for consecutive slabs of
/// output planes, reusing one buffer sized for the slab.
pub fn for_each_slab(g: &ConvGeom, mut f: impl FnMut(Range<usize>, usize, &mut [f64])) {
    let [od, oh, ow] = g.out_dims();
    let plane = oh * ow;
    let per = (SLAB_ENTRIES / (g.col_rows() * plane).max(1)).clamp(1, od.max(1));
    let mut buf = vec![0.0; g.col_rows() * per * plane];
    let mut z = 0;
    while z < od {
        let z1 = (z + per).min(od);
        let len = g.col_rows() * (z1 - z) * plane;
        f(z..z1, z * plane, &mut buf[..len]);
        z = z1;
    }
}

/// A strided read-only matrix view: element `(i, j)` is `data[off + i·rs + j·cs]`.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, off: 0, rs: cols, cs: 1 }
    }

    /// Column block starting at `off` of a row-major matrix with row stride `ld`.
    pub fn cols_of(data: &'a [f64], ld: usize, off: usize) -> Self {
        Self { data, off, rs: ld, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { rs: self.cs, cs: self.rs, ..self }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            assert!(self.off + (rows - 1) * self.rs + (cols - 1) * self.cs < self.data.len());
        }
    }
}

/// `C = A · B + beta · C` for strided views; `C` is `m x n` at `c[c_off..]` with row stride `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm_strided(m: usize, n: usize, k: usize, a: MatRef, b: MatRef, beta: f64, c: &mut [f64], c_off: usize, ldc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c_off + (m - 1) * ldc + n <= c.len());
    if k == 0 {
        for i in 0..m {
            c[c_off + i * ldc..c_off + i * ldc + n].iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    a.check(m, k);
    b.check(k, n);
    // SAFETY: every addressed element of A, B and C is in bounds (checked above).
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.data.as_ptr().add(a.off), a.rs as isize, a.cs as isize,
            b.data.as_ptr().add(b.off), b.rs as isize, b.cs as isize,
            beta,
            c.as_mut_ptr().add(c_off), ldc as isize, 1,
        );
    }
}

/// Nearest-neighbour 2x upsampling of the trailing spatial dims of `[C, s0, s1, (s2)]`.
pub fn upsample2x(x: &[f64], channels: usize, spatial: &[usize]) -> Vec<f64> {
    let (d, h, w) = match *spatial {
        [h, w] => (1, h, w),
        [d, h, w] => (d, h, w),
        _ => panic!("upsample2x expects 2 or 3 spatial dims"),
    };
    let fd = if spatial.len() == 3 { 2 } else { 1 };
    let (od, oh, ow) = (d * fd, h * 2, w * 2);
    let mut out = vec![0.0; channels * od * oh * ow];
    for c in 0..channels {
        for z in 0..od {
            for y in 0..oh {
                let src = ((c * d + z / fd) * h + y / 2) * w;
                let dst = ((c * od + z) * oh + y) * ow;
                for xo in 0..ow {
                    out[dst + xo] = x[src + xo / 2];
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x`].
pub fn upsample2x_adjoint(g: &[f64], channels: usize, spatial: &[usize]) -> Vec<f64> {
    let (d, h, w) = match *spatial {
        [h, w] => (1, h, w),
        [d, h, w] => (d, h, w),
        _ => panic!("upsample2x expects 2 or 3 spatial dims"),
    };
    let fd = if spatial.len() == 3 { 2 } else { 1 };
    let (od, oh, ow) = (d * fd, h * 2, w * 2);
    let mut out = vec![0.0; channels * d * h * w];
    for c in 0..channels {
        for z in 0..od {
            for y in 0..oh {
                let dst = ((c * d + z / fd) * h + y / 2) * w;
                let src = ((c * od + z) * oh + y) * ow;
                for xo in 0..ow {
                    out[dst + xo / 2] += g[src + xo];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_in_all_transpositions() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive_matmul(&a, &b, m, k, n);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if ta { transpose(&a, m, k) } else { a.clone() };
            let bb = if tb { transpose(&b, k, n) } else { b.clone() };
            let mut c = vec![0.0; m * n];
            gemm(ta, tb, m, n, k, &aa, &bb, 0.0, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom { channels: 2, in_dims: [3, 4, 5], kernel: [3, 3, 3], stride: 2, pad: [1, 1, 1] };
        let n_in = 2 * 3 * 4 * 5;
        let x: Vec<f64> = (0..n_in).map(|i| (i as f64 * 0.13).sin()).collect();
        let cols = im2col(&x, &g);
        let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.71).cos()).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut dx = vec![0.0; n_in];
        col2im(&y, &g, &mut dx);
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn upsample_adjoint() {
        let x: Vec<f64> = (0..2 * 3 * 2).map(|i| i as f64).collect();
        let up = upsample2x(&x, 2, &[3, 2]);
        assert_eq!(up.len(), 2 * 6 * 4);
        assert_eq!(up[0..4], [0.0, 0.0, 1.0, 1.0]);
        let y: Vec<f64> = (0..up.len()).map(|i| (i as f64).sin()).collect();
        let lhs: f64 = up.iter().zip(&y).map(|(a, b)| a * b).sum();
        let adj = upsample2x_adjoint(&y, 2, &[3, 2]);
        let rhs: f64 = x.iter().zip(&adj).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
