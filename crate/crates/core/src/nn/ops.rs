//! Dense kernels on flat slices. All loops run in a fixed order.

use super::Scalar;

/// Geometry of one convolution on a single sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// `c_in * k * k`
    pub fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// A 1x1, stride-1, unpadded conv reads its input directly as the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold `x` (`c_in x h x w`) into `cols` (`(c_in*k*k) x (oh*ow)`).
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate `cols` back into `dx`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight interleaved accumulators.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (x, y) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `out (m x p) += w (m x q) * cols (q x p)`
pub(crate) fn gemm_acc<T: Scalar>(w: &[T], cols: &[T], out: &mut [T], m: usize, q: usize, p: usize) {
    for i in 0..m {
        let o = &mut out[i * p..(i + 1) * p];
        let wr = &w[i * q..(i + 1) * q];
        for (j, &wij) in wr.iter().enumerate() {
            if wij != T::zero() {
                axpy(o, wij, &cols[j * p..(j + 1) * p]);
            }
        }
    }
}

/// `dw (m x q) += g (m x p) * cols^T`
pub(crate) fn gemm_nt_acc<T: Scalar>(g: &[T], cols: &[T], dw: &mut [T], m: usize, q: usize, p: usize) {
    for i in 0..m {
        let gr = &g[i * p..(i + 1) * p];
        for j in 0..q {
            dw[i * q + j] += dot(gr, &cols[j * p..(j + 1) * p]);
        }
    }
}

/// `dcols (q x p) = w^T (q x m) * g (m x p)`, overwriting `dcols`.
pub(crate) fn gemm_tn<T: Scalar>(w: &[T], g: &[T], dcols: &mut [T], m: usize, q: usize, p: usize) {
    dcols.iter_mut().for_each(|v| *v = T::zero());
    for i in 0..m {
        let gr = &g[i * p..(i + 1) * p];
        for j in 0..q {
            let wij = w[i * q + j];
            if wij != T::zero() {
                axpy(&mut dcols[j * p..(j + 1) * p], wij, gr);
            }
        }
    }
}

/// Max pooling over each of `c` planes; records the flat argmax per output.
#[allow(clippy::too_many_arguments)]
pub(crate) fn maxpool<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out: &mut [T],
    arg: &mut [u32],
) {
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = u32::MAX;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = iy as usize * w + ix as usize;
                        if plane[idx] > best || best_i == u32::MAX {
                            best = plane[idx];
                            best_i = idx as u32;
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out[o] = best;
                arg[o] = (ch * h * w) as u32 + best_i;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], wt: &[f64], g: &ConvGeom, c_out: usize) -> Vec<f64> {
        let mut out = vec![0.0; c_out * g.oh * g.ow];
        for co in 0..c_out {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut s = 0.0;
                    for ci in 0..g.c_in {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                    s += wt[((co * g.c_in + ci) * g.k + ky) * g.k + kx]
                                        * x[(ci * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(co * g.oh + oy) * g.ow + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_naive_conv() {
        let g = ConvGeom { c_in: 2, h: 5, w: 6, k: 3, stride: 2, pad: 1, oh: 3, ow: 3 };
        let x: Vec<f64> = (0..60).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let wt: Vec<f64> = (0..3 * 18).map(|i| ((i * 5) % 7) as f64 - 3.0).collect();
        let mut cols = vec![0.0; g.rows() * g.cols()];
        im2col(&x, &g, &mut cols);
        let mut out = vec![0.0; 3 * g.cols()];
        gemm_acc(&wt, &cols, &mut out, 3, g.rows(), g.cols());
        assert_eq!(out, naive_conv(&x, &wt, &g, 3));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom { c_in: 2, h: 4, w: 5, k: 3, stride: 1, pad: 1, oh: 4, ow: 5 };
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut dx = vec![0.0; x.len()];
        col2im(&y, &g, &mut dx);
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..19).map(f64::from).collect();
        assert_eq!(dot(&a, &a), (0..19).map(|i| (i * i) as f64).sum::<f64>());
    }

    #[test]
    fn maxpool_picks_max() {
        let x = [1.0, 5.0, 2.0, 3.0f64];
        let mut out = [0.0];
        let mut arg = [0u32];
        maxpool(&x, 1, 2, 2, 2, 2, 0, 1, 1, &mut out, &mut arg);
        assert_eq!((out[0], arg[0]), (5.0, 1));
    }
}
