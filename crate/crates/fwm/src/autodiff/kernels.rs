//! Compute kernels shared by the f32 forward/backward passes and the f64
//! replay. Forward kernels are generic over the float type; backward
//! kernels are f32 only.

use crate::tensor::gemm::{gemm_nn, gemm_tn};
use num_traits::Float;
use rayon::prelude::*;

/// Shape bookkeeping for a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }
    /// Rows of the im2col matrix: batch * out_h * out_w.
    pub fn rows(&self) -> usize {
        self.batch * self.out_h() * self.out_w()
    }
    /// Columns of the im2col matrix: in_c * kernel * kernel.
    pub fn patch(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }
}

/// Expand one image into patch rows. `cols` must hold `oh*ow * patch`.
fn im2col_image<T: Float>(d: &ConvDims, x: &[T], cols: &mut [T]) {
    let (oh, ow, k) = (d.out_h(), d.out_w(), d.kernel);
    let patch = d.patch();
    let mut row = 0usize;
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut cols[row * patch..(row + 1) * patch];
            let mut idx = 0usize;
            for c in 0..d.in_c {
                let plane = &x[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
                for ky in 0..k {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    for kx in 0..k {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        dst[idx] = if iy >= 0
                            && iy < d.in_h as isize
                            && ix >= 0
                            && ix < d.in_w as isize
                        {
                            plane[iy as usize * d.in_w + ix as usize]
                        } else {
                            T::zero()
                        };
                        idx += 1;
                    }
                }
            }
            row += 1;
        }
    }
}

/// im2col over a batch, parallel across images (disjoint output slices).
pub fn im2col<T: Float + Send + Sync>(d: &ConvDims, x: &[T], cols: &mut [T]) {
    let img = d.in_c * d.in_h * d.in_w;
    let rows_per = d.out_h() * d.out_w();
    let patch = d.patch();
    cols.par_chunks_mut(rows_per * patch)
        .zip(x.par_chunks(img))
        .for_each(|(c, xi)| im2col_image(d, xi, c));
}

/// Forward convolution. Returns `y` in `[B, O, OH, OW]` layout and the
/// im2col matrix (reused by the backward pass).
pub fn conv2d_fwd<T: Float + Send + Sync>(
    d: &ConvDims,
    x: &[T],
    w: &[T],
    b: &[T],
) -> (Vec<T>, Vec<T>) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let (rows, patch) = (d.rows(), d.patch());
    let mut cols = vec![T::zero(); rows * patch];
    im2col(d, x, &mut cols);

    // w is [O, patch] flattened; transpose once for the nn kernel.
    let mut wt = vec![T::zero(); patch * d.out_c];
    for o in 0..d.out_c {
        for p in 0..patch {
            wt[p * d.out_c + o] = w[o * patch + p];
        }
    }
    let mut g = vec![T::zero(); rows * d.out_c];
    gemm_nn(rows, patch, d.out_c, &cols, &wt, &mut g);

    // Interleave [rows, O] -> [B, O, OH, OW], adding bias.
    let hw = oh * ow;
    let mut y = vec![T::zero(); d.batch * d.out_c * hw];
    for bi in 0..d.batch {
        for p in 0..hw {
            let grow = &g[(bi * hw + p) * d.out_c..(bi * hw + p + 1) * d.out_c];
            for o in 0..d.out_c {
                y[(bi * d.out_c + o) * hw + p] = grow[o] + b[o];
            }
        }
    }
    (y, cols)
}

/// Backward convolution: gradients for input, weight and bias.
pub fn conv2d_bwd(
    d: &ConvDims,
    cols: &[f32],
    w: &[f32],
    dy: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let hw = oh * ow;
    let (rows, patch) = (d.rows(), d.patch());

    // De-interleave dy [B, O, OH, OW] -> dg [rows, O].
    let mut dg = vec![0.0f32; rows * d.out_c];
    for bi in 0..d.batch {
        for o in 0..d.out_c {
            let src = &dy[(bi * d.out_c + o) * hw..(bi * d.out_c + o + 1) * hw];
            for p in 0..hw {
                dg[(bi * hw + p) * d.out_c + o] = src[p];
            }
        }
    }

    let mut db = vec![0.0f32; d.out_c];
    for r in 0..rows {
        let row = &dg[r * d.out_c..(r + 1) * d.out_c];
        for o in 0..d.out_c {
            db[o] += row[o];
        }
    }

    // dW[o, p] = sum_r dg[r, o] * cols[r, p]
    let mut dw = vec![0.0f32; d.out_c * patch];
    gemm_tn(rows, d.out_c, patch, &dg, cols, &mut dw);

    // dcols = dg [rows, O] x w [O, patch]
    let mut dcols = vec![0.0f32; rows * patch];
    gemm_nn(rows, d.out_c, patch, &dg, w, &mut dcols);

    // col2im scatter-add, parallel per image (disjoint dx slices).
    let img = d.in_c * d.in_h * d.in_w;
    let rows_per = hw;
    let mut dx = vec![0.0f32; d.batch * img];
    dx.par_chunks_mut(img)
        .zip(dcols.par_chunks(rows_per * patch))
        .for_each(|(dxi, dci)| {
            let k = d.kernel;
            let mut row = 0usize;
            for oy in 0..oh {
                for ox in 0..ow {
                    let src = &dci[row * patch..(row + 1) * patch];
                    let mut idx = 0usize;
                    for c in 0..d.in_c {
                        for ky in 0..k {
                            let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                            for kx in 0..k {
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                if iy >= 0
                                    && iy < d.in_h as isize
                                    && ix >= 0
                                    && ix < d.in_w as isize
                                {
                                    dxi[c * d.in_h * d.in_w
                                        + iy as usize * d.in_w
                                        + ix as usize] += src[idx];
                                }
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        });

    (dx, dw, db)
}

/// Per-channel batch statistics of `[B, C, H, W]` data, index order fixed.
pub fn channel_stats<T: Float>(x: &[T], batch: usize, c: usize, hw: usize) -> (Vec<T>, Vec<T>) {
    let n = T::from(batch * hw).unwrap();
    let mut mean = vec![T::zero(); c];
    for b in 0..batch {
        for ch in 0..c {
            let plane = &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            let mut s = T::zero();
            for v in plane {
                s = s + *v;
            }
            mean[ch] = mean[ch] + s;
        }
    }
    for m in mean.iter_mut() {
        *m = *m / n;
    }
    let mut var = vec![T::zero(); c];
    for b in 0..batch {
        for ch in 0..c {
            let plane = &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            let mut s = T::zero();
            for v in plane {
                let d = *v - mean[ch];
                s = d.mul_add(d, s);
            }
            var[ch] = var[ch] + s;
        }
    }
    for v in var.iter_mut() {
        *v = *v / n;
    }
    (mean, var)
}

/// Normalize with given per-channel mean/var: `y = gamma * x_hat + beta`.
pub fn batch_norm_apply<T: Float>(
    x: &[T],
    batch: usize,
    c: usize,
    hw: usize,
    mean: &[T],
    var: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>) {
    let mut invstd = vec![T::zero(); c];
    for ch in 0..c {
        invstd[ch] = T::one() / (var[ch] + eps).sqrt();
    }
    let mut y = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let (m, is, g, be) = (mean[ch], invstd[ch], gamma[ch], beta[ch]);
            for i in 0..hw {
                y[off + i] = (x[off + i] - m) * is * g + be;
            }
        }
    }
    (y, invstd)
}

/// Backward through batch normalization using batch statistics.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_bwd(
    x: &[f32],
    batch: usize,
    c: usize,
    hw: usize,
    mean: &[f32],
    invstd: &[f32],
    gamma: &[f32],
    dy: &[f32],
    training: bool,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let n = (batch * hw) as f32;
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    let mut sum_dy = vec![0.0f32; c];
    let mut sum_dy_xhat = vec![0.0f32; c];
    for b in 0..batch {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let (m, is) = (mean[ch], invstd[ch]);
            let mut sd = 0.0f32;
            let mut sdx = 0.0f32;
            for i in 0..hw {
                let xhat = (x[off + i] - m) * is;
                sd += dy[off + i];
                sdx += dy[off + i] * xhat;
            }
            sum_dy[ch] += sd;
            sum_dy_xhat[ch] += sdx;
        }
    }
    for ch in 0..c {
        dgamma[ch] = sum_dy_xhat[ch];
        dbeta[ch] = sum_dy[ch];
    }
    let mut dx = vec![0.0f32; x.len()];
    for b in 0..batch {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let (m, is, g) = (mean[ch], invstd[ch], gamma[ch]);
            if training {
                for i in 0..hw {
                    let xhat = (x[off + i] - m) * is;
                    dx[off + i] = g * is / n
                        * (n * dy[off + i] - sum_dy[ch] - xhat * sum_dy_xhat[ch]);
                }
            } else {
                // Running statistics are constants.
                for i in 0..hw {
                    dx[off + i] = g * is * dy[off + i];
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Per-row layer normalization over the last dimension.
pub fn layer_norm_fwd<T: Float>(
    x: &[T],
    rows: usize,
    dim: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); x.len()];
    let mut means = vec![T::zero(); rows];
    let mut invstds = vec![T::zero(); rows];
    let n = T::from(dim).unwrap();
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mut s = T::zero();
        for v in row {
            s = s + *v;
        }
        let m = s / n;
        let mut vs = T::zero();
        for v in row {
            let d = *v - m;
            vs = d.mul_add(d, vs);
        }
        let is = T::one() / (vs / n + eps).sqrt();
        means[r] = m;
        invstds[r] = is;
        let out = &mut y[r * dim..(r + 1) * dim];
        for i in 0..dim {
            out[i] = (row[i] - m) * is * gamma[i] + beta[i];
        }
    }
    (y, means, invstds)
}

pub fn layer_norm_bwd(
    x: &[f32],
    rows: usize,
    dim: usize,
    means: &[f32],
    invstds: &[f32],
    gamma: &[f32],
    dy: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut dx = vec![0.0f32; x.len()];
    let mut dgamma = vec![0.0f32; dim];
    let mut dbeta = vec![0.0f32; dim];
    let n = dim as f32;
    for r in 0..rows {
        let (m, is) = (means[r], invstds[r]);
        let xr = &x[r * dim..(r + 1) * dim];
        let dyr = &dy[r * dim..(r + 1) * dim];
        let mut sum_g = 0.0f32;
        let mut sum_gx = 0.0f32;
        for i in 0..dim {
            let xhat = (xr[i] - m) * is;
            let g = dyr[i] * gamma[i];
            dgamma[i] += dyr[i] * xhat;
            dbeta[i] += dyr[i];
            sum_g += g;
            sum_gx += g * xhat;
        }
        let dxr = &mut dx[r * dim..(r + 1) * dim];
        for i in 0..dim {
            let xhat = (xr[i] - m) * is;
            let g = dyr[i] * gamma[i];
            dxr[i] = is / n * (n * g - sum_g - xhat * sum_gx);
        }
    }
    (dx, dgamma, dbeta)
}
