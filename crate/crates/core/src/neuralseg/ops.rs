//! Layer primitives with explicit forward caches and hand-written backward
//! passes. Every output element is owned by exactly one task and inner loops
//! run in a fixed order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::neuralseg::tensor::Tensor4;

/// Dot product with eight fixed-order accumulators (enough independent
/// chains to cover FMA latency; the combine order is fixed, so results do
/// not depend on input length beyond the usual truncation).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = [0.0f64; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let j = i * 8;
        for lane in 0..8 {
            s[lane] += a[j + lane] * b[j + lane];
        }
    }
    let mut tail = 0.0;
    for j in chunks * 8..a.len() {
        tail += a[j] * b[j];
    }
    (((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]))) + tail
}

/// y[a..b] += w * x[a..b] (element-wise, vectorizable).
#[inline]
fn axpy(y: &mut [f64], w: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yo, xo) in y.iter_mut().zip(x) {
        *yo += w * xo;
    }
}

// ---------------------------------------------------------------------------
// Convolution (stride 1, square kernel, zero padding)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }
}

/// Forward convolution. `weights` is laid out [c_out][c_in][ky][kx]; output
/// spatial size equals input size (k = 2*pad + 1).
///
/// Row-blocked: for each output row every channel accumulates while the
/// relevant input rows are cache-hot. Accumulation order per element is
/// (ci, ky, kx), independent of blocking and thread count.
pub fn conv2d_forward(x: &Tensor4, shape: ConvShape, weights: &[f64], bias: &[f64]) -> Tensor4 {
    debug_assert_eq!(x.c, shape.c_in);
    debug_assert_eq!(weights.len(), shape.weight_len());
    debug_assert_eq!(bias.len(), shape.c_out);
    debug_assert_eq!(shape.k, 2 * shape.pad + 1);
    let (h, w) = (x.h, x.w);
    let mut y = Tensor4::zeros(x.n, shape.c_out, h, w);

    // Tasks own disjoint row ranges of all output channels of one sample.
    const ROWS_PER_TASK: usize = 16;
    let row_tasks: Vec<(usize, usize)> = (0..x.n)
        .flat_map(|n| (0..h).step_by(ROWS_PER_TASK).map(move |oy0| (n, oy0)))
        .collect();
    let chunks: Vec<Vec<f64>> = row_tasks
        .par_iter()
        .map(|&(n, oy0)| {
            let oy1 = (oy0 + ROWS_PER_TASK).min(h);
            let mut out = vec![0.0f64; (oy1 - oy0) * shape.c_out * w];
            for (r, oy) in (oy0..oy1).enumerate() {
                let base = r * shape.c_out * w;
                for co in 0..shape.c_out {
                    out[base + co * w..base + (co + 1) * w].fill(bias[co]);
                }
                for ci in 0..shape.c_in {
                    let xp = x.plane(n, ci);
                    for ky in 0..shape.k {
                        let iy = oy as i64 + ky as i64 - shape.pad as i64;
                        if iy < 0 || iy >= h as i64 {
                            continue;
                        }
                        let x_row = &xp[iy as usize * w..(iy as usize + 1) * w];
                        for kx in 0..shape.k {
                            let dx = kx as i64 - shape.pad as i64;
                            let ox0 = (-dx).max(0) as usize;
                            let ox1 = (w as i64 - dx).clamp(0, w as i64) as usize;
                            if ox0 >= ox1 {
                                continue;
                            }
                            let src = &x_row[(ox0 as i64 + dx) as usize..(ox1 as i64 + dx) as usize];
                            for co in 0..shape.c_out {
                                let wv = weights[((co * shape.c_in + ci) * shape.k + ky) * shape.k + kx];
                                axpy(&mut out[base + co * w + ox0..base + co * w + ox1], wv, src);
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    for (&(n, oy0), chunk) in row_tasks.iter().zip(&chunks) {
        let oy1 = (oy0 + ROWS_PER_TASK).min(h);
        for (r, oy) in (oy0..oy1).enumerate() {
            let base = r * shape.c_out * w;
            for co in 0..shape.c_out {
                y.plane_mut(n, co)[oy * w..(oy + 1) * w]
                    .copy_from_slice(&chunk[base + co * w..base + (co + 1) * w]);
            }
        }
    }
    y
}

pub struct ConvGrads {
    pub d_input: Tensor4,
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
}

pub fn conv2d_backward(x: &Tensor4, shape: ConvShape, weights: &[f64], dy: &Tensor4) -> ConvGrads {
    let (h, w) = (x.h, x.w);

    // d_input: full correlation with the flipped kernel, row-blocked so the
    // upstream gradient rows stay cache-hot across channels. Accumulation
    // order per element is (co, ky, kx).
    const ROWS_PER_TASK: usize = 16;
    let row_tasks: Vec<(usize, usize)> = (0..x.n)
        .flat_map(|n| (0..h).step_by(ROWS_PER_TASK).map(move |iy0| (n, iy0)))
        .collect();
    let chunks: Vec<Vec<f64>> = row_tasks
        .par_iter()
        .map(|&(n, iy0)| {
            let iy1 = (iy0 + ROWS_PER_TASK).min(h);
            let mut out = vec![0.0f64; (iy1 - iy0) * shape.c_in * w];
            for (r, iy) in (iy0..iy1).enumerate() {
                let base = r * shape.c_in * w;
                for co in 0..shape.c_out {
                    let dyp = dy.plane(n, co);
                    for ky in 0..shape.k {
                        // x[iy] receives dy[iy - dyo] shifted by -dxo.
                        let dyo = ky as i64 - shape.pad as i64;
                        let sy = iy as i64 - dyo;
                        if sy < 0 || sy >= h as i64 {
                            continue;
                        }
                        let dy_row = &dyp[sy as usize * w..(sy as usize + 1) * w];
                        for kx in 0..shape.k {
                            let dxo = kx as i64 - shape.pad as i64;
                            let ix0 = dxo.max(0) as usize;
                            let ix1 = (w as i64 + dxo).clamp(0, w as i64) as usize;
                            if ix0 >= ix1 {
                                continue;
                            }
                            let src = &dy_row[(ix0 as i64 - dxo) as usize..(ix1 as i64 - dxo) as usize];
                            for ci in 0..shape.c_in {
                                let wv = weights[((co * shape.c_in + ci) * shape.k + ky) * shape.k + kx];
                                axpy(&mut out[base + ci * w + ix0..base + ci * w + ix1], wv, src);
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    let mut d_input = Tensor4::zeros(x.n, shape.c_in, h, w);
    for (&(n, iy0), chunk) in row_tasks.iter().zip(&chunks) {
        let iy1 = (iy0 + ROWS_PER_TASK).min(h);
        for (r, iy) in (iy0..iy1).enumerate() {
            let base = r * shape.c_in * w;
            for ci in 0..shape.c_in {
                d_input.plane_mut(n, ci)[iy * w..(iy + 1) * w]
                    .copy_from_slice(&chunk[base + ci * w..base + (ci + 1) * w]);
            }
        }
    }

    // d_weights / d_bias: row-major accumulation with one owner per output
    // channel block; per-element order is (n, oy).
    let per_co: Vec<(Vec<f64>, f64)> = (0..shape.c_out)
        .into_par_iter()
        .map(|co| {
            let mut dw = vec![0.0f64; shape.c_in * shape.k * shape.k];
            let mut db = 0.0f64;
            for n in 0..x.n {
                let dyp = dy.plane(n, co);
                for oy in 0..h {
                    let dy_row = &dyp[oy * w..(oy + 1) * w];
                    db += dy_row.iter().sum::<f64>();
                    for ci in 0..shape.c_in {
                        let xp = x.plane(n, ci);
                        for ky in 0..shape.k {
                            let iy = oy as i64 + ky as i64 - shape.pad as i64;
                            if iy < 0 || iy >= h as i64 {
                                continue;
                            }
                            let x_row = &xp[iy as usize * w..(iy as usize + 1) * w];
                            for kx in 0..shape.k {
                                let dxo = kx as i64 - shape.pad as i64;
                                let ox0 = (-dxo).max(0) as usize;
                                let ox1 = (w as i64 - dxo).clamp(0, w as i64) as usize;
                                if ox0 >= ox1 {
                                    continue;
                                }
                                dw[(ci * shape.k + ky) * shape.k + kx] += dot(
                                    &dy_row[ox0..ox1],
                                    &x_row[(ox0 as i64 + dxo) as usize..(ox1 as i64 + dxo) as usize],
                                );
                            }
                        }
                    }
                }
            }
            (dw, db)
        })
        .collect();
    let mut d_weights = vec![0.0f64; shape.weight_len()];
    let mut d_bias = vec![0.0f64; shape.c_out];
    for (co, (dw, db)) in per_co.into_iter().enumerate() {
        let o = co * shape.c_in * shape.k * shape.k;
        d_weights[o..o + dw.len()].copy_from_slice(&dw);
        d_bias[co] = db;
    }

    ConvGrads { d_input, d_weights, d_bias }
}

// ---------------------------------------------------------------------------
// Batch normalization (per channel over batch and spatial dims)
// ---------------------------------------------------------------------------

pub const BN_EPS: f64 = 1e-5;

pub struct BnCache {
    /// Normalized activations.
    pub xhat: Tensor4,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Training-mode batch norm using batch statistics. Returns the output and a
/// cache holding what backward and the running-stat update need.
pub fn batchnorm_forward_train(x: &Tensor4, gamma: &[f64], beta: &[f64]) -> (Tensor4, BnCache) {
    let c = x.c;
    debug_assert_eq!(gamma.len(), c);
    let count = (x.n * x.h * x.w) as f64;

    let stats: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ci| {
            let mut sum = 0.0;
            for n in 0..x.n {
                sum += x.plane(n, ci).iter().sum::<f64>();
            }
            let mean = sum / count;
            let mut ss = 0.0;
            for n in 0..x.n {
                ss += x.plane(n, ci).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            }
            (mean, ss / count)
        })
        .collect();

    let mut y = Tensor4::zeros(x.n, c, x.h, x.w);
    let mut xhat = Tensor4::zeros(x.n, c, x.h, x.w);
    let mut inv_std = vec![0.0; c];
    for ci in 0..c {
        inv_std[ci] = 1.0 / (stats[ci].1 + BN_EPS).sqrt();
    }
    for n in 0..x.n {
        for ci in 0..c {
            let (mean, _) = stats[ci];
            let is = inv_std[ci];
            let (g, b) = (gamma[ci], beta[ci]);
            let xp = x.plane(n, ci);
            let off = xhat.plane_offset(n, ci);
            let len = x.h * x.w;
            let (xh, yp) = (&mut xhat.data[off..off + len], &mut y.data[off..off + len]);
            for i in 0..len {
                let h = (xp[i] - mean) * is;
                xh[i] = h;
                yp[i] = g * h + b;
            }
        }
    }
    let cache = BnCache {
        xhat,
        inv_std,
        batch_mean: stats.iter().map(|s| s.0).collect(),
        batch_var: stats.iter().map(|s| s.1).collect(),
    };
    (y, cache)
}

/// Inference-mode batch norm from running statistics.
pub fn batchnorm_forward_eval(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Tensor4 {
    let mut y = Tensor4::zeros(x.n, x.c, x.h, x.w);
    for n in 0..x.n {
        for ci in 0..x.c {
            let is = 1.0 / (running_var[ci] + BN_EPS).sqrt();
            let (m, g, b) = (running_mean[ci], gamma[ci], beta[ci]);
            let xp = x.plane(n, ci);
            let yp = y.plane_mut(n, ci);
            for (o, v) in yp.iter_mut().zip(xp) {
                *o = g * (v - m) * is + b;
            }
        }
    }
    y
}

pub struct BnGrads {
    pub d_input: Tensor4,
    pub d_gamma: Vec<f64>,
    pub d_beta: Vec<f64>,
}

pub fn batchnorm_backward(cache: &BnCache, gamma: &[f64], dy: &Tensor4) -> BnGrads {
    let c = dy.c;
    let count = (dy.n * dy.h * dy.w) as f64;
    let mut d_input = Tensor4::zeros(dy.n, c, dy.h, dy.w);

    let per_channel: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ci| {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for n in 0..dy.n {
                let dyp = dy.plane(n, ci);
                let xh = cache.xhat.plane(n, ci);
                sum_dy += dyp.iter().sum::<f64>();
                sum_dy_xhat += dot(dyp, xh);
            }
            (sum_dy, sum_dy_xhat)
        })
        .collect();

    for n in 0..dy.n {
        for ci in 0..c {
            let (sum_dy, sum_dy_xhat) = per_channel[ci];
            let scale = gamma[ci] * cache.inv_std[ci];
            let dyp = dy.plane(n, ci);
            let xh = cache.xhat.plane(n, ci);
            let di = d_input.plane_mut(n, ci);
            for i in 0..dyp.len() {
                di[i] = scale * (dyp[i] - sum_dy / count - xh[i] * sum_dy_xhat / count);
            }
        }
    }
    BnGrads {
        d_input,
        d_gamma: per_channel.iter().map(|p| p.1).collect(),
        d_beta: per_channel.iter().map(|p| p.0).collect(),
    }
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    let mut y = x.clone();
    for v in &mut y.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y.grad = None;
    y
}

/// Backward using the forward *input* (gradient 0 at exactly zero).
pub fn relu_backward(x: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    for (d, v) in dx.data.iter_mut().zip(&x.data) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
    dx.grad = None;
    dx
}

// ---------------------------------------------------------------------------
// 2x2 max pooling with stored indices, and index-driven unpooling
// ---------------------------------------------------------------------------

pub struct PoolCache {
    /// Flat in-plane input index of each maximum, per (n, c) plane.
    pub indices: Vec<u32>,
    pub in_h: usize,
    pub in_w: usize,
}

pub fn maxpool2_forward(x: &Tensor4) -> (Tensor4, PoolCache) {
    debug_assert!(x.h % 2 == 0 && x.w % 2 == 0);
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut y = Tensor4::zeros(x.n, x.c, oh, ow);
    let mut indices = vec![0u32; x.n * x.c * oh * ow];
    for n in 0..x.n {
        for ci in 0..x.c {
            let xp = x.plane(n, ci);
            let base = (n * x.c + ci) * oh * ow;
            let yp = y.plane_mut(n, ci);
            for oy in 0..oh {
                for ox in 0..ow {
                    // Ties resolve to the first candidate in scan order.
                    let mut best_idx = (2 * oy) * x.w + 2 * ox;
                    let mut best = xp[best_idx];
                    for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                        let idx = (2 * oy + dy) * x.w + 2 * ox + dx;
                        if xp[idx] > best {
                            best = xp[idx];
                            best_idx = idx;
                        }
                    }
                    yp[oy * ow + ox] = best;
                    indices[base + oy * ow + ox] = best_idx as u32;
                }
            }
        }
    }
    (y, PoolCache { indices, in_h: x.h, in_w: x.w })
}

pub fn maxpool2_backward(cache: &PoolCache, dy: &Tensor4) -> Tensor4 {
    let mut dx = Tensor4::zeros(dy.n, dy.c, cache.in_h, cache.in_w);
    let plane = dy.h * dy.w;
    for n in 0..dy.n {
        for ci in 0..dy.c {
            let dyp = dy.plane(n, ci);
            let base = (n * dy.c + ci) * plane;
            let dxp = dx.plane_mut(n, ci);
            for i in 0..plane {
                dxp[cache.indices[base + i] as usize] += dyp[i];
            }
        }
    }
    dx
}

/// Places each value at its stored maximum position; everything else is zero.
pub fn unpool2_forward(x: &Tensor4, cache: &PoolCache) -> Tensor4 {
    debug_assert_eq!(x.h * 2, cache.in_h);
    debug_assert_eq!(x.w * 2, cache.in_w);
    let mut y = Tensor4::zeros(x.n, x.c, cache.in_h, cache.in_w);
    let plane = x.h * x.w;
    for n in 0..x.n {
        for ci in 0..x.c {
            let xp = x.plane(n, ci);
            let base = (n * x.c + ci) * plane;
            let yp = y.plane_mut(n, ci);
            for i in 0..plane {
                yp[cache.indices[base + i] as usize] = xp[i];
            }
        }
    }
    y
}

pub fn unpool2_backward(cache: &PoolCache, dy: &Tensor4) -> Tensor4 {
    let (oh, ow) = (cache.in_h / 2, cache.in_w / 2);
    let mut dx = Tensor4::zeros(dy.n, dy.c, oh, ow);
    let plane = oh * ow;
    for n in 0..dy.n {
        for ci in 0..dy.c {
            let dyp = dy.plane(n, ci);
            let base = (n * dy.c + ci) * plane;
            let dxp = dx.plane_mut(n, ci);
            for i in 0..plane {
                dxp[i] = dyp[cache.indices[base + i] as usize];
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling; masks are sampled up front for determinism)
// ---------------------------------------------------------------------------

/// Multiplies by a pre-sampled mask of scale factors (0 or 1/keep).
pub fn dropout_forward(x: &Tensor4, mask: &[f64]) -> Tensor4 {
    debug_assert_eq!(mask.len(), x.numel());
    let mut y = x.clone();
    for (v, m) in y.data.iter_mut().zip(mask) {
        *v *= m;
    }
    y.grad = None;
    y
}

pub fn dropout_backward(mask: &[f64], dy: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    for (v, m) in dx.data.iter_mut().zip(mask) {
        *v *= m;
    }
    dx.grad = None;
    dx
}

// ---------------------------------------------------------------------------
// Channel concatenation
// ---------------------------------------------------------------------------

pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    debug_assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w));
    let mut y = Tensor4::zeros(a.n, a.c + b.c, a.h, a.w);
    for n in 0..a.n {
        for ci in 0..a.c {
            y.plane_mut(n, ci).copy_from_slice(a.plane(n, ci));
        }
        for ci in 0..b.c {
            y.plane_mut(n, a.c + ci).copy_from_slice(b.plane(n, ci));
        }
    }
    y
}

pub fn split_channels(dy: &Tensor4, c_first: usize) -> (Tensor4, Tensor4) {
    let c_second = dy.c - c_first;
    let mut da = Tensor4::zeros(dy.n, c_first, dy.h, dy.w);
    let mut db = Tensor4::zeros(dy.n, c_second, dy.h, dy.w);
    for n in 0..dy.n {
        for ci in 0..c_first {
            da.plane_mut(n, ci).copy_from_slice(dy.plane(n, ci));
        }
        for ci in 0..c_second {
            db.plane_mut(n, ci).copy_from_slice(dy.plane(n, c_first + ci));
        }
    }
    (da, db)
}

// ---------------------------------------------------------------------------
// Softmax over the channel dimension
// ---------------------------------------------------------------------------

pub fn softmax_channels(x: &Tensor4) -> Tensor4 {
    let mut y = Tensor4::zeros(x.n, x.c, x.h, x.w);
    let plane = x.h * x.w;
    for n in 0..x.n {
        for i in 0..plane {
            let mut maxv = f64::NEG_INFINITY;
            for ci in 0..x.c {
                maxv = maxv.max(x.plane(n, ci)[i]);
            }
            let mut sum = 0.0;
            for ci in 0..x.c {
                sum += (x.plane(n, ci)[i] - maxv).exp();
            }
            for ci in 0..x.c {
                y.plane_mut(n, ci)[i] = (x.plane(n, ci)[i] - maxv).exp() / sum;
            }
        }
    }
    y
}

/// Backward through softmax given probabilities and dL/dprobs.
pub fn softmax_backward(probs: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let mut dx = Tensor4::zeros(dy.n, dy.c, dy.h, dy.w);
    let plane = dy.h * dy.w;
    for n in 0..dy.n {
        for i in 0..plane {
            let mut inner = 0.0;
            for ci in 0..dy.c {
                inner += probs.plane(n, ci)[i] * dy.plane(n, ci)[i];
            }
            for ci in 0..dy.c {
                let p = probs.plane(n, ci)[i];
                dx.plane_mut(n, ci)[i] = p * (dy.plane(n, ci)[i] - inner);
            }
        }
    }
    dx
}
