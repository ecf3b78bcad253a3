//! Forward and backward kernels for each layer kind.
//!
//! Kernels that carry per-sample work (convolutions, pooling) fan out over
//! the batch through [`crate::par`]; parameter gradients are computed per
//! sample and summed in sample order.

use rand::Rng;

use crate::linalg::{gemm, gemm_view, View};
use crate::par;
use crate::tensor::Tensor4;

fn sum_in_order(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

// ---------------------------------------------------------------- conv 3x3
//
// A 3x3 tap is a shifted view of the zero-padded plane. Outputs are computed
// on rows of width `w + 2`; the two extra columns per row are discarded.

struct Padded {
    h: usize,
    w: usize,
    pw: usize,
    /// Plane stride, with slack so the last tap view stays in bounds.
    plane: usize,
    /// Length of one output plane in padded-row layout.
    span: usize,
}

impl Padded {
    fn new(h: usize, w: usize) -> Self {
        let pw = w + 2;
        Padded { h, w, pw, plane: (h + 2) * pw + 2, span: h * pw }
    }

    fn tap(&self, t: usize) -> usize {
        (t / 3) * self.pw + t % 3
    }

    fn pad(&self, x: &[f64], c: usize) -> Vec<f64> {
        let hw = self.h * self.w;
        let mut xp = vec![0.0; c * self.plane];
        for ci in 0..c {
            for y in 0..self.h {
                let dst = ci * self.plane + (y + 1) * self.pw + 1;
                xp[dst..dst + self.w].copy_from_slice(&x[ci * hw + y * self.w..ci * hw + (y + 1) * self.w]);
            }
        }
        xp
    }

    /// Lays `x` out in padded-row layout with zeroed extra columns.
    fn widen(&self, x: &[f64], c: usize) -> Vec<f64> {
        let hw = self.h * self.w;
        let mut xr = vec![0.0; c * self.span];
        for ci in 0..c {
            for y in 0..self.h {
                let dst = ci * self.span + y * self.pw;
                xr[dst..dst + self.w].copy_from_slice(&x[ci * hw + y * self.w..ci * hw + (y + 1) * self.w]);
            }
        }
        xr
    }

    fn narrow(&self, xr: &[f64], stride: usize, offset: usize, c: usize, out: &mut [f64]) {
        let hw = self.h * self.w;
        for ci in 0..c {
            for y in 0..self.h {
                let src = ci * stride + offset + y * self.pw;
                out[ci * hw + y * self.w..ci * hw + (y + 1) * self.w].copy_from_slice(&xr[src..src + self.w]);
            }
        }
    }
}

pub fn conv3x3_forward(x: &Tensor4, weight: &[f64], bias: &[f64], out_c: usize) -> Tensor4 {
    let [n, c, h, w] = x.dims();
    let hw = h * w;
    let g = Padded::new(h, w);
    let mut y = Tensor4::zeros([n, out_c, h, w]);
    par::for_each_chunk(y.data_mut(), out_c * hw, |i, out| {
        let xp = g.pad(x.sample(i), c);
        let mut yr = vec![0.0; out_c * g.span];
        for (co, row) in yr.chunks_mut(g.span).enumerate() {
            row.fill(bias[co]);
        }
        for t in 0..9 {
            gemm_view(
                out_c,
                c,
                g.span,
                weight,
                View::new(t, c * 9, 9),
                &xp,
                View::new(g.tap(t), g.plane, 1),
                &mut yr,
                View::new(0, g.span, 1),
                1.0,
            );
        }
        g.narrow(&yr, g.span, 0, out_c, out);
    });
    y
}

/// Returns `(dx, dweight, dbias)`; parameter grads are skipped when
/// `with_params` is false.
pub fn conv3x3_backward(
    x: &Tensor4,
    weight: &[f64],
    dy: &Tensor4,
    with_params: bool,
) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = x.dims();
    let out_c = dy.c();
    let hw = h * w;
    let g = Padded::new(h, w);
    let per_sample = par::map_indexed(n, |i| {
        let dyi = dy.sample(i);
        let dyr = g.widen(dyi, out_c);
        let mut dxp = vec![0.0; c * g.plane];
        for t in 0..9 {
            gemm_view(
                c,
                out_c,
                g.span,
                weight,
                View::new(t, 9, c * 9),
                &dyr,
                View::new(0, g.span, 1),
                &mut dxp,
                View::new(g.tap(t), g.plane, 1),
                1.0,
            );
        }
        let mut dxi = vec![0.0; c * hw];
        g.narrow(&dxp, g.plane, g.pw + 1, c, &mut dxi);
        let (dw, db) = if with_params {
            let xp = g.pad(x.sample(i), c);
            let mut dw = vec![0.0; out_c * c * 9];
            for t in 0..9 {
                gemm_view(
                    out_c,
                    g.span,
                    c,
                    &dyr,
                    View::new(0, g.span, 1),
                    &xp,
                    View::new(g.tap(t), 1, g.plane),
                    &mut dw,
                    View::new(t, c * 9, 9),
                    0.0,
                );
            }
            let db: Vec<f64> = dyi.chunks(hw).map(|r| r.iter().sum()).collect();
            (dw, db)
        } else {
            (Vec::new(), Vec::new())
        };
        (dxi, dw, db)
    });
    let mut dx = Vec::with_capacity(n * c * hw);
    let mut dws = Vec::with_capacity(n);
    let mut dbs = Vec::with_capacity(n);
    for (dxi, dw, db) in per_sample {
        dx.extend_from_slice(&dxi);
        dws.push(dw);
        dbs.push(db);
    }
    let (dw, db) = if with_params {
        (sum_in_order(dws, out_c * c * 9), sum_in_order(dbs, out_c))
    } else {
        (Vec::new(), Vec::new())
    };
    (Tensor4::from_vec([n, c, h, w], dx).expect("dx dims"), dw, db)
}

// ------------------------------------------------------------- deconv 2x2/2

pub fn deconv2x2_forward(x: &Tensor4, weight: &[f64], bias: &[f64], out_c: usize) -> Tensor4 {
    let [n, c, h, w] = x.dims();
    let hw = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = Tensor4::zeros([n, out_c, oh, ow]);
    par::for_each_chunk(y.data_mut(), out_c * oh * ow, |i, out| {
        // z[(co*4 + a*2 + b), pixel] = sum_ci w[ci, co, a, b] * x[ci, pixel]
        let mut z = vec![0.0; out_c * 4 * hw];
        gemm(out_c * 4, c, hw, weight, true, x.sample(i), false, &mut z, 0.0);
        for co in 0..out_c {
            for a in 0..2 {
                for b in 0..2 {
                    let zr = &z[(co * 4 + a * 2 + b) * hw..(co * 4 + a * 2 + b + 1) * hw];
                    for yy in 0..h {
                        for xx in 0..w {
                            out[co * oh * ow + (2 * yy + a) * ow + 2 * xx + b] =
                                zr[yy * w + xx] + bias[co];
                        }
                    }
                }
            }
        }
    });
    y
}

pub fn deconv2x2_backward(
    x: &Tensor4,
    weight: &[f64],
    dy: &Tensor4,
    with_params: bool,
) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = x.dims();
    let out_c = dy.c();
    let hw = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let per_sample = par::map_indexed(n, |i| {
        let dyi = dy.sample(i);
        let mut dz = vec![0.0; out_c * 4 * hw];
        for co in 0..out_c {
            for a in 0..2 {
                for b in 0..2 {
                    let row = &mut dz[(co * 4 + a * 2 + b) * hw..(co * 4 + a * 2 + b + 1) * hw];
                    for yy in 0..h {
                        for xx in 0..w {
                            row[yy * w + xx] = dyi[co * oh * ow + (2 * yy + a) * ow + 2 * xx + b];
                        }
                    }
                }
            }
        }
        let mut dxi = vec![0.0; c * hw];
        gemm(c, out_c * 4, hw, weight, false, &dz, false, &mut dxi, 0.0);
        let (dw, db) = if with_params {
            let mut dw = vec![0.0; c * out_c * 4];
            gemm(c, hw, out_c * 4, x.sample(i), false, &dz, true, &mut dw, 0.0);
            let db: Vec<f64> = dyi.chunks(oh * ow).map(|r| r.iter().sum()).collect();
            (dw, db)
        } else {
            (Vec::new(), Vec::new())
        };
        (dxi, dw, db)
    });
    let mut dx = Vec::with_capacity(n * c * hw);
    let mut dws = Vec::with_capacity(n);
    let mut dbs = Vec::with_capacity(n);
    for (dxi, dw, db) in per_sample {
        dx.extend_from_slice(&dxi);
        dws.push(dw);
        dbs.push(db);
    }
    let (dw, db) = if with_params {
        (sum_in_order(dws, c * out_c * 4), sum_in_order(dbs, out_c))
    } else {
        (Vec::new(), Vec::new())
    };
    (Tensor4::from_vec([n, c, h, w], dx).expect("dx dims"), dw, db)
}

// ------------------------------------------------------------- batch norm

pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub xhat: Vec<f64>,
}

pub fn batch_norm_train(x: &Tensor4, gamma: &[f64], beta: &[f64], eps: f64) -> (Tensor4, BatchStats) {
    let [n, c, h, w] = x.dims();
    let hw = h * w;
    let m = (n * hw) as f64;
    let data = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for i in 0..n {
            s += data[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().sum::<f64>();
        }
        let mu = s / m;
        let mut v = 0.0;
        for i in 0..n {
            v += data[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                .iter()
                .map(|&t| (t - mu) * (t - mu))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; data.len()];
    let mut y = vec![0.0; data.len()];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            for k in base..base + hw {
                let xh = (data[k] - mean[ch]) * inv_std[ch];
                xhat[k] = xh;
                y[k] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (
        Tensor4::from_vec(x.dims(), y).expect("bn dims"),
        BatchStats {
            mean,
            var,
            inv_std,
            xhat,
        },
    )
}

pub fn batch_norm_eval(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Tensor4 {
    let [n, c, h, w] = x.dims();
    let hw = h * w;
    let mut y = x.clone();
    let d = y.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] / (running_var[ch] + eps).sqrt();
            let shift = beta[ch] - running_mean[ch] * scale;
            for v in &mut d[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                *v = *v * scale + shift;
            }
        }
    }
    y
}

pub fn batch_norm_train_backward(
    dy: &Tensor4,
    gamma: &[f64],
    stats: &BatchStats,
) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = dy.dims();
    let hw = h * w;
    let m = (n * hw) as f64;
    let g = dy.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            for k in base..base + hw {
                dbeta[ch] += g[k];
                dgamma[ch] += g[k] * stats.xhat[k];
            }
        }
    }
    let mut dx = vec![0.0; g.len()];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            let k_scale = gamma[ch] * stats.inv_std[ch] / m;
            for k in base..base + hw {
                dx[k] = k_scale * (m * g[k] - dbeta[ch] - stats.xhat[k] * dgamma[ch]);
            }
        }
    }
    (Tensor4::from_vec(dy.dims(), dx).expect("bn dims"), dgamma, dbeta)
}

pub fn batch_norm_eval_backward(
    x: &Tensor4,
    dy: &Tensor4,
    gamma: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = dy.dims();
    let hw = h * w;
    let g = dy.data();
    let xd = x.data();
    let mut dx = vec![0.0; g.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let inv = 1.0 / (running_var[ch] + eps).sqrt();
            for k in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                dx[k] = g[k] * gamma[ch] * inv;
                dgamma[ch] += g[k] * (xd[k] - running_mean[ch]) * inv;
                dbeta[ch] += g[k];
            }
        }
    }
    (Tensor4::from_vec(dy.dims(), dx).expect("bn dims"), dgamma, dbeta)
}

// ---------------------------------------------------------- element-wise

pub fn leaky_relu_forward(x: &Tensor4, slope: f64) -> Tensor4 {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward(x: &Tensor4, dy: &Tensor4, slope: f64) -> Tensor4 {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
        .collect();
    Tensor4::from_vec(x.dims(), data).expect("dims")
}

pub fn sigmoid_backward(y: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor4::from_vec(y.dims(), data).expect("dims")
}

// ---------------------------------------------------------------- pooling

/// Floor-mode 2×2 max pooling; returns the output and the flat in-sample
/// index of each selected input (first maximum wins on ties).
pub fn max_pool_forward(x: &Tensor4) -> (Tensor4, Vec<u32>) {
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let per = c * oh * ow;
    let mut y = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = vec![0u32; n * per];
    let mut pairs: Vec<(f64, u32)> = vec![(0.0, 0); n * per];
    par::for_each_chunk(&mut pairs, per, |i, out| {
        let xs = x.sample(i);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = ch * h * w + 2 * oy * w + 2 * ox;
                    let mut best = xs[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if xs[idx] > best {
                            best = xs[idx];
                            best_idx = idx;
                        }
                    }
                    out[ch * oh * ow + oy * ow + ox] = (best, best_idx as u32);
                }
            }
        }
    });
    for (k, (v, idx)) in pairs.into_iter().enumerate() {
        y.data_mut()[k] = v;
        arg[k] = idx;
    }
    (y, arg)
}

pub fn max_pool_backward(in_dims: [usize; 4], argmax: &[u32], dy: &Tensor4) -> Tensor4 {
    let mut dx = Tensor4::zeros(in_dims);
    let per_in = in_dims[1] * in_dims[2] * in_dims[3];
    let per_out = dy.sample_len();
    let g = dy.data();
    let d = dx.data_mut();
    for i in 0..in_dims[0] {
        for k in 0..per_out {
            d[i * per_in + argmax[i * per_out + k] as usize] += g[i * per_out + k];
        }
    }
    dx
}

// --------------------------------------------------------- fully connected

pub fn fc_forward(x: &Tensor4, weight: &[f64], bias: &[f64], units: usize) -> Tensor4 {
    let n = x.n();
    let d = x.sample_len();
    let mut y = vec![0.0; n * units];
    for row in y.chunks_mut(units) {
        row.copy_from_slice(bias);
    }
    gemm(n, d, units, x.data(), false, weight, true, &mut y, 1.0);
    Tensor4::from_vec([n, units, 1, 1], y).expect("fc dims")
}

pub fn fc_backward(
    x: &Tensor4,
    weight: &[f64],
    dy: &Tensor4,
    with_params: bool,
) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let n = x.n();
    let d = x.sample_len();
    let units = dy.c();
    let mut dx = vec![0.0; n * d];
    gemm(n, units, d, dy.data(), false, weight, false, &mut dx, 0.0);
    let (dw, db) = if with_params {
        let mut dw = vec![0.0; units * d];
        gemm(units, n, d, dy.data(), true, x.data(), false, &mut dw, 0.0);
        let mut db = vec![0.0; units];
        for row in dy.data().chunks(units) {
            for (b, g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        (dw, db)
    } else {
        (Vec::new(), Vec::new())
    };
    (Tensor4::from_vec(x.dims(), dx).expect("fc dims"), dw, db)
}

// ---------------------------------------------------------------- dropout

/// Inverted-dropout mask: each entry is `0` with probability `p`, otherwise
/// `1/(1-p)`.
pub fn dropout_mask(len: usize, p: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

pub fn apply_mask(x: &Tensor4, mask: &[f64]) -> Tensor4 {
    let data = x.data().iter().zip(mask).map(|(v, m)| v * m).collect();
    Tensor4::from_vec(x.dims(), data).expect("dims")
}

// ----------------------------------------------------------------- concat

pub fn concat_forward(parts: &[&Tensor4]) -> Tensor4 {
    let [n, _, h, w] = parts[0].dims();
    let c: usize = parts.iter().map(|p| p.c()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for i in 0..n {
        for p in parts {
            data.extend_from_slice(p.sample(i));
        }
    }
    Tensor4::from_vec([n, c, h, w], data).expect("concat dims")
}

pub fn concat_backward(dy: &Tensor4, channels: &[usize]) -> Vec<Tensor4> {
    let [n, _, h, w] = dy.dims();
    let hw = h * w;
    let mut out: Vec<Vec<f64>> = channels.iter().map(|&c| Vec::with_capacity(n * c * hw)).collect();
    for i in 0..n {
        let s = dy.sample(i);
        let mut off = 0;
        for (k, &c) in channels.iter().enumerate() {
            out[k].extend_from_slice(&s[off..off + c * hw]);
            off += c * hw;
        }
    }
    out.into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor4::from_vec([n, c, h, w], d).expect("concat dims"))
        .collect()
}
