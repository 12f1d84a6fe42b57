//! Forward and backward kernels for the shape-preserving cell operations.
//!
//! All spatial kernels use stride 1 with "same" padding.

use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        ..*x
    }
}

pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    Tensor {
        data: x
            .data
            .iter()
            .zip(&grad.data)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
        ..*x
    }
}

/// Valid output range along one axis for kernel offset `d` with padding `pad`.
#[inline]
fn span(len: usize, d: usize, pad: usize) -> (usize, usize) {
    // output index o reads input o + d - pad
    let lo = pad.saturating_sub(d);
    let hi = (len + pad).saturating_sub(d).min(len);
    (lo, hi.max(lo))
}

/// Per-channel `k x k` convolution; `weight` is `[c, k, k]`.
pub fn depthwise_conv(x: &Tensor, weight: &[f64], k: usize) -> Tensor {
    debug_assert_eq!(weight.len(), x.c * k * k);
    let (h, w, pad) = (x.h, x.w, k / 2);
    let plane = x.plane();
    let mut out = Tensor::zeros_like(x);
    for n in 0..x.n {
        for c in 0..x.c {
            let base = (n * x.c + c) * plane;
            let src = &x.data[base..base + plane];
            let dst = &mut out.data[base..base + plane];
            for dy in 0..k {
                let (y0, y1) = span(h, dy, pad);
                for dx in 0..k {
                    let wv = weight[(c * k + dy) * k + dx];
                    let (x0, x1) = span(w, dx, pad);
                    for y in y0..y1 {
                        let iy = y + dy - pad;
                        let drow = &mut dst[y * w + x0..y * w + x1];
                        let srow = &src[iy * w + x0 + dx - pad..iy * w + x1 + dx - pad];
                        for (o, i) in drow.iter_mut().zip(srow) {
                            *o += wv * i;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weight)`.
pub fn depthwise_conv_backward(x: &Tensor, weight: &[f64], k: usize, grad: &Tensor) -> (Tensor, Vec<f64>) {
    let (h, w, pad) = (x.h, x.w, k / 2);
    let plane = x.plane();
    let mut gx = Tensor::zeros_like(x);
    let mut gw = vec![0.0; weight.len()];
    for n in 0..x.n {
        for c in 0..x.c {
            let base = (n * x.c + c) * plane;
            let src = &x.data[base..base + plane];
            let g = &grad.data[base..base + plane];
            let gsrc = &mut gx.data[base..base + plane];
            for dy in 0..k {
                let (y0, y1) = span(h, dy, pad);
                for dx in 0..k {
                    let widx = (c * k + dy) * k + dx;
                    let wv = weight[widx];
                    let (x0, x1) = span(w, dx, pad);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let iy = y + dy - pad;
                        let grow = &g[y * w + x0..y * w + x1];
                        let off = iy * w + x0 + dx - pad;
                        let srow = &src[off..off + (x1 - x0)];
                        for (go, i) in grow.iter().zip(srow) {
                            acc += go * i;
                        }
                        let gsrow = &mut gsrc[off..off + (x1 - x0)];
                        for (gi, go) in gsrow.iter_mut().zip(grow) {
                            *gi += wv * go;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    (gx, gw)
}

/// 1x1 convolution; `weight` is `[out_c, in_c]`.
pub fn pointwise_conv(x: &Tensor, weight: &[f64], out_c: usize) -> Tensor {
    debug_assert_eq!(weight.len(), out_c * x.c);
    let plane = x.plane();
    let mut out = Tensor::zeros(x.n, out_c, x.h, x.w);
    for n in 0..x.n {
        for o in 0..out_c {
            let dst = &mut out.data[(n * out_c + o) * plane..(n * out_c + o + 1) * plane];
            for i in 0..x.c {
                let wv = weight[o * x.c + i];
                let src = &x.data[(n * x.c + i) * plane..(n * x.c + i + 1) * plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wv * s;
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weight)`.
pub fn pointwise_conv_backward(x: &Tensor, weight: &[f64], out_c: usize, grad: &Tensor) -> (Tensor, Vec<f64>) {
    let plane = x.plane();
    let mut gx = Tensor::zeros_like(x);
    let mut gw = vec![0.0; weight.len()];
    for n in 0..x.n {
        for o in 0..out_c {
            let g = &grad.data[(n * out_c + o) * plane..(n * out_c + o + 1) * plane];
            for i in 0..x.c {
                let range = (n * x.c + i) * plane..(n * x.c + i + 1) * plane;
                let src = &x.data[range.clone()];
                gw[o * x.c + i] += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                let wv = weight[o * x.c + i];
                for (gi, go) in gx.data[range].iter_mut().zip(g) {
                    *gi += wv * go;
                }
            }
        }
    }
    (gx, gw)
}

/// Per-channel mean and biased variance over batch and spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn channel_stats(x: &Tensor) -> ChannelStats {
    let plane = x.plane();
    let count = (x.n * plane) as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    for c in 0..x.c {
        let mut s = 0.0;
        for n in 0..x.n {
            s += x.data[(n * x.c + c) * plane..(n * x.c + c + 1) * plane].iter().sum::<f64>();
        }
        let m = s / count;
        let mut v = 0.0;
        for n in 0..x.n {
            v += x.data[(n * x.c + c) * plane..(n * x.c + c + 1) * plane]
                .iter()
                .map(|a| (a - m) * (a - m))
                .sum::<f64>();
        }
        mean[c] = m;
        var[c] = v / count;
    }
    ChannelStats { mean, var }
}

/// Normalizes with the given statistics (no affine transform).
pub fn normalize(x: &Tensor, stats: &ChannelStats) -> Tensor {
    let plane = x.plane();
    let mut out = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            let inv = 1.0 / (stats.var[c] + NORM_EPS).sqrt();
            let m = stats.mean[c];
            for v in &mut out.data[(n * x.c + c) * plane..(n * x.c + c + 1) * plane] {
                *v = (*v - m) * inv;
            }
        }
    }
    out
}

/// Backward of [`normalize`] when the statistics came from the same batch.
/// `y` is the normalized output.
pub fn normalize_batch_backward(y: &Tensor, stats: &ChannelStats, grad: &Tensor) -> Tensor {
    let plane = y.plane();
    let count = (y.n * plane) as f64;
    let mut gx = Tensor::zeros_like(y);
    for c in 0..y.c {
        let inv = 1.0 / (stats.var[c] + NORM_EPS).sqrt();
        let (mut gsum, mut gysum) = (0.0, 0.0);
        for n in 0..y.n {
            let r = (n * y.c + c) * plane..(n * y.c + c + 1) * plane;
            for (g, yy) in grad.data[r.clone()].iter().zip(&y.data[r]) {
                gsum += g;
                gysum += g * yy;
            }
        }
        let (gmean, gymean) = (gsum / count, gysum / count);
        for n in 0..y.n {
            let r = (n * y.c + c) * plane..(n * y.c + c + 1) * plane;
            for ((o, g), yy) in gx.data[r.clone()].iter_mut().zip(&grad.data[r.clone()]).zip(&y.data[r]) {
                *o = inv * (g - gmean - yy * gymean);
            }
        }
    }
    gx
}

/// Backward of [`normalize`] with fixed statistics.
pub fn normalize_fixed_backward(stats: &ChannelStats, grad: &Tensor) -> Tensor {
    let plane = grad.plane();
    let mut gx = grad.clone();
    for n in 0..grad.n {
        for c in 0..grad.c {
            let inv = 1.0 / (stats.var[c] + NORM_EPS).sqrt();
            for v in &mut gx.data[(n * grad.c + c) * plane..(n * grad.c + c + 1) * plane] {
                *v *= inv;
            }
        }
    }
    gx
}

/// 3x3 average pooling, padding excluded from the divisor.
pub fn avg_pool3(x: &Tensor) -> Tensor {
    let (h, w) = (x.h, x.w);
    let plane = x.plane();
    let mut out = Tensor::zeros_like(x);
    for nc in 0..x.n * x.c {
        let src = &x.data[nc * plane..(nc + 1) * plane];
        let dst = &mut out.data[nc * plane..(nc + 1) * plane];
        for y in 0..h {
            let (ya, yb) = (y.saturating_sub(1), (y + 2).min(h));
            for xx in 0..w {
                let (xa, xb) = (xx.saturating_sub(1), (xx + 2).min(w));
                let mut s = 0.0;
                for iy in ya..yb {
                    for ix in xa..xb {
                        s += src[iy * w + ix];
                    }
                }
                dst[y * w + xx] = s / ((yb - ya) * (xb - xa)) as f64;
            }
        }
    }
    out
}

pub fn avg_pool3_backward(grad: &Tensor) -> Tensor {
    let (h, w) = (grad.h, grad.w);
    let plane = grad.plane();
    let mut gx = Tensor::zeros_like(grad);
    for nc in 0..grad.n * grad.c {
        let g = &grad.data[nc * plane..(nc + 1) * plane];
        let dst = &mut gx.data[nc * plane..(nc + 1) * plane];
        for y in 0..h {
            let (ya, yb) = (y.saturating_sub(1), (y + 2).min(h));
            for xx in 0..w {
                let (xa, xb) = (xx.saturating_sub(1), (xx + 2).min(w));
                let share = g[y * w + xx] / ((yb - ya) * (xb - xa)) as f64;
                for iy in ya..yb {
                    for ix in xa..xb {
                        dst[iy * w + ix] += share;
                    }
                }
            }
        }
    }
    gx
}

/// 3x3 max pooling; also returns the flat source index of each maximum
/// (first in scan order on ties).
pub fn max_pool3(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (h, w) = (x.h, x.w);
    let plane = x.plane();
    let mut out = Tensor::zeros_like(x);
    let mut arg = vec![0u32; x.data.len()];
    for nc in 0..x.n * x.c {
        let src = &x.data[nc * plane..(nc + 1) * plane];
        for y in 0..h {
            let (ya, yb) = (y.saturating_sub(1), (y + 2).min(h));
            for xx in 0..w {
                let (xa, xb) = (xx.saturating_sub(1), (xx + 2).min(w));
                let mut best = ya * w + xa;
                for iy in ya..yb {
                    for ix in xa..xb {
                        if src[iy * w + ix] > src[best] {
                            best = iy * w + ix;
                        }
                    }
                }
                out.data[nc * plane + y * w + xx] = src[best];
                arg[nc * plane + y * w + xx] = (nc * plane + best) as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool3_backward(argmax: &[u32], grad: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros_like(grad);
    for (g, &src) in grad.data.iter().zip(argmax) {
        gx.data[src as usize] += g;
    }
    gx
}

/// Spatial mean per channel, `[n, c]`.
pub fn global_avg_pool(x: &Tensor) -> Vec<f64> {
    let plane = x.plane();
    x.data
        .chunks_exact(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect()
}

pub fn global_avg_pool_backward(shape: &Tensor, grad: &[f64]) -> Tensor {
    let plane = shape.plane();
    let mut gx = Tensor::zeros_like(shape);
    for (dst, &g) in gx.data.chunks_exact_mut(plane).zip(grad) {
        dst.fill(g / plane as f64);
    }
    gx
}

/// `features [n, d]` times `weight [k, d]` transposed plus `bias [k]`.
pub fn linear(features: &[f64], d: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let k = bias.len();
    let mut out = Vec::with_capacity(features.len() / d * k);
    for f in features.chunks_exact(d) {
        for j in 0..k {
            let row = &weight[j * d..(j + 1) * d];
            out.push(bias[j] + row.iter().zip(f).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    out
}

/// Returns `(grad_features, grad_weight, grad_bias)`.
pub fn linear_backward(
    features: &[f64],
    d: usize,
    weight: &[f64],
    grad: &[f64],
    need_input_grad: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = weight.len() / d;
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; k];
    let mut gf = if need_input_grad { vec![0.0; features.len()] } else { Vec::new() };
    for (row, (f, g)) in features.chunks_exact(d).zip(grad.chunks_exact(k)).enumerate() {
        for j in 0..k {
            gb[j] += g[j];
            let wrow = &weight[j * d..(j + 1) * d];
            for (gwv, fv) in gw[j * d..(j + 1) * d].iter_mut().zip(f) {
                *gwv += g[j] * fv;
            }
            if need_input_grad {
                for (gfv, wv) in gf[row * d..(row + 1) * d].iter_mut().zip(wrow) {
                    *gfv += g[j] * wv;
                }
            }
        }
    }
    (gf, gw, gb)
}
