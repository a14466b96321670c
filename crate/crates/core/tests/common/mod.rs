//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::sync::Arc;

use sfv::backbone::{BackboneModel, ConvLayer, Layer, MicroCnnConfig};
use sfv::readout::ReadoutModel;
use sfv::record::vjp;
use sfv::{Location, Tensor};

/// Direct six-loop cross-correlation.
pub fn naive_conv(x: &Tensor, k: &Tensor, b: &[f64], stride: usize, pad: usize) -> Tensor {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kk) = (k.shape()[0], k.shape()[2]);
    let ho = (h + 2 * pad - kk) / stride + 1;
    let wo = (w + 2 * pad - kk) / stride + 1;
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b[o];
                for c in 0..ci {
                    for ky in 0..kk {
                        for kx in 0..kk {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += k.data()[((o * ci + c) * kk + ky) * kk + kx]
                                * x.data()[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * ho + oy) * wo + ox] = acc;
            }
        }
    }
    Tensor::new(vec![co, ho, wo], out).unwrap()
}

pub fn naive_relu(x: &Tensor) -> Tensor {
    let d = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), d).unwrap()
}

pub fn naive_maxpool(x: &Tensor, win: usize, stride: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ho = (h - win) / stride + 1;
    let wo = (w - win) / stride + 1;
    let mut out = Vec::new();
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..win {
                    for dx in 0..win {
                        m = m.max(x.data()[(ch * h + oy * stride + dy) * w + ox * stride + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out).unwrap()
}

/// Four-point bilinear formula with `u` along columns and `v` along rows.
pub fn naive_bilinear(m: &Tensor, u: f64, v: f64) -> Vec<f64> {
    let (c, h, w) = (m.shape()[0], m.shape()[1], m.shape()[2]);
    let x = u * (w - 1) as f64;
    let y = v * (h - 1) as f64;
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = if w == 1 { 0.0 } else { x - x0 as f64 };
    let fy = if h == 1 { 0.0 } else { y - y0 as f64 };
    (0..c)
        .map(|ch| {
            let at = |yy: usize, xx: usize| m.data()[(ch * h + yy) * w + xx];
            (1.0 - fx) * (1.0 - fy) * at(y0, x0)
                + fx * (1.0 - fy) * at(y0, x1)
                + (1.0 - fx) * fy * at(y1, x0)
                + fx * fy * at(y1, x1)
        })
        .collect()
}

/// Layer-by-layer forward pass through the loop oracles.
pub fn oracle_features(b: &BackboneModel, image: &Tensor, loc: Location) -> Vec<f64> {
    let mut x = image.clone();
    for layer in b.layers() {
        x = match layer {
            Layer::Conv2d(c) => naive_conv(&x, &c.kernel, &c.bias, c.stride, c.padding),
            Layer::Relu => naive_relu(&x),
            Layer::MaxPool2d { window, stride } => naive_maxpool(&x, *window, *stride),
        };
    }
    naive_bilinear(&x, loc.u, loc.v)
}

/// Direct 2-D Gaussian convolution, zero padding, taps normalised over the square.
pub fn naive_gaussian(m: &Tensor, sigma: f64) -> Tensor {
    if sigma == 0.0 {
        return m.clone();
    }
    let (h, w) = (m.shape()[0], m.shape()[1]);
    let r = (3.0 * sigma).ceil() as isize;
    let mut taps = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            taps.push((dy, dx, (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()));
        }
    }
    let total: f64 = taps.iter().map(|t| t.2).sum();
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for &(dy, dx, t) in &taps {
                let (yy, xx) = (y + dy, x + dx);
                if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                    acc += t / total * m.data()[(yy * w as isize + xx) as usize];
                }
            }
            out[(y * w as isize + x) as usize] = acc;
        }
    }
    Tensor::new(vec![h, w], out).unwrap()
}

/// One-hot vjp per feature, colour sum, smoothing, unit scaling, and a plain
/// loop sum weighted by directly computed β.
pub fn naive_parallel_saliency(
    model: &ReadoutModel,
    x_out: &Tensor,
    x_in: &Tensor,
    sigma: f64,
    floor: f64,
) -> (Tensor, Tensor, f64) {
    let w = &model.weights;
    let (a_out, rec_out) = model.features(x_out).unwrap();
    let (a_in, rec_in) = model.features(x_in).unwrap();
    let c = w.len();
    let mut n_out = 0.0;
    let mut n_in = 0.0;
    let mut dot = 0.0;
    for i in 0..c {
        n_out += (a_out[i] * w[i]).powi(2);
        n_in += (a_in[i] * w[i]).powi(2);
        dot += a_out[i] * w[i] * a_in[i] * w[i];
    }
    let denom = n_out.sqrt() * n_in.sqrt();
    let (h, wd) = (x_out.shape()[1], x_out.shape()[2]);
    let mut maps = [vec![0.0; h * wd], vec![0.0; h * wd]];
    for i in 0..c {
        let beta = a_in[i] * w[i] * a_out[i] * w[i] / denom;
        if beta == 0.0 {
            continue;
        }
        for (slot, rec) in [&rec_out, &rec_in].into_iter().enumerate() {
            let mut adj = vec![0.0; c];
            adj[i] = 1.0;
            let g = vjp(rec, &Tensor::new(vec![c], adj).unwrap()).unwrap();
            let mut flat = vec![0.0; h * wd];
            for ch in 0..3 {
                for p in 0..h * wd {
                    flat[p] += g.data()[ch * h * wd + p];
                }
            }
            let sm = naive_gaussian(&Tensor::new(vec![h, wd], flat).unwrap(), sigma);
            let norm = sm.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < floor || norm == 0.0 {
                continue;
            }
            for p in 0..h * wd {
                maps[slot][p] += beta * sm.data()[p] / norm;
            }
        }
    }
    let [mo, mi] = maps;
    (
        Tensor::new(vec![h, wd], mo).unwrap(),
        Tensor::new(vec![h, wd], mi).unwrap(),
        dot / denom,
    )
}

/// Two-sided critical |r| from numerical integration of the unnormalised
/// Student-t density and bisection.
pub fn oracle_critical_r(n: usize, alpha: f64) -> f64 {
    let df = (n - 2) as f64;
    let g = |t: f64| (1.0 + t * t / df).powf(-(df + 1.0) / 2.0);
    let simpson = |a: f64, b: f64, steps: usize| {
        let hh = (b - a) / steps as f64;
        let mut s = g(a) + g(b);
        for i in 1..steps {
            s += g(a + i as f64 * hh) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * hh / 3.0
    };
    let half = simpson(0.0, 400.0, 400_000);
    let tail = |t: f64| 1.0 - simpson(0.0, t, 40_000) / half;
    let (mut lo, mut hi) = (0.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    t / (df + t * t).sqrt()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// 1×1 colour-opponent backbone: features `relu(2R − G)`, `relu(2G − R)`, `relu(B)`.
pub fn opponent_backbone(size: usize) -> BackboneModel {
    let k = vec![2.0, -1.0, 0.0, -1.0, 2.0, 0.0, 0.0, 0.0, 1.0];
    let conv = Layer::Conv2d(ConvLayer {
        kernel: Arc::new(Tensor::new(vec![3, 3, 1, 1], k).unwrap()),
        bias: Arc::new(vec![0.0; 3]),
        stride: 1,
        padding: 0,
    });
    BackboneModel::new(vec![conv, Layer::Relu], size, Location { u: 0.5, v: 0.5 }).unwrap()
}

/// Uniform `[r, g, b]` image.
pub fn flat_image(size: usize, rgb: [f64; 3]) -> Tensor {
    Tensor::from_fn(&[3, size, size], |i| rgb[i / (size * size)])
}

/// A 16-pixel micro-CNN with eight features.
pub fn small_backbone(seed: u64) -> BackboneModel {
    let cfg = MicroCnnConfig {
        input_size: 16,
        widths: [4, 6],
        feature_dim: 8,
    };
    BackboneModel::micro_cnn(cfg, seed).unwrap()
}
