//! Forward and backward kernels for the layer primitives.
//!
//! Every tensor here is a single image-shaped `c×h×w` array; there is no
//! batch axis. Backward kernels return adjoints with respect to the layer
//! input only, since convolution weights are never trained.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A point in the unit square. `u` runs along columns, `v` along rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub u: f64,
    pub v: f64,
}

impl Location {
    pub const CENTER: Location = Location { u: 0.5, v: 0.5 };

    pub fn new(u: f64, v: f64) -> Result<Self> {
        let loc = Location { u, v };
        loc.validate()?;
        Ok(loc)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| (0.0..=1.0).contains(&x);
        if ok(self.u) && ok(self.v) {
            Ok(())
        } else {
            Err(Error::invalid(
                "bilinear_sample",
                format!("location ({}, {}) outside [0,1]^2", self.u, self.v),
            ))
        }
    }
}

impl Default for Location {
    fn default() -> Self {
        Self::CENTER
    }
}

pub fn conv_output_len(len: usize, k: usize, stride: usize, padding: usize) -> usize {
    (len + 2 * padding - k) / stride + 1
}

/// 2-D cross-correlation of a `c_in×h×w` input with a `c_out×c_in×k×k` kernel.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let geom = ConvGeometry::new(input.shape(), kernel.shape(), bias.len(), stride, padding)?;
    let ConvGeometry {
        c_in,
        h,
        w,
        c_out,
        k,
        h_out,
        w_out,
    } = geom;
    let x = input.data();
    let kw = kernel.data();
    let mut out = vec![0.0; c_out * h_out * w_out];
    for co in 0..c_out {
        let plane = &mut out[co * h_out * w_out..(co + 1) * h_out * w_out];
        plane.iter_mut().for_each(|o| *o = bias[co]);
        for ci in 0..c_in {
            let xin = &x[ci * h * w..(ci + 1) * h * w];
            let kbase = (co * c_in + ci) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let wt = kw[kbase + ky * k + kx];
                    if wt == 0.0 {
                        continue;
                    }
                    for oy in 0..h_out {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &xin[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut plane[oy * w_out..(oy + 1) * w_out];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *o += wt * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, h_out, w_out], out)
}

/// Adjoint of [`conv2d`] with respect to its input.
///
/// Zero entries of the output adjoint are skipped, which makes this cheap
/// for the sparse adjoints produced by a point readout.
pub fn conv2d_backward(
    output_adjoint: &Tensor,
    kernel: &Tensor,
    input_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let c_out = kernel.shape()[0];
    let geom = ConvGeometry::new(input_shape, kernel.shape(), c_out, stride, padding)?;
    let ConvGeometry {
        c_in,
        h,
        w,
        k,
        h_out,
        w_out,
        ..
    } = geom;
    if output_adjoint.shape() != [c_out, h_out, w_out] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "adjoint shape {:?}, expected {:?}",
                output_adjoint.shape(),
                [c_out, h_out, w_out]
            ),
        ));
    }
    let g = output_adjoint.data();
    let kw = kernel.data();
    let mut grad = vec![0.0; c_in * h * w];
    for co in 0..c_out {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let go = g[(co * h_out + oy) * w_out + ox];
                if go == 0.0 {
                    continue;
                }
                for ci in 0..c_in {
                    let kbase = (co * c_in + ci) * k * k;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            grad[(ci * h + iy as usize) * w + ix as usize] +=
                                go * kw[kbase + ky * k + kx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), grad)
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeometry {
    fn new(
        input: &[usize],
        kernel: &[usize],
        bias_len: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [c_in, h, w] = input[..] else {
            return Err(Error::shape(
                "conv2d",
                format!("input must be c_in×h×w, got {input:?}"),
            ));
        };
        let [c_out, kc_in, k, k2] = kernel[..] else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be c_out×c_in×k×k, got {kernel:?}"),
            ));
        };
        if k != k2 {
            return Err(Error::shape("conv2d", format!("kernel is not square: {k}×{k2}")));
        }
        if kc_in != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects c_in = {kc_in}, input has c_in = {c_in}"),
            ));
        }
        if bias_len != c_out {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {bias_len} entries, kernel has c_out = {c_out}"),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        if k > h + 2 * padding || k > w + 2 * padding {
            return Err(Error::shape(
                "conv2d",
                format!("kernel size {k} exceeds padded input {h}×{w} (padding {padding})"),
            ));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            k,
            h_out: conv_output_len(h, k, stride, padding),
            w_out: conv_output_len(w, k, stride, padding),
        })
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Adjoint of [`relu`]; the subgradient at zero is taken as zero.
pub fn relu_backward(output_adjoint: &Tensor, input: &Tensor) -> Result<Tensor> {
    if output_adjoint.shape() != input.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?} vs {:?}", output_adjoint.shape(), input.shape()),
        ));
    }
    let data = output_adjoint
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Max pooling. Returns the pooled tensor and, per output element, the flat
/// input index of the selected maximum (first in row-major order on ties).
pub fn maxpool2d_with_indices(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.dims3("maxpool2d")?;
    if window == 0 || stride == 0 {
        return Err(Error::invalid("maxpool2d", "window and stride must be positive"));
    }
    if window > h || window > w {
        return Err(Error::shape(
            "maxpool2d",
            format!("window {window} larger than spatial extent {h}×{w}"),
        ));
    }
    let h_out = (h - window) / stride + 1;
    let w_out = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(c * h_out * w_out);
    let mut argmax = Vec::with_capacity(c * h_out * w_out);
    for ch in 0..c {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut best_idx = (ch * h + oy * stride) * w + ox * stride;
                let mut best = x[best_idx];
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = (ch * h + oy * stride + dy) * w + ox * stride + dx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![c, h_out, w_out], out)?, argmax))
}

pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    maxpool2d_with_indices(input, window, stride).map(|(t, _)| t)
}

pub fn maxpool2d_backward(
    output_adjoint: &Tensor,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor> {
    if output_adjoint.len() != argmax.len() {
        return Err(Error::shape(
            "maxpool2d_backward",
            format!(
                "adjoint has {} entries, record has {}",
                output_adjoint.len(),
                argmax.len()
            ),
        ));
    }
    let mut grad = Tensor::zeros(input_shape);
    let gd = grad.data_mut();
    for (&g, &idx) in output_adjoint.data().iter().zip(argmax) {
        gd[idx] += g;
    }
    Ok(grad)
}

/// Corner indices and fractional offsets of a bilinear lookup.
#[derive(Debug, Clone, Copy)]
struct BilinearCell {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    /// d(continuous column)/du and d(continuous row)/dv.
    sx: f64,
    sy: f64,
}

impl BilinearCell {
    fn locate(h: usize, w: usize, loc: Location) -> Self {
        let axis = |n: usize, t: f64| -> (usize, usize, f64, f64) {
            if n == 1 {
                return (0, 0, 0.0, 0.0);
            }
            let scale = (n - 1) as f64;
            let pos = t * scale;
            let i0 = (pos.floor() as usize).min(n - 2);
            (i0, i0 + 1, pos - i0 as f64, scale)
        };
        let (x0, x1, fx, sx) = axis(w, loc.u);
        let (y0, y1, fy, sy) = axis(h, loc.v);
        Self {
            x0,
            x1,
            y0,
            y1,
            fx,
            fy,
            sx,
            sy,
        }
    }

    /// `(flat spatial index, weight)` for the four corners.
    fn taps(&self, w: usize) -> [(usize, f64); 4] {
        let Self {
            x0, x1, y0, y1, fx, fy, ..
        } = *self;
        [
            (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
            (y0 * w + x1, (1.0 - fy) * fx),
            (y1 * w + x0, fy * (1.0 - fx)),
            (y1 * w + x1, fy * fx),
        ]
    }
}

/// Bilinear interpolation of every channel at `loc`, with grid corners at
/// `u, v ∈ {0, 1}`.
pub fn bilinear_sample(featmap: &Tensor, loc: Location) -> Result<Vec<f64>> {
    let (c, h, w) = featmap.dims3("bilinear_sample")?;
    loc.validate()?;
    let cell = BilinearCell::locate(h, w, loc);
    let taps = cell.taps(w);
    let x = featmap.data();
    Ok((0..c)
        .map(|ch| {
            let base = ch * h * w;
            taps.iter().map(|&(i, wt)| wt * x[base + i]).sum()
        })
        .collect())
}

/// Adjoint of [`bilinear_sample`] with respect to the feature map.
pub fn bilinear_sample_backward(
    output_adjoint: &[f64],
    featmap_shape: &[usize],
    loc: Location,
) -> Result<Tensor> {
    let [c, h, w] = featmap_shape[..] else {
        return Err(Error::shape(
            "bilinear_sample_backward",
            format!("expected c×h×w, got {featmap_shape:?}"),
        ));
    };
    if output_adjoint.len() != c {
        return Err(Error::shape(
            "bilinear_sample_backward",
            format!("adjoint has {} entries, map has {c} channels", output_adjoint.len()),
        ));
    }
    let taps = BilinearCell::locate(h, w, loc).taps(w);
    let mut grad = Tensor::zeros(featmap_shape);
    let gd = grad.data_mut();
    for (ch, &g) in output_adjoint.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for &(i, wt) in &taps {
            gd[ch * h * w + i] += g * wt;
        }
    }
    Ok(grad)
}

/// Partial derivatives of every sampled channel with respect to `u` and `v`.
///
/// At interior grid lines the right-sided derivative is returned.
pub fn bilinear_location_jacobian(
    featmap: &Tensor,
    loc: Location,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (c, h, w) = featmap.dims3("bilinear_location_jacobian")?;
    loc.validate()?;
    let BilinearCell {
        x0,
        x1,
        y0,
        y1,
        fx,
        fy,
        sx,
        sy,
    } = BilinearCell::locate(h, w, loc);
    let x = featmap.data();
    let mut du = Vec::with_capacity(c);
    let mut dv = Vec::with_capacity(c);
    for ch in 0..c {
        let f = |y: usize, xx: usize| x[(ch * h + y) * w + xx];
        let (f00, f01, f10, f11) = (f(y0, x0), f(y0, x1), f(y1, x0), f(y1, x1));
        du.push(sx * ((1.0 - fy) * (f01 - f00) + fy * (f11 - f10)));
        dv.push(sy * ((1.0 - fx) * (f10 - f00) + fx * (f11 - f01)));
    }
    Ok((du, dv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::from_fn(&[1, 3, 4], |i| (i as f64).sin());
        let k = t(&[1, 1, 1, 1], &[1.0]);
        assert_eq!(conv2d(&x, &k, &[0.0], 1, 0).unwrap(), x);
    }

    #[test]
    fn ones_kernel_sums_entries() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let k = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let y = conv2d(&x, &k, &[0.0], 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn conv_output_size_follows_floor_rule() {
        let x = Tensor::zeros(&[2, 7, 6]);
        let k = Tensor::zeros(&[3, 2, 3, 3]);
        let y = conv2d(&x, &k, &[0.0; 3], 2, 1).unwrap();
        assert_eq!(y.shape(), &[3, 4, 3]);
    }

    #[test]
    fn conv_shape_errors_name_dimensions() {
        let x = Tensor::zeros(&[2, 5, 5]);
        let k = Tensor::zeros(&[3, 4, 3, 3]);
        let err = conv2d(&x, &k, &[0.0; 3], 1, 0).unwrap_err().to_string();
        assert!(err.contains("c_in = 4") && err.contains("c_in = 2"), "{err}");
        let k = Tensor::zeros(&[3, 2, 7, 7]);
        assert!(conv2d(&x, &k, &[0.0; 3], 1, 0).is_err());
        assert!(conv2d(&x, &k, &[0.0; 3], 1, 1).is_ok());
        let k = Tensor::zeros(&[3, 2, 3, 3]);
        assert!(conv2d(&x, &k, &[0.0; 2], 1, 0).is_err());
        assert!(conv2d(&x, &k, &[0.0; 3], 0, 0).is_err());
    }

    #[test]
    fn relu_clamps_negatives() {
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert!(relu(&Tensor::filled(&[2, 2], -3.0)).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_backward_is_positive_indicator() {
        let x = t(&[4], &[-1.0, 0.0, 0.5, 2.0]);
        let g = relu_backward(&Tensor::filled(&[4], 1.0), &x).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn maxpool_basics() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(maxpool2d(&x, 2, 2).unwrap().data(), &[4.0]);
        assert_eq!(maxpool2d(&x, 1, 1).unwrap(), x);
        assert!(maxpool2d(&x, 3, 1).is_err());
    }

    #[test]
    fn maxpool_tie_goes_to_first_element() {
        let x = t(&[1, 2, 2], &[5.0, 5.0, 5.0, 5.0]);
        let (_, idx) = maxpool2d_with_indices(&x, 2, 2).unwrap();
        assert_eq!(idx, vec![0]);
        let g = maxpool2d_backward(&t(&[1, 1, 1], &[1.0]), &idx, x.shape()).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn bilinear_on_node_and_midpoint() {
        let map = t(&[1, 2, 2], &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(bilinear_sample(&map, Location::CENTER).unwrap(), vec![0.5]);
        let map = Tensor::from_fn(&[2, 3, 3], |i| i as f64);
        // (u, v) = (0.5, 1.0) is column 1 of the last row.
        let s = bilinear_sample(&map, Location { u: 0.5, v: 1.0 }).unwrap();
        assert_eq!(s, vec![7.0, 16.0]);
        assert!(bilinear_sample(&map, Location { u: 1.1, v: 0.0 }).is_err());
        assert!(Location::new(-0.1, 0.5).is_err());
    }

    #[test]
    fn single_pixel_map_has_zero_location_gradient() {
        let map = t(&[2, 1, 1], &[3.0, 4.0]);
        let loc = Location { u: 0.3, v: 0.9 };
        assert_eq!(bilinear_sample(&map, loc).unwrap(), vec![3.0, 4.0]);
        let (du, dv) = bilinear_location_jacobian(&map, loc).unwrap();
        assert_eq!(du, vec![0.0, 0.0]);
        assert_eq!(dv, vec![0.0, 0.0]);
    }
}
