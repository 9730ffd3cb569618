//! Forward and backward kernels on `Tensor`.
//!
//! Each backward function is the exact adjoint of its forward counterpart.
//! Batch items are processed one at a time and in order, so results are
//! bitwise reproducible and independent of the batch an item appears in.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

/// Geometry of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, g: ConvGeometry, cols: &mut [f64]) {
    let (oh, ow) = g.output_size(h, w);
    let p = oh * ow;
    let k = g.kernel;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, g: ConvGeometry, dx: &mut [f64]) {
    let (oh, ow) = g.output_size(h, w);
    let p = oh * ow;
    let k = g.kernel;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c[m x n] = beta * c + a[m x k] * b[k x n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the callers pass slices that cover every strided element read
    // or written for the given dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_conv(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, g: ConvGeometry) -> Result<()> {
    let [cout, cin, kh, kw] = weight.shape();
    if cin != x.channels() || kh != g.kernel || kw != g.kernel {
        return Err(Error::ShapeMismatch(format!(
            "conv weight {:?} against input {:?}",
            weight.shape(),
            x.shape()
        )));
    }
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::ShapeMismatch(format!("conv bias {:?} for {cout} outputs", b.shape())));
        }
    }
    if x.height() + 2 * g.pad < g.kernel || x.width() + 2 * g.pad < g.kernel {
        return Err(Error::BadShape(format!("input {:?} smaller than kernel", x.shape())));
    }
    Ok(())
}

/// Weight layout is `[C_out, C_in, k, k]`, bias has `C_out` entries.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, g: ConvGeometry) -> Result<Tensor> {
    check_conv(x, weight, bias, g)?;
    let [n, c, h, w] = x.shape();
    let cout = weight.shape()[0];
    let kk = c * g.kernel * g.kernel;
    let (oh, ow) = g.output_size(h, w);
    let p = oh * ow;
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; kk * p] };
    for i in 0..n {
        let item = x.item(i);
        let b_mat: &[f64] = if g.is_pointwise() {
            item
        } else {
            im2col(item, c, h, w, g, &mut cols);
            &cols
        };
        let y = out.item_mut(i);
        if let Some(bias) = bias {
            for (co, row) in y.chunks_exact_mut(p).enumerate() {
                row.fill(bias.data()[co]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(cout, kk, p, weight.data(), (kk as isize, 1), b_mat, (p as isize, 1), beta, y);
    }
    Ok(out)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    has_bias: bool,
    g: ConvGeometry,
    grad_out: &Tensor,
) -> ConvGrads {
    let [n, c, h, w] = x.shape();
    let cout = weight.shape()[0];
    let kk = c * g.kernel * g.kernel;
    let (oh, ow) = g.output_size(h, w);
    let p = oh * ow;
    debug_assert_eq!(grad_out.shape(), [n, cout, oh, ow]);

    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = has_bias.then(|| Tensor::zeros([cout, 1, 1, 1]));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; kk * p] };
    let mut dcols = vec![0.0; kk * p];
    for i in 0..n {
        let dy = grad_out.item(i);
        let item = x.item(i);
        let b_mat: &[f64] = if g.is_pointwise() {
            item
        } else {
            im2col(item, c, h, w, g, &mut cols);
            &cols
        };
        // dW += dY * cols^T
        gemm(cout, p, kk, dy, (p as isize, 1), b_mat, (1, p as isize), 1.0, dw.data_mut());
        // dcols = W^T * dY
        gemm(kk, cout, p, weight.data(), (1, kk as isize), dy, (p as isize, 1), 0.0, &mut dcols);
        if g.is_pointwise() {
            dx.item_mut(i).copy_from_slice(&dcols);
        } else {
            col2im(&dcols, c, h, w, g, dx.item_mut(i));
        }
        if let Some(db) = db.as_mut() {
            for (co, row) in dy.chunks_exact(p).enumerate() {
                db.data_mut()[co] += row.iter().sum::<f64>();
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// Per-channel statistics captured by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Biased variance (used for normalization).
    pub var: Vec<f64>,
    /// Number of values per channel.
    pub count: usize,
}

impl BnBatchStats {
    pub fn unbiased_var(&self) -> Vec<f64> {
        let m = self.count as f64;
        let f = if self.count > 1 { m / (m - 1.0) } else { 1.0 };
        self.var.iter().map(|v| v * f).collect()
    }
}

pub fn channel_stats(x: &Tensor) -> BnBatchStats {
    let [n, c, h, w] = x.shape();
    let count = n * h * w;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for (ci, (m, v)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
        let mut s = 0.0;
        for i in 0..n {
            s += x.plane(i, ci).iter().sum::<f64>();
        }
        *m = s / count as f64;
        let mut sq = 0.0;
        for i in 0..n {
            sq += x.plane(i, ci).iter().map(|v| (v - *m) * (v - *m)).sum::<f64>();
        }
        *v = sq / count as f64;
    }
    BnBatchStats { mean, var, count }
}

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta`, per channel.
pub fn batch_norm(x: &Tensor, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64]) -> Tensor {
    let [n, c, _, _] = x.shape();
    let mut y = x.clone();
    for ci in 0..c {
        let inv = 1.0 / (var[ci] + BN_EPS).sqrt();
        let scale = gamma[ci] * inv;
        let shift = beta[ci] - mean[ci] * scale;
        for i in 0..n {
            for v in y.plane_mut(i, ci) {
                *v = *v * scale + shift;
            }
        }
    }
    y
}

pub struct BnGrads {
    pub input: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Backward of `batch_norm`. With `batch_stats` the statistics are treated as
/// functions of `x` (training mode); otherwise they are constants.
pub fn batch_norm_backward(
    x: &Tensor,
    gamma: &[f64],
    mean: &[f64],
    var: &[f64],
    batch_stats: bool,
    grad_out: &Tensor,
) -> BnGrads {
    let [n, c, h, w] = x.shape();
    let m = (n * h * w) as f64;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ci in 0..c {
        let inv = 1.0 / (var[ci] + BN_EPS).sqrt();
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for i in 0..n {
            for (&xv, &dy) in x.plane(i, ci).iter().zip(grad_out.plane(i, ci)) {
                sum_dy += dy;
                sum_dy_xhat += dy * (xv - mean[ci]) * inv;
            }
        }
        dgamma[ci] = sum_dy_xhat;
        dbeta[ci] = sum_dy;
        let k = gamma[ci] * inv;
        for i in 0..n {
            let xs = x.plane(i, ci);
            let dys = grad_out.plane(i, ci);
            for ((d, &xv), &dy) in dx.plane_mut(i, ci).iter_mut().zip(xs).zip(dys) {
                *d = if batch_stats {
                    let xhat = (xv - mean[ci]) * inv;
                    k * (dy - sum_dy / m - xhat * sum_dy_xhat / m)
                } else {
                    k * dy
                };
            }
        }
    }
    BnGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut dx = grad_out.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Non-overlapping `k x k` average pooling; H and W must be divisible by `k`.
pub fn avg_pool(x: &Tensor, k: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::BadShape(format!("{h}x{w} not divisible by pooling window {k}")));
    }
    let (oh, ow) = (h / k, w / k);
    let norm = 1.0 / (k * k) as f64;
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for i in 0..n {
        for ci in 0..c {
            let src = x.plane(i, ci);
            let dst = y.plane_mut(i, ci);
            for yy in 0..h {
                for xx in 0..w {
                    dst[(yy / k) * ow + xx / k] += src[yy * w + xx];
                }
            }
            for v in dst {
                *v *= norm;
            }
        }
    }
    Ok(y)
}

pub fn avg_pool_backward(input_shape: [usize; 4], k: usize, grad_out: &Tensor) -> Tensor {
    let [n, c, h, w] = input_shape;
    let ow = w / k;
    let norm = 1.0 / (k * k) as f64;
    let mut dx = Tensor::zeros(input_shape);
    for i in 0..n {
        for ci in 0..c {
            let src = grad_out.plane(i, ci);
            let dst = dx.plane_mut(i, ci);
            for yy in 0..h {
                for xx in 0..w {
                    dst[yy * w + xx] = src[(yy / k) * ow + xx / k] * norm;
                }
            }
        }
    }
    dx
}

/// Bin `[start, end)` of an adaptive pooling cell.
fn adaptive_bin(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

/// Averages each of `grid x grid` (possibly overlapping) bins.
pub fn adaptive_avg_pool(x: &Tensor, grid: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if grid == 0 || grid > h || grid > w {
        return Err(Error::GridTooLarge {
            grid,
            height: h,
            width: w,
        });
    }
    let mut y = Tensor::zeros([n, c, grid, grid]);
    for i in 0..n {
        for ci in 0..c {
            let src = x.plane(i, ci);
            let dst = y.plane_mut(i, ci);
            for gy in 0..grid {
                let (y0, y1) = adaptive_bin(gy, h, grid);
                for gx in 0..grid {
                    let (x0, x1) = adaptive_bin(gx, w, grid);
                    let mut s = 0.0;
                    for yy in y0..y1 {
                        s += src[yy * w + x0..yy * w + x1].iter().sum::<f64>();
                    }
                    dst[gy * grid + gx] = s / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
    }
    Ok(y)
}

pub fn adaptive_avg_pool_backward(input_shape: [usize; 4], grid: usize, grad_out: &Tensor) -> Tensor {
    let [n, c, h, w] = input_shape;
    let mut dx = Tensor::zeros(input_shape);
    for i in 0..n {
        for ci in 0..c {
            let src = grad_out.plane(i, ci);
            let dst = dx.plane_mut(i, ci);
            for gy in 0..grid {
                let (y0, y1) = adaptive_bin(gy, h, grid);
                for gx in 0..grid {
                    let (x0, x1) = adaptive_bin(gx, w, grid);
                    let g = src[gy * grid + gx] / ((y1 - y0) * (x1 - x0)) as f64;
                    for yy in y0..y1 {
                        for v in &mut dst[yy * w + x0..yy * w + x1] {
                            *v += g;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// 1-D linear interpolation taps with half-pixel centers and edge clamping:
/// output `o` samples input coordinate `(o + 0.5) * in / out - 0.5`.
#[derive(Clone, Debug)]
pub struct LinearTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl LinearTaps {
    pub fn new(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let mut lo = Vec::with_capacity(output);
        let mut hi = Vec::with_capacity(output);
        let mut frac = Vec::with_capacity(output);
        for o in 0..output {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            lo.push(i0);
            hi.push(i1);
            frac.push(if i1 == i0 { 0.0 } else { src - i0 as f64 });
        }
        Self { lo, hi, frac }
    }
}

/// Bilinear resampling of every plane to `out_h x out_w`.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let ty = LinearTaps::new(h, out_h);
    let tx = LinearTaps::new(w, out_w);
    let mut y = Tensor::zeros([n, c, out_h, out_w]);
    let mut rows = vec![0.0; out_w * h];
    for i in 0..n {
        for ci in 0..c {
            let src = x.plane(i, ci);
            // horizontal pass
            for yy in 0..h {
                let s = &src[yy * w..(yy + 1) * w];
                let r = &mut rows[yy * out_w..(yy + 1) * out_w];
                for ox in 0..out_w {
                    let f = tx.frac[ox];
                    r[ox] = s[tx.lo[ox]] * (1.0 - f) + s[tx.hi[ox]] * f;
                }
            }
            let dst = y.plane_mut(i, ci);
            for oy in 0..out_h {
                let f = ty.frac[oy];
                let a = &rows[ty.lo[oy] * out_w..(ty.lo[oy] + 1) * out_w];
                let b = &rows[ty.hi[oy] * out_w..(ty.hi[oy] + 1) * out_w];
                for ox in 0..out_w {
                    dst[oy * out_w + ox] = a[ox] * (1.0 - f) + b[ox] * f;
                }
            }
        }
    }
    y
}

/// Adjoint of `resize_bilinear`.
pub fn resize_bilinear_backward(input_shape: [usize; 4], grad_out: &Tensor) -> Tensor {
    let [n, c, h, w] = input_shape;
    let [_, _, out_h, out_w] = grad_out.shape();
    let ty = LinearTaps::new(h, out_h);
    let tx = LinearTaps::new(w, out_w);
    let mut dx = Tensor::zeros(input_shape);
    let mut rows = vec![0.0; out_w * h];
    for i in 0..n {
        for ci in 0..c {
            rows.fill(0.0);
            let g = grad_out.plane(i, ci);
            for oy in 0..out_h {
                let f = ty.frac[oy];
                let (lo, hi) = (ty.lo[oy], ty.hi[oy]);
                for ox in 0..out_w {
                    let v = g[oy * out_w + ox];
                    rows[lo * out_w + ox] += v * (1.0 - f);
                    rows[hi * out_w + ox] += v * f;
                }
            }
            let dst = dx.plane_mut(i, ci);
            for yy in 0..h {
                let r = &rows[yy * out_w..(yy + 1) * out_w];
                let d = &mut dst[yy * w..(yy + 1) * w];
                for ox in 0..out_w {
                    let f = tx.frac[ox];
                    d[tx.lo[ox]] += r[ox] * (1.0 - f);
                    d[tx.hi[ox]] += r[ox] * f;
                }
            }
        }
    }
    dx
}

/// Concatenates along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::BadShape("concatenating zero tensors".into()))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        let [pn, _, ph, pw] = p.shape();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "concat {:?} with {:?}",
                p.shape(),
                first.shape()
            )));
        }
    }
    let c: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for i in 0..n {
        for p in parts {
            data.extend_from_slice(p.item(i));
        }
    }
    Tensor::new([n, c, h, w], data)
}

/// Splits a channel-concatenated gradient back into parts.
pub fn split_channels(grad: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let [n, _, h, w] = grad.shape();
    let hw = h * w;
    let mut out: Vec<Tensor> = channels.iter().map(|&c| Tensor::zeros([n, c, h, w])).collect();
    for i in 0..n {
        let item = grad.item(i);
        let mut offset = 0;
        for (t, &c) in out.iter_mut().zip(channels) {
            t.item_mut(i).copy_from_slice(&item[offset..offset + c * hw]);
            offset += c * hw;
        }
    }
    out
}
