//! Forward kernels and their vector-Jacobian products.
//!
//! Every kernel accumulates each output element in a fixed order, so results
//! are bitwise reproducible for a given input. The convolution sums taps in
//! `(input channel, kernel row, kernel column)` order, the same order a naive
//! nested loop over Eq.-style `x[i + r*k] * w[k]` terms would use.

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    /// Zero padding added on every side.
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(kh: usize, kw: usize) -> Self {
        ConvSpec {
            kernel: (kh, kw),
            stride: 1,
            dilation: 1,
            padding: 0,
        }
    }

    /// Square kernel with "same" padding `dilation * (k - 1) / 2`, so a
    /// stride-1 convolution keeps the spatial size for odd `k`.
    pub fn same(k: usize, stride: usize, dilation: usize) -> Self {
        ConvSpec {
            kernel: (k, k),
            stride,
            dilation,
            padding: dilation * (k.saturating_sub(1)) / 2,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if kh == 0 || kw == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv spec needs positive kernel, stride and dilation, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Output extent along one axis, `None` when the padded input is smaller
    /// than the dilated kernel.
    pub fn output_extent(&self, input: usize, k: usize) -> Option<usize> {
        let eff = effective_field_of_view(k, self.dilation);
        let padded = input + 2 * self.padding;
        if padded < eff {
            return None;
        }
        Some((padded - eff) / self.stride + 1)
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let oh = self.output_extent(h, self.kernel.0)?;
        let ow = self.output_extent(w, self.kernel.1)?;
        Some((oh, ow))
    }
}

/// Extent covered by a `k`-tap kernel with `r - 1` gaps between taps.
pub fn effective_field_of_view(k: usize, r: usize) -> usize {
    if k == 0 {
        return 0;
    }
    k + (k - 1) * (r.max(1) - 1)
}

/// Half-open range of output indices whose tap at input offset `offset`
/// (`= tap * dilation - padding`) lands inside `[0, input)`.
fn valid_range(offset: isize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset + s - 1) / s) as usize
    };
    let last = input as isize - 1 - offset;
    let hi = if last < 0 {
        0
    } else {
        ((last / s + 1) as usize).min(output)
    };
    (lo.min(hi), hi)
}

fn check_conv(input: &Tensor, weight: &Tensor, spec: &ConvSpec) -> Result<(Shape, Shape)> {
    spec.validate()?;
    let si = input.shape();
    let sw = weight.shape();
    if sw.c != si.c {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input has {} channels but weight {sw} expects {}",
                si.c, sw.c
            ),
        ));
    }
    if (sw.h, sw.w) != spec.kernel {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight kernel {}x{} differs from spec kernel {}x{}",
                sw.h, sw.w, spec.kernel.0, spec.kernel.1
            ),
        ));
    }
    let (oh, ow) = spec.output_size(si.h, si.w).ok_or_else(|| Error::ZeroSizeOutput {
        op: "conv2d",
        detail: format!(
            "input {}x{} with padding {} is smaller than dilated kernel {}x{}",
            si.h,
            si.w,
            spec.padding,
            effective_field_of_view(spec.kernel.0, spec.dilation),
            effective_field_of_view(spec.kernel.1, spec.dilation)
        ),
    })?;
    Ok((si, Shape::new(si.n, sw.n, oh, ow)))
}

/// Dilated 2-D cross-correlation.
///
/// `weight` has shape `(out_channels, in_channels, kh, kw)`. Output element
/// `(n, co, y, x)` is `sum_{ci, i, j} input[n, ci, y*s + i*r - p, x*s + j*r - p] * w[co, ci, i, j]`
/// with out-of-range taps skipped, plus `bias[co]`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let (si, so) = check_conv(input, weight, spec)?;
    if let Some(b) = bias {
        if b.len() != so.c {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} entries for {} output channels", b.len(), so.c),
            ));
        }
    }
    let (kh, kw) = spec.kernel;
    let (s, r, p) = (spec.stride, spec.dilation, spec.padding as isize);
    let wd = weight.data();
    let mut out = Tensor::zeros(so);
    for n in 0..si.n {
        for co in 0..so.c {
            let dst = out.plane_mut(n, co);
            for ci in 0..si.c {
                let src = input.plane(n, ci);
                for i in 0..kh {
                    let dy = (i * r) as isize - p;
                    let (y0, y1) = valid_range(dy, s, si.h, so.h);
                    for j in 0..kw {
                        let dx = (j * r) as isize - p;
                        let (x0, x1) = valid_range(dx, s, si.w, so.w);
                        if x0 >= x1 {
                            continue;
                        }
                        let wv = wd[((co * si.c + ci) * kh + i) * kw + j];
                        for oy in y0..y1 {
                            let iy = (oy * s) as isize + dy;
                            let irow = iy as usize * si.w;
                            let orow = &mut dst[oy * so.w + x0..oy * so.w + x1];
                            if s == 1 {
                                let ix0 = (x0 as isize + dx) as usize;
                                let in_row = &src[irow + ix0..irow + ix0 + (x1 - x0)];
                                for (o, v) in orow.iter_mut().zip(in_row) {
                                    *o += wv * v;
                                }
                            } else {
                                for (k, o) in orow.iter_mut().enumerate() {
                                    let ix = ((x0 + k) * s) as isize + dx;
                                    *o += wv * src[irow + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(b) = bias {
                let bv = b[co];
                dst.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] given the upstream gradient of its output.
pub struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (pa, pb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += pa[k] * pb[k];
        }
    }
    let mut tail = 0.0f32;
    for k in chunks * 8..a.len() {
        tail += a[k] * b[k];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    grad_out: &[f32],
    want_input: bool,
) -> Result<ConvGrads> {
    let (si, so) = check_conv(input, weight, spec)?;
    if grad_out.len() != so.numel() {
        return Err(Error::shape(
            "conv2d_backward",
            format!("upstream gradient has {} values for {so}", grad_out.len()),
        ));
    }
    let (kh, kw) = spec.kernel;
    let (s, r, p) = (spec.stride, spec.dilation, spec.padding as isize);
    let wd = weight.data();
    let oplane = so.plane();

    let mut gb = vec![0.0f32; so.c];
    for n in 0..so.n {
        for (co, b) in gb.iter_mut().enumerate() {
            let g = &grad_out[(n * so.c + co) * oplane..(n * so.c + co + 1) * oplane];
            *b += g.iter().sum::<f32>();
        }
    }

    let mut gw = vec![0.0f32; weight.numel()];
    let mut row_buf = Vec::new();
    for co in 0..so.c {
        for ci in 0..si.c {
            for i in 0..kh {
                let dy = (i * r) as isize - p;
                let (y0, y1) = valid_range(dy, s, si.h, so.h);
                for j in 0..kw {
                    let dx = (j * r) as isize - p;
                    let (x0, x1) = valid_range(dx, s, si.w, so.w);
                    if x0 >= x1 || y0 >= y1 {
                        continue;
                    }
                    let mut acc = 0.0f32;
                    for n in 0..si.n {
                        let src = input.plane(n, ci);
                        let g = &grad_out[(n * so.c + co) * oplane..(n * so.c + co + 1) * oplane];
                        for oy in y0..y1 {
                            let iy = ((oy * s) as isize + dy) as usize;
                            let grow = &g[oy * so.w + x0..oy * so.w + x1];
                            if s == 1 {
                                let ix0 = (x0 as isize + dx) as usize;
                                acc += dot(grow, &src[iy * si.w + ix0..iy * si.w + ix0 + (x1 - x0)]);
                            } else {
                                row_buf.clear();
                                row_buf.extend((x0..x1).map(|ox| {
                                    src[iy * si.w + ((ox * s) as isize + dx) as usize]
                                }));
                                acc += dot(grow, &row_buf);
                            }
                        }
                    }
                    gw[((co * si.c + ci) * kh + i) * kw + j] = acc;
                }
            }
        }
    }

    let gi = if want_input {
        let mut gi = vec![0.0f32; si.numel()];
        let iplane = si.plane();
        for n in 0..si.n {
            for ci in 0..si.c {
                let dst = &mut gi[(n * si.c + ci) * iplane..(n * si.c + ci + 1) * iplane];
                for co in 0..so.c {
                    let g = &grad_out[(n * so.c + co) * oplane..(n * so.c + co + 1) * oplane];
                    for i in 0..kh {
                        let dy = (i * r) as isize - p;
                        let (y0, y1) = valid_range(dy, s, si.h, so.h);
                        for j in 0..kw {
                            let dx = (j * r) as isize - p;
                            let (x0, x1) = valid_range(dx, s, si.w, so.w);
                            if x0 >= x1 {
                                continue;
                            }
                            let wv = wd[((co * si.c + ci) * kh + i) * kw + j];
                            for oy in y0..y1 {
                                let iy = ((oy * s) as isize + dy) as usize;
                                let grow = &g[oy * so.w + x0..oy * so.w + x1];
                                if s == 1 {
                                    let ix0 = (x0 as isize + dx) as usize;
                                    let drow = &mut dst[iy * si.w + ix0..iy * si.w + ix0 + (x1 - x0)];
                                    for (d, gv) in drow.iter_mut().zip(grow) {
                                        *d += wv * gv;
                                    }
                                } else {
                                    for (k, gv) in grow.iter().enumerate() {
                                        let ix = (((x0 + k) * s) as isize + dx) as usize;
                                        dst[iy * si.w + ix] += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Some(gi)
    } else {
        None
    };

    Ok(ConvGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

/// Numerical constants of batch normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f32,
    pub momentum: f32,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Intermediates kept for the batch-norm backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormSaved {
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
    pub training: bool,
}

/// Batch statistics of one forward pass, used to update running estimates.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    /// Unbiased variance estimate.
    pub var: Vec<f32>,
}

pub(crate) fn batch_norm_forward(
    input: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
    training: bool,
    cfg: BatchNormConfig,
) -> Result<(Tensor, BatchNormSaved, Option<BatchStats>)> {
    let s = input.shape();
    for (name, len) in [
        ("gamma", gamma.len()),
        ("beta", beta.len()),
        ("running_mean", running_mean.len()),
        ("running_var", running_var.len()),
    ] {
        if len != s.c {
            return Err(Error::shape(
                "batch_norm2d",
                format!("{name} has {len} entries for {} channels", s.c),
            ));
        }
    }
    let plane = s.plane();
    let count = s.n * plane;
    let mut out = Tensor::zeros(s);
    let mut xhat = vec![0.0f32; s.numel()];
    let mut inv_std = vec![0.0f32; s.c];
    let mut stats = training.then(|| BatchStats {
        mean: vec![0.0; s.c],
        var: vec![0.0; s.c],
    });
    for c in 0..s.c {
        let (mean, var) = if training {
            let mut sum = 0.0f64;
            for n in 0..s.n {
                sum += input.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
            }
            let mean = sum / count as f64;
            let mut sq = 0.0f64;
            for n in 0..s.n {
                sq += input
                    .plane(n, c)
                    .iter()
                    .map(|&v| {
                        let d = v as f64 - mean;
                        d * d
                    })
                    .sum::<f64>();
            }
            let var = sq / count as f64;
            if let Some(st) = stats.as_mut() {
                st.mean[c] = mean as f32;
                st.var[c] = if count > 1 {
                    (sq / (count - 1) as f64) as f32
                } else {
                    var as f32
                };
            }
            (mean, var)
        } else {
            (running_mean[c] as f64, running_var[c] as f64)
        };
        let inv = (1.0 / (var + cfg.eps as f64).sqrt()) as f32;
        let m = mean as f32;
        inv_std[c] = inv;
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            let src = input.plane(n, c);
            let xh = &mut xhat[off..off + plane];
            for (h, &v) in xh.iter_mut().zip(src) {
                *h = (v - m) * inv;
            }
            let dst = out.plane_mut(n, c);
            for (d, &h) in dst.iter_mut().zip(xh.iter()) {
                *d = gamma[c] * h + beta[c];
            }
        }
    }
    Ok((
        out,
        BatchNormSaved {
            xhat,
            inv_std,
            training,
        },
        stats,
    ))
}

/// Exponential moving-average update of running statistics.
pub(crate) fn update_running(running: &mut [f32], batch: &[f32], momentum: f32) {
    for (r, &b) in running.iter_mut().zip(batch) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
}

/// Per-channel batch normalization.
///
/// In training mode the batch mean and biased variance normalize the input
/// and the running estimates are updated in place; otherwise the running
/// estimates are used as-is.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm2d(
    input: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &mut [f32],
    running_var: &mut [f32],
    training: bool,
    cfg: BatchNormConfig,
) -> Result<Tensor> {
    let (out, _, stats) =
        batch_norm_forward(input, gamma, beta, running_mean, running_var, training, cfg)?;
    if let Some(st) = stats {
        update_running(running_mean, &st.mean, cfg.momentum);
        update_running(running_var, &st.var, cfg.momentum);
    }
    Ok(out)
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub(crate) fn batch_norm_backward(
    shape: Shape,
    gamma: &[f32],
    saved: &BatchNormSaved,
    grad_out: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let plane = shape.plane();
    let count = (shape.n * plane) as f32;
    let mut gi = vec![0.0f32; shape.numel()];
    let mut gg = vec![0.0f32; shape.c];
    let mut gbeta = vec![0.0f32; shape.c];
    for c in 0..shape.c {
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for n in 0..shape.n {
            let off = (n * shape.c + c) * plane;
            for k in off..off + plane {
                sum_g += grad_out[k] as f64;
                sum_gx += (grad_out[k] * saved.xhat[k]) as f64;
            }
        }
        gbeta[c] = sum_g as f32;
        gg[c] = sum_gx as f32;
        let scale = gamma[c] * saved.inv_std[c];
        for n in 0..shape.n {
            let off = (n * shape.c + c) * plane;
            if saved.training {
                let mg = (sum_g / count as f64) as f32;
                let mgx = (sum_gx / count as f64) as f32;
                for k in off..off + plane {
                    gi[k] = scale * (grad_out[k] - mg - saved.xhat[k] * mgx);
                }
            } else {
                for k in off..off + plane {
                    gi[k] = scale * grad_out[k];
                }
            }
        }
    }
    (gi, gg, gbeta)
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

pub(crate) fn relu_backward(input: &Tensor, grad_out: &[f32]) -> Vec<f32> {
    input
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

pub(crate) fn max_pool_forward(
    input: &Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Vec<u32>)> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "max_pool2d needs positive kernel and stride".into(),
        ));
    }
    if padding * 2 > kernel {
        return Err(Error::InvalidArgument(format!(
            "max_pool2d padding {padding} exceeds half of kernel {kernel}"
        )));
    }
    let s = input.shape();
    let oh = (s.h + 2 * padding)
        .checked_sub(kernel)
        .map(|v| v / stride + 1)
        .ok_or_else(|| Error::ZeroSizeOutput {
            op: "max_pool2d",
            detail: format!("input {}x{} smaller than kernel {kernel}", s.h, s.w),
        })?;
    let ow = (s.w + 2 * padding)
        .checked_sub(kernel)
        .map(|v| v / stride + 1)
        .ok_or_else(|| Error::ZeroSizeOutput {
            op: "max_pool2d",
            detail: format!("input {}x{} smaller than kernel {kernel}", s.h, s.w),
        })?;
    let so = Shape::new(s.n, s.c, oh, ow);
    let mut out = Tensor::zeros(so);
    let mut arg = vec![0u32; so.numel()];
    let p = padding as isize;
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let base = (n * s.c + c) * so.plane();
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for i in 0..kernel {
                        let iy = (oy * stride + i) as isize - p;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for j in 0..kernel {
                            let ix = (ox * stride + j) as isize - p;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let idx = iy as usize * s.w + ix as usize;
                            if src[idx] > best {
                                best = src[idx];
                                best_i = idx;
                            }
                        }
                    }
                    out.data_mut()[base + oy * ow + ox] = best;
                    arg[base + oy * ow + ox] = best_i as u32;
                }
            }
        }
    }
    Ok((out, arg))
}

/// Max pooling over `kernel x kernel` windows; padded positions never win.
pub fn max_pool2d(input: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    max_pool_forward(input, kernel, stride, padding).map(|(t, _)| t)
}

pub(crate) fn max_pool_backward(
    in_shape: Shape,
    out_shape: Shape,
    argmax: &[u32],
    grad_out: &[f32],
) -> Vec<f32> {
    let mut gi = vec![0.0f32; in_shape.numel()];
    let (ip, op) = (in_shape.plane(), out_shape.plane());
    for nc in 0..in_shape.n * in_shape.c {
        for k in 0..op {
            gi[nc * ip + argmax[nc * op + k] as usize] += grad_out[nc * op + k];
        }
    }
    gi
}

/// Source sample positions of a half-pixel (align-corners = false) resize
/// along one axis: `(lower index, upper index, weight of upper)`.
#[derive(Debug, Clone)]
pub(crate) struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f32>,
}

impl AxisTaps {
    pub(crate) fn new(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let mut taps = AxisTaps {
            lo: Vec::with_capacity(output),
            hi: Vec::with_capacity(output),
            frac: Vec::with_capacity(output),
        };
        for d in 0..output {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.frac.push((src - lo as f64) as f32);
        }
        taps
    }
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Bilinear resize to `out_h x out_w` with half-pixel sampling
/// `src = (dst + 0.5) * in / out - 0.5`, clamped to the borders.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = input.shape();
    if out_h == 0 || out_w == 0 || s.h == 0 || s.w == 0 {
        return Err(Error::ZeroSizeOutput {
            op: "resize_bilinear",
            detail: format!("{}x{} -> {out_h}x{out_w}", s.h, s.w),
        });
    }
    let ty = AxisTaps::new(s.h, out_h);
    let tx = AxisTaps::new(s.w, out_w);
    let so = Shape::new(s.n, s.c, out_h, out_w);
    let mut out = Tensor::zeros(so);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..out_h {
                let (r0, r1, fy) = (ty.lo[y] * s.w, ty.hi[y] * s.w, ty.frac[y]);
                for x in 0..out_w {
                    let (x0, x1, fx) = (tx.lo[x], tx.hi[x], tx.frac[x]);
                    let top = lerp(src[r0 + x0], src[r0 + x1], fx);
                    let bottom = lerp(src[r1 + x0], src[r1 + x1], fx);
                    dst[y * out_w + x] = lerp(top, bottom, fy);
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear upsampling by an integer factor on both axes.
pub fn bilinear_upsample(input: &Tensor, scale: usize) -> Result<Tensor> {
    if scale == 0 {
        return Err(Error::InvalidArgument("upsample scale must be positive".into()));
    }
    let s = input.shape();
    resize_bilinear(input, s.h * scale, s.w * scale)
}

pub(crate) fn resize_bilinear_backward(in_shape: Shape, out_shape: Shape, grad_out: &[f32]) -> Vec<f32> {
    let ty = AxisTaps::new(in_shape.h, out_shape.h);
    let tx = AxisTaps::new(in_shape.w, out_shape.w);
    let mut gi = vec![0.0f32; in_shape.numel()];
    let (ip, op) = (in_shape.plane(), out_shape.plane());
    for nc in 0..in_shape.n * in_shape.c {
        let g = &grad_out[nc * op..(nc + 1) * op];
        let dst = &mut gi[nc * ip..(nc + 1) * ip];
        for y in 0..out_shape.h {
            let (r0, r1, fy) = (ty.lo[y] * in_shape.w, ty.hi[y] * in_shape.w, ty.frac[y]);
            for x in 0..out_shape.w {
                let (x0, x1, fx) = (tx.lo[x], tx.hi[x], tx.frac[x]);
                let gv = g[y * out_shape.w + x];
                let top = gv * (1.0 - fy);
                let bottom = gv * fy;
                dst[r0 + x0] += top * (1.0 - fx);
                dst[r0 + x1] += top * fx;
                dst[r1 + x0] += bottom * (1.0 - fx);
                dst[r1 + x1] += bottom * fx;
            }
        }
    }
    gi
}

/// Concatenates along the channel axis in argument order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let s0 = first.shape();
    let mut channels = 0;
    for t in inputs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
            return Err(Error::shape(
                "concat_channels",
                format!("{s} does not share batch/spatial dims with {s0}"),
            ));
        }
        channels += s.c;
    }
    let so = Shape::new(s0.n, channels, s0.h, s0.w);
    let mut data = Vec::with_capacity(so.numel());
    for n in 0..s0.n {
        for t in inputs {
            let len = t.shape().c * s0.plane();
            data.extend_from_slice(&t.data()[n * len..(n + 1) * len]);
        }
    }
    Tensor::from_vec(so, data)
}

/// Splits a concatenated gradient back into per-input pieces.
pub(crate) fn concat_backward(shapes: &[Shape], grad_out: &[f32]) -> Vec<Vec<f32>> {
    let n = shapes[0].n;
    let plane = shapes[0].plane();
    let mut parts: Vec<Vec<f32>> = shapes.iter().map(|s| Vec::with_capacity(s.numel())).collect();
    let mut off = 0;
    for _ in 0..n {
        for (part, s) in parts.iter_mut().zip(shapes) {
            let len = s.c * plane;
            part.extend_from_slice(&grad_out[off..off + len]);
            off += len;
        }
    }
    parts
}

pub(crate) fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{} vs {}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_bce(logits: &Tensor, targets: &Tensor) -> Result<()> {
    if logits.shape() != targets.shape() {
        return Err(Error::shape(
            "sigmoid_bce_loss",
            format!("logits {} vs targets {}", logits.shape(), targets.shape()),
        ));
    }
    if logits.numel() == 0 {
        return Err(Error::InvalidArgument("sigmoid_bce_loss of empty tensor".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy of `sigmoid(logits)` against `{0, 1}` targets,
/// evaluated as `max(z, 0) - z*t + ln(1 + exp(-|z|))`.
pub fn sigmoid_bce_loss(logits: &Tensor, targets: &Tensor) -> Result<f32> {
    check_bce(logits, targets)?;
    let sum: f64 = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&z, &t)| {
            let (z, t) = (z as f64, t as f64);
            z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
        })
        .sum();
    Ok((sum / logits.numel() as f64) as f32)
}

pub(crate) fn sigmoid_bce_backward(logits: &Tensor, targets: &Tensor, grad_out: f32) -> Vec<f32> {
    let scale = grad_out / logits.numel() as f32;
    logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&z, &t)| (sigmoid(z) - t) * scale)
        .collect()
}
