//! Neural building blocks: convolution, pooling, upsampling, rearrangement
//! and activation, each with a forward kernel and a backward rule recorded on
//! the tape.
//!
//! All kernels are plain single-threaded loops over `(n, c, h, w)` data in
//! row-major order, so results are bitwise deterministic for fixed inputs.

use crate::error::{Error, Result};
use crate::tape::{BackwardFn, Grads, Values, Var};
use crate::tensor::{Shape, Tensor};

/// Padding policy of a convolution.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Padding {
    /// Output spatial size equals input size. Requires stride 1 and an odd
    /// kernel; pads by `dilation * (k - 1) / 2` per side.
    Same,
    /// Explicit symmetric padding per side.
    Explicit(usize),
}

/// Static description of a 2-D convolution layer.
#[derive(Clone, Copy, Debug)]
pub struct Conv2dSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: usize,
    pub padding: Padding,
    pub bias: bool,
}

impl Conv2dSpec {
    /// 3x3 stride-1 "same" convolution with bias, the backbone workhorse.
    pub fn k3(in_ch: usize, out_ch: usize, dilation: usize) -> Self {
        Conv2dSpec {
            in_ch,
            out_ch,
            kernel: (3, 3),
            stride: (1, 1),
            dilation,
            padding: Padding::Same,
            bias: true,
        }
    }

    /// 1x1 pointwise convolution with bias.
    pub fn k1(in_ch: usize, out_ch: usize) -> Self {
        Conv2dSpec {
            in_ch,
            out_ch,
            kernel: (1, 1),
            stride: (1, 1),
            dilation: 1,
            padding: Padding::Explicit(0),
            bias: true,
        }
    }

    /// Learnable parameter count: `in_ch * out_ch * kh * kw (+ out_ch)`.
    pub fn param_count(&self) -> u64 {
        let (kh, kw) = self.kernel;
        let w = (self.in_ch * self.out_ch * kh * kw) as u64;
        w + if self.bias { self.out_ch as u64 } else { 0 }
    }

    /// Symmetric padding per side implied by the policy.
    pub fn padding_amount(&self) -> Result<(usize, usize)> {
        match self.padding {
            Padding::Explicit(p) => Ok((p, p)),
            Padding::Same => {
                let (kh, kw) = self.kernel;
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::Invalid {
                        op: "conv2d",
                        what: format!("\"same\" padding requires an odd kernel, got {kh}x{kw}"),
                    });
                }
                if self.stride != (1, 1) {
                    return Err(Error::Invalid {
                        op: "conv2d",
                        what: "\"same\" padding requires stride 1".to_string(),
                    });
                }
                Ok((self.dilation * (kh - 1) / 2, self.dilation * (kw - 1) / 2))
            }
        }
    }

    /// Output spatial dims for an input of `(h, w)`.
    pub fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = self.padding_amount()?;
        let (kh, kw) = self.kernel;
        let (eh, ew) = (self.dilation * (kh - 1) + 1, self.dilation * (kw - 1) + 1);
        let (sh, sw) = self.stride;
        if h + 2 * ph < eh || w + 2 * pw < ew {
            return Err(Error::Invalid {
                op: "conv2d",
                what: format!(
                    "input {h}x{w} too small for effective kernel {eh}x{ew} with padding {ph}/{pw}"
                ),
            });
        }
        Ok(((h + 2 * ph - eh) / sh + 1, (w + 2 * pw - ew) / sw + 1))
    }

    /// Receptive field growth of one layer: `1 + dilation * (k - 1)`.
    pub fn receptive_extent(&self) -> usize {
        1 + self.dilation * (self.kernel.0.max(self.kernel.1) - 1)
    }
}

/// Valid output index range `[lo, hi)` such that `o * stride + tap - pad`
/// stays inside `[0, in_len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, pad: usize, tap: usize) -> (usize, usize) {
    let shift = tap as isize - pad as isize;
    let lo = if shift >= 0 {
        0
    } else {
        ((-shift) as usize).div_ceil(stride)
    };
    let last = in_len as isize - 1 - shift;
    if last < 0 {
        return (0, 0);
    }
    let hi = (out_len).min(last as usize / stride + 1);
    (lo.min(hi), hi)
}

fn conv2d_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: &Conv2dSpec) -> Result<Tensor> {
    let xs = x.shape();
    let (oh, ow) = spec.out_dims(xs.h, xs.w)?;
    let (ph, pw) = spec.padding_amount()?;
    let (sh, sw) = spec.stride;
    let (kh, kw) = spec.kernel;
    let d = spec.dilation;
    let os = Shape::new(xs.n, spec.out_ch, oh, ow);
    let mut out = vec![0.0f32; os.numel()];

    let xd = x.data();
    let wd = w.data();
    for n in 0..xs.n {
        for oc in 0..spec.out_ch {
            let ob = (n * spec.out_ch + oc) * oh * ow;
            if let Some(b) = bias {
                let bv = b.data()[oc];
                out[ob..ob + oh * ow].fill(bv);
            }
            for ic in 0..spec.in_ch {
                let xb = (n * xs.c + ic) * xs.h * xs.w;
                let wb = ((oc * spec.in_ch + ic) * kh) * kw;
                for ki in 0..kh {
                    let (oh_lo, oh_hi) = valid_range(oh, xs.h, sh, ph, ki * d);
                    for kj in 0..kw {
                        let wv = wd[wb + ki * kw + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ow_lo, ow_hi) = valid_range(ow, xs.w, sw, pw, kj * d);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let shift_w = (kj * d) as isize - pw as isize;
                        for o_row in oh_lo..oh_hi {
                            let ih = (o_row * sh) as isize + (ki * d) as isize - ph as isize;
                            let x_row = xb + ih as usize * xs.w;
                            let o_base = ob + o_row * ow;
                            if sw == 1 {
                                let iw0 = (ow_lo as isize + shift_w) as usize;
                                let len = ow_hi - ow_lo;
                                let xr = &xd[x_row + iw0..x_row + iw0 + len];
                                let orow = &mut out[o_base + ow_lo..o_base + ow_lo + len];
                                for (o, &xv) in orow.iter_mut().zip(xr) {
                                    *o += wv * xv;
                                }
                            } else {
                                for o_col in ow_lo..ow_hi {
                                    let iw = (o_col * sw) as isize + shift_w;
                                    out[o_base + o_col] += wv * xd[x_row + iw as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

/// dL/dx of a convolution: scatters `w * gout` back through the same taps.
fn conv2d_backward_x(
    dx: &mut [f32],
    xs: Shape,
    wd: &[f32],
    gout: &[f32],
    os: Shape,
    spec: &Conv2dSpec,
) {
    let (ph, pw) = spec.padding_amount().expect("validated at forward");
    let (sh, sw) = spec.stride;
    let (kh, kw) = spec.kernel;
    let d = spec.dilation;
    for n in 0..xs.n {
        for oc in 0..spec.out_ch {
            let ob = (n * spec.out_ch + oc) * os.h * os.w;
            for ic in 0..spec.in_ch {
                let xb = (n * xs.c + ic) * xs.h * xs.w;
                let wb = ((oc * spec.in_ch + ic) * kh) * kw;
                for ki in 0..kh {
                    let (oh_lo, oh_hi) = valid_range(os.h, xs.h, sh, ph, ki * d);
                    for kj in 0..kw {
                        let wv = wd[wb + ki * kw + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ow_lo, ow_hi) = valid_range(os.w, xs.w, sw, pw, kj * d);
                        let shift_w = (kj * d) as isize - pw as isize;
                        for o_row in oh_lo..oh_hi {
                            let ih = (o_row * sh) as isize + (ki * d) as isize - ph as isize;
                            let x_row = xb + ih as usize * xs.w;
                            let o_base = ob + o_row * os.w;
                            for o_col in ow_lo..ow_hi {
                                let iw = (o_col * sw) as isize + shift_w;
                                dx[x_row + iw as usize] += wv * gout[o_base + o_col];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// dL/dw of a convolution: correlates input with the output gradient.
fn conv2d_backward_w(
    dw: &mut [f32],
    xd: &[f32],
    xs: Shape,
    gout: &[f32],
    os: Shape,
    spec: &Conv2dSpec,
) {
    let (ph, pw) = spec.padding_amount().expect("validated at forward");
    let (sh, sw) = spec.stride;
    let (kh, kw) = spec.kernel;
    let d = spec.dilation;
    for n in 0..xs.n {
        for oc in 0..spec.out_ch {
            let ob = (n * spec.out_ch + oc) * os.h * os.w;
            for ic in 0..spec.in_ch {
                let xb = (n * xs.c + ic) * xs.h * xs.w;
                let wb = ((oc * spec.in_ch + ic) * kh) * kw;
                for ki in 0..kh {
                    let (oh_lo, oh_hi) = valid_range(os.h, xs.h, sh, ph, ki * d);
                    for kj in 0..kw {
                        let (ow_lo, ow_hi) = valid_range(os.w, xs.w, sw, pw, kj * d);
                        let shift_w = (kj * d) as isize - pw as isize;
                        let mut acc = 0.0f32;
                        for o_row in oh_lo..oh_hi {
                            let ih = (o_row * sh) as isize + (ki * d) as isize - ph as isize;
                            let x_row = xb + ih as usize * xs.w;
                            let o_base = ob + o_row * os.w;
                            for o_col in ow_lo..ow_hi {
                                let iw = (o_col * sw) as isize + shift_w;
                                acc += xd[x_row + iw as usize] * gout[o_base + o_col];
                            }
                        }
                        dw[wb + ki * kw + kj] += acc;
                    }
                }
            }
        }
    }
}

fn sum_over_spatial_batch(gout: &[f32], os: Shape, db: &mut [f32]) {
    for n in 0..os.n {
        for oc in 0..os.c {
            let base = (n * os.c + oc) * os.h * os.w;
            let mut acc = 0.0f32;
            for v in &gout[base..base + os.h * os.w] {
                acc += v;
            }
            db[oc] += acc;
        }
    }
}

/// 2-D cross-correlation with dilation, the standard convolution layer.
///
/// `weights` is `(out_ch, in_ch, kh, kw)`, `bias` is `(1, out_ch, 1, 1)`.
pub fn conv2d<'t>(
    x: Var<'t>,
    weights: Var<'t>,
    bias: Option<Var<'t>>,
    spec: &Conv2dSpec,
) -> Result<Var<'t>> {
    let tape = x.tape();
    let xs = x.shape();
    if xs.c != spec.in_ch {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            expected: spec.in_ch,
            got: xs.c,
        });
    }
    let ws = weights.shape();
    let expect_w = Shape::new(spec.out_ch, spec.in_ch, spec.kernel.0, spec.kernel.1);
    if ws != expect_w {
        return Err(Error::ShapeMismatch {
            op: "conv2d weights",
            lhs: ws,
            rhs: expect_w,
        });
    }
    if let Some(b) = bias {
        let bs = b.shape();
        let expect_b = Shape::new(1, spec.out_ch, 1, 1);
        if bs != expect_b {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: bs,
                rhs: expect_b,
            });
        }
    }

    let out = tape.with_values(|v| {
        conv2d_forward(
            v.tensor(x.id()),
            v.tensor(weights.id()),
            bias.map(|b| v.tensor(b.id())),
            spec,
        )
    })?;
    let os = out.shape();

    let needs = x.needs_grad() || weights.needs_grad() || bias.map(|b| b.needs_grad()).unwrap_or(false);
    let backward: Option<BackwardFn> = needs.then(|| {
        let spec = *spec;
        let (xi, wi, bi) = (x.id(), weights.id(), bias.map(|b| b.id()));
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let xs = v.shape(xi);
            if v.tensor(xi).needs_grad() {
                let wd = v.data(wi).to_vec();
                let dx = grads.buf_mut(xi, xs.numel());
                conv2d_backward_x(dx, xs, &wd, gout, os, &spec);
            }
            if v.tensor(wi).needs_grad() {
                let xd = v.data(xi).to_vec();
                let dw = grads.buf_mut(wi, v.shape(wi).numel());
                conv2d_backward_w(dw, &xd, xs, gout, os, &spec);
            }
            if let Some(bi) = bi {
                if v.tensor(bi).needs_grad() {
                    let db = grads.buf_mut(bi, spec.out_ch);
                    sum_over_spatial_batch(gout, os, db);
                }
            }
        }) as BackwardFn
    });
    Ok(tape.push(out, backward))
}

/// Transposed convolution with stride 2 and a 2x2 kernel: exactly doubles the
/// spatial dims. `weights` is `(in_ch, out_ch, 2, 2)`, `bias` `(1, out_ch, 1, 1)`.
///
/// The only supported configuration is the non-overlapping `stride = kernel = 2`
/// upscaling stage the networks use; the gradient w.r.t. the input is the
/// adjoint stride-2 convolution of the upstream gradient.
pub fn conv2d_transposed<'t>(
    x: Var<'t>,
    weights: Var<'t>,
    bias: Option<Var<'t>>,
    spec: &Conv2dSpec,
) -> Result<Var<'t>> {
    if spec.kernel != (2, 2) || spec.stride != (2, 2) || spec.dilation != 1 {
        return Err(Error::Invalid {
            op: "conv2d_transposed",
            what: format!(
                "only kernel 2x2 / stride 2 / dilation 1 is supported, got kernel {:?} stride {:?} dilation {}",
                spec.kernel, spec.stride, spec.dilation
            ),
        });
    }
    let tape = x.tape();
    let xs = x.shape();
    if xs.c != spec.in_ch {
        return Err(Error::ChannelMismatch {
            op: "conv2d_transposed",
            expected: spec.in_ch,
            got: xs.c,
        });
    }
    let ws = weights.shape();
    let expect_w = Shape::new(spec.in_ch, spec.out_ch, 2, 2);
    if ws != expect_w {
        return Err(Error::ShapeMismatch {
            op: "conv2d_transposed weights",
            lhs: ws,
            rhs: expect_w,
        });
    }

    let os = Shape::new(xs.n, spec.out_ch, xs.h * 2, xs.w * 2);
    let out = tape.with_values(|v| {
        let xd = v.data(x.id());
        let wd = v.data(weights.id());
        let mut out = vec![0.0f32; os.numel()];
        for n in 0..xs.n {
            for oc in 0..spec.out_ch {
                let ob = (n * spec.out_ch + oc) * os.h * os.w;
                if let Some(b) = bias {
                    let bv = v.data(b.id())[oc];
                    out[ob..ob + os.h * os.w].fill(bv);
                }
                for ic in 0..spec.in_ch {
                    let xb = (n * xs.c + ic) * xs.h * xs.w;
                    for ki in 0..2 {
                        for kj in 0..2 {
                            let wv = wd[((ic * spec.out_ch + oc) * 2 + ki) * 2 + kj];
                            for i in 0..xs.h {
                                let x_row = xb + i * xs.w;
                                let o_row = ob + (2 * i + ki) * os.w + kj;
                                for j in 0..xs.w {
                                    out[o_row + 2 * j] += wv * xd[x_row + j];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(os, out)
    })?;

    let needs = x.needs_grad() || weights.needs_grad() || bias.map(|b| b.needs_grad()).unwrap_or(false);
    let backward: Option<BackwardFn> = needs.then(|| {
        let spec = *spec;
        let (xi, wi, bi) = (x.id(), weights.id(), bias.map(|b| b.id()));
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let xs = v.shape(xi);
            let (in_ch, out_ch) = (spec.in_ch, spec.out_ch);
            if v.tensor(xi).needs_grad() {
                let wd = v.data(wi).to_vec();
                let dx = grads.buf_mut(xi, xs.numel());
                for n in 0..xs.n {
                    for ic in 0..in_ch {
                        let xb = (n * in_ch + ic) * xs.h * xs.w;
                        for oc in 0..out_ch {
                            let ob = (n * out_ch + oc) * os.h * os.w;
                            for ki in 0..2 {
                                for kj in 0..2 {
                                    let wv = wd[((ic * out_ch + oc) * 2 + ki) * 2 + kj];
                                    for i in 0..xs.h {
                                        let g_row = ob + (2 * i + ki) * os.w + kj;
                                        let x_row = xb + i * xs.w;
                                        for j in 0..xs.w {
                                            dx[x_row + j] += wv * gout[g_row + 2 * j];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if v.tensor(wi).needs_grad() {
                let xd = v.data(xi).to_vec();
                let dw = grads.buf_mut(wi, in_ch * out_ch * 4);
                for n in 0..xs.n {
                    for ic in 0..in_ch {
                        let xb = (n * in_ch + ic) * xs.h * xs.w;
                        for oc in 0..out_ch {
                            let ob = (n * out_ch + oc) * os.h * os.w;
                            for ki in 0..2 {
                                for kj in 0..2 {
                                    let mut acc = 0.0f32;
                                    for i in 0..xs.h {
                                        let g_row = ob + (2 * i + ki) * os.w + kj;
                                        let x_row = xb + i * xs.w;
                                        for j in 0..xs.w {
                                            acc += xd[x_row + j] * gout[g_row + 2 * j];
                                        }
                                    }
                                    dw[((ic * out_ch + oc) * 2 + ki) * 2 + kj] += acc;
                                }
                            }
                        }
                    }
                }
            }
            if let Some(bi) = bi {
                if v.tensor(bi).needs_grad() {
                    let db = grads.buf_mut(bi, out_ch);
                    sum_over_spatial_batch(gout, os, db);
                }
            }
        }) as BackwardFn
    });
    Ok(tape.push(out, backward))
}

/// 2x2 max pooling with stride 2. Ties route the gradient to the first
/// maximum in row-major window order.
pub fn maxpool2x2(x: Var<'_>) -> Result<Var<'_>> {
    let tape = x.tape();
    let xs = x.shape();
    if xs.h % 2 != 0 || xs.w % 2 != 0 {
        return Err(Error::Invalid {
            op: "maxpool2x2",
            what: format!("spatial dims must be even, got {}x{}", xs.h, xs.w),
        });
    }
    let os = Shape::new(xs.n, xs.c, xs.h / 2, xs.w / 2);
    let (out, argmax) = tape.with_values(|v| {
        let xd = v.data(x.id());
        let mut out = Vec::with_capacity(os.numel());
        let mut argmax = Vec::with_capacity(os.numel());
        for n in 0..xs.n {
            for c in 0..xs.c {
                let xb = (n * xs.c + c) * xs.h * xs.w;
                for i in 0..os.h {
                    for j in 0..os.w {
                        let p00 = xb + (2 * i) * xs.w + 2 * j;
                        let window = [p00, p00 + 1, p00 + xs.w, p00 + xs.w + 1];
                        let mut best = window[0];
                        for &p in &window[1..] {
                            if xd[p] > xd[best] {
                                best = p;
                            }
                        }
                        out.push(xd[best]);
                        argmax.push(best as u32);
                    }
                }
            }
        }
        (Tensor::from_vec(os, out), argmax)
    });
    let out = out?;
    let backward: Option<BackwardFn> = x.needs_grad().then(|| {
        let xi = x.id();
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let dx = grads.buf_mut(xi, v.shape(xi).numel());
            for (g, &p) in gout.iter().zip(&argmax) {
                dx[p as usize] += g;
            }
        }) as BackwardFn
    });
    Ok(tape.push(out, backward))
}

/// 2x2 average pooling with stride 2 (used between MS-SSIM levels).
pub fn avg_pool2x2(x: Var<'_>) -> Result<Var<'_>> {
    let tape = x.tape();
    let xs = x.shape();
    if xs.h % 2 != 0 || xs.w % 2 != 0 {
        return Err(Error::Invalid {
            op: "avg_pool2x2",
            what: format!("spatial dims must be even, got {}x{}", xs.h, xs.w),
        });
    }
    let os = Shape::new(xs.n, xs.c, xs.h / 2, xs.w / 2);
    let out = tape.with_values(|v| {
        let xd = v.data(x.id());
        let mut out = Vec::with_capacity(os.numel());
        for n in 0..xs.n {
            for c in 0..xs.c {
                let xb = (n * xs.c + c) * xs.h * xs.w;
                for i in 0..os.h {
                    for j in 0..os.w {
                        let p = xb + (2 * i) * xs.w + 2 * j;
                        out.push(0.25 * (xd[p] + xd[p + 1] + xd[p + xs.w] + xd[p + xs.w + 1]));
                    }
                }
            }
        }
        Tensor::from_vec(os, out)
    })?;
    let backward: Option<BackwardFn> = x.needs_grad().then(|| {
        let xi = x.id();
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let xs = v.shape(xi);
            let dx = grads.buf_mut(xi, xs.numel());
            let (oh, ow) = (xs.h / 2, xs.w / 2);
            for n in 0..xs.n {
                for c in 0..xs.c {
                    let xb = (n * xs.c + c) * xs.h * xs.w;
                    let ob = (n * xs.c + c) * oh * ow;
                    for i in 0..oh {
                        for j in 0..ow {
                            let g = 0.25 * gout[ob + i * ow + j];
                            let p = xb + (2 * i) * xs.w + 2 * j;
                            dx[p] += g;
                            dx[p + 1] += g;
                            dx[p + xs.w] += g;
                            dx[p + xs.w + 1] += g;
                        }
                    }
                }
            }
        }) as BackwardFn
    });
    Ok(tape.push(out, backward))
}

/// Mean over all spatial positions per channel: `(n,c,h,w) -> (n,c,1,1)`.
pub fn global_avg_pool(x: Var<'_>) -> Result<Var<'_>> {
    let tape = x.tape();
    let xs = x.shape();
    let os = Shape::new(xs.n, xs.c, 1, 1);
    let out = tape.with_values(|v| {
        let xd = v.data(x.id());
        let area = xs.h * xs.w;
        let mut out = Vec::with_capacity(os.numel());
        for nc in 0..xs.n * xs.c {
            let base = nc * area;
            let s: f64 = xd[base..base + area].iter().map(|&v| v as f64).sum();
            out.push((s / area as f64) as f32);
        }
        Tensor::from_vec(os, out)
    })?;
    let backward: Option<BackwardFn> = x.needs_grad().then(|| {
        let xi = x.id();
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let xs = v.shape(xi);
            let area = xs.h * xs.w;
            let dx = grads.buf_mut(xi, xs.numel());
            for nc in 0..xs.n * xs.c {
                let g = gout[nc] / area as f32;
                for d in &mut dx[nc * area..(nc + 1) * area] {
                    *d += g;
                }
            }
        }) as BackwardFn
    });
    Ok(tape.push(out, backward))
}

/// One axis of align-corners-false bilinear interpolation: for each output
/// index, the two source indices and the interpolation weight of the second.
fn bilinear_axis(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = (o as f64 + 0.5) * scale - 0.5;
            let floor = s.floor();
            let frac = (s - floor) as f32;
            let lo = (floor.max(0.0) as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            if floor < 0.0 || lo == hi {
                // clamped edge or degenerate axis: single tap, exact copy
                (lo, hi, 0.0)
            } else {
                (lo, hi, frac)
            }
        })
        .collect()
}

/// Bilinear upsampling (align-corners-false) to `(target_h, target_w)`.
/// A 1x1 source broadcasts its value exactly.
pub fn bilinear_upsample(x: Var<'_>, target: (usize, usize)) -> Result<Var<'_>> {
    let tape = x.tape();
    let xs = x.shape();
    let (th, tw) = target;
    if th < xs.h || tw < xs.w {
        return Err(Error::Invalid {
            op: "bilinear_upsample",
            what: format!("target {th}x{tw} smaller than source {}x{}", xs.h, xs.w),
        });
    }
    let rows = bilinear_axis(xs.h, th);
    let cols = bilinear_axis(xs.w, tw);
    let os = Shape::new(xs.n, xs.c, th, tw);
    let out = tape.with_values(|v| {
        let xd = v.data(x.id());
        let mut out = Vec::with_capacity(os.numel());
        for nc in 0..xs.n * xs.c {
            let base = nc * xs.h * xs.w;
            for &(r0, r1, fr) in &rows {
                let row0 = base + r0 * xs.w;
                let row1 = base + r1 * xs.w;
                for &(c0, c1, fc) in &cols {
                    let top = (1.0 - fc) * xd[row0 + c0] + fc * xd[row0 + c1];
                    let bot = (1.0 - fc) * xd[row1 + c0] + fc * xd[row1 + c1];
                    out.push((1.0 - fr) * top + fr * bot);
                }
            }
        }
        Tensor::from_vec(os, out)
    })?;
    let backward: Option<BackwardFn> = x.needs_grad().then(|| {
        let xi = x.id();
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let xs = v.shape(xi);
            let dx = grads.buf_mut(xi, xs.numel());
            let mut g = 0;
            for nc in 0..xs.n * xs.c {
                let base = nc * xs.h * xs.w;
                for &(r0, r1, fr) in &rows {
                    let row0 = base + r0 * xs.w;
                    let row1 = base + r1 * xs.w;
                    for &(c0, c1, fc) in &cols {
                        let gv = gout[g];
                        g += 1;
                        dx[row0 + c0] += (1.0 - fr) * (1.0 - fc) * gv;
                        dx[row0 + c1] += (1.0 - fr) * fc * gv;
                        dx[row1 + c0] += fr * (1.0 - fc) * gv;
                        dx[row1 + c1] += fr * fc * gv;
                    }
                }
            }
        }) as BackwardFn
    });
    Ok(tape.push(out, backward))
}

/// Channel concatenation of two tensors with equal batch and spatial dims.
pub fn concat_channels<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let tape = a.tape();
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            lhs: sa,
            rhs: sb,
        });
    }
    let os = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let area = sa.h * sa.w;
    let out = tape.with_values(|v| {
        let (ad, bd) = (v.data(a.id()), v.data(b.id()));
        let mut out = Vec::with_capacity(os.numel());
        for n in 0..sa.n {
            out.extend_from_slice(&ad[n * sa.c * area..(n + 1) * sa.c * area]);
            out.extend_from_slice(&bd[n * sb.c * area..(n + 1) * sb.c * area]);
        }
        Tensor::from_vec(os, out)
    })?;
    let needs = a.needs_grad() || b.needs_grad();
    let backward: Option<BackwardFn> = needs.then(|| {
        let (ai, bi) = (a.id(), b.id());
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let (sa, sb) = (v.shape(ai), v.shape(bi));
            let area = sa.h * sa.w;
            let stride_out = (sa.c + sb.c) * area;
            if v.tensor(ai).needs_grad() {
                let da = grads.buf_mut(ai, sa.numel());
                for n in 0..sa.n {
                    let src = &gout[n * stride_out..n * stride_out + sa.c * area];
                    for (d, g) in da[n * sa.c * area..(n + 1) * sa.c * area].iter_mut().zip(src) {
                        *d += g;
                    }
                }
            }
            if v.tensor(bi).needs_grad() {
                let db = grads.buf_mut(bi, sb.numel());
                for n in 0..sb.n {
                    let src = &gout[n * stride_out + sa.c * area..(n + 1) * stride_out];
                    for (d, g) in db[n * sb.c * area..(n + 1) * sb.c * area].iter_mut().zip(src) {
                        *d += g;
                    }
                }
            }
        }) as BackwardFn
    });
    Ok(tape.push(out, backward))
}

/// Channel slice `[start, end)`.
pub fn slice_channels(x: Var<'_>, start: usize, end: usize) -> Result<Var<'_>> {
    let tape = x.tape();
    let xs = x.shape();
    if start >= end || end > xs.c {
        return Err(Error::Invalid {
            op: "slice_channels",
            what: format!("range {start}..{end} invalid for {} channels", xs.c),
        });
    }
    let os = Shape::new(xs.n, end - start, xs.h, xs.w);
    let area = xs.h * xs.w;
    let out = tape.with_values(|v| {
        let xd = v.data(x.id());
        let mut out = Vec::with_capacity(os.numel());
        for n in 0..xs.n {
            let base = (n * xs.c + start) * area;
            out.extend_from_slice(&xd[base..base + (end - start) * area]);
        }
        Tensor::from_vec(os, out)
    })?;
    let backward: Option<BackwardFn> = x.needs_grad().then(|| {
        let xi = x.id();
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let xs = v.shape(xi);
            let area = xs.h * xs.w;
            let c_out = end - start;
            let dx = grads.buf_mut(xi, xs.numel());
            for n in 0..xs.n {
                let base = (n * xs.c + start) * area;
                let src = &gout[n * c_out * area..(n + 1) * c_out * area];
                for (d, g) in dx[base..base + c_out * area].iter_mut().zip(src) {
                    *d += g;
                }
            }
        }) as BackwardFn
    });
    Ok(tape.push(out, backward))
}

/// Top-left spatial crop to `(h2, w2)`.
pub fn crop_spatial(x: Var<'_>, h2: usize, w2: usize) -> Result<Var<'_>> {
    let tape = x.tape();
    let xs = x.shape();
    if h2 > xs.h || w2 > xs.w || h2 == 0 || w2 == 0 {
        return Err(Error::Invalid {
            op: "crop_spatial",
            what: format!("crop {h2}x{w2} invalid for input {}x{}", xs.h, xs.w),
        });
    }
    let os = Shape::new(xs.n, xs.c, h2, w2);
    let out = tape.with_values(|v| {
        let xd = v.data(x.id());
        let mut out = Vec::with_capacity(os.numel());
        for nc in 0..xs.n * xs.c {
            let base = nc * xs.h * xs.w;
            for i in 0..h2 {
                out.extend_from_slice(&xd[base + i * xs.w..base + i * xs.w + w2]);
            }
        }
        Tensor::from_vec(os, out)
    })?;
    let backward: Option<BackwardFn> = x.needs_grad().then(|| {
        let xi = x.id();
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let xs = v.shape(xi);
            let dx = grads.buf_mut(xi, xs.numel());
            for nc in 0..xs.n * xs.c {
                let base = nc * xs.h * xs.w;
                let gb = nc * h2 * w2;
                for i in 0..h2 {
                    let row = &gout[gb + i * w2..gb + (i + 1) * w2];
                    for (d, g) in dx[base + i * xs.w..base + i * xs.w + w2].iter_mut().zip(row) {
                        *d += g;
                    }
                }
            }
        }) as BackwardFn
    });
    Ok(tape.push(out, backward))
}

/// Crops a trailing odd row/column so both spatial dims are even.
pub fn crop_to_even(x: Var<'_>) -> Result<Var<'_>> {
    let s = x.shape();
    let (h2, w2) = (s.h - s.h % 2, s.w - s.w % 2);
    if h2 == s.h && w2 == s.w {
        return Ok(x);
    }
    crop_spatial(x, h2, w2)
}

/// Sub-pixel rearrangement `(n, c*r^2, h, w) -> (n, c, h*r, w*r)`.
///
/// Input channel `c*r^2 + dh*r + dw` lands at output offset `(dh, dw)` within
/// each `r x r` cell (pixel-shuffle convention).
pub fn depth_to_space(x: Var<'_>, r: usize) -> Result<Var<'_>> {
    let tape = x.tape();
    let xs = x.shape();
    if r == 0 || xs.c % (r * r) != 0 {
        return Err(Error::Invalid {
            op: "depth_to_space",
            what: format!("channel count {} not divisible by {}", xs.c, r * r),
        });
    }
    let os = Shape::new(xs.n, xs.c / (r * r), xs.h * r, xs.w * r);
    let out = tape.with_values(|v| {
        let xd = v.data(x.id());
        let mut out = vec![0.0f32; os.numel()];
        for n in 0..xs.n {
            for co in 0..os.c {
                for dh in 0..r {
                    for dw in 0..r {
                        let ci = co * r * r + dh * r + dw;
                        let ib = (n * xs.c + ci) * xs.h * xs.w;
                        let ob = (n * os.c + co) * os.h * os.w;
                        for i in 0..xs.h {
                            let irow = ib + i * xs.w;
                            let orow = ob + (i * r + dh) * os.w + dw;
                            for j in 0..xs.w {
                                out[orow + j * r] = xd[irow + j];
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(os, out)
    })?;
    let backward: Option<BackwardFn> = x.needs_grad().then(|| {
        let xi = x.id();
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let xs = v.shape(xi);
            let dx = grads.buf_mut(xi, xs.numel());
            for n in 0..xs.n {
                for co in 0..os.c {
                    for dh in 0..r {
                        for dw in 0..r {
                            let ci = co * r * r + dh * r + dw;
                            let ib = (n * xs.c + ci) * xs.h * xs.w;
                            let ob = (n * os.c + co) * os.h * os.w;
                            for i in 0..xs.h {
                                let irow = ib + i * xs.w;
                                let orow = ob + (i * r + dh) * os.w + dw;
                                for j in 0..xs.w {
                                    dx[irow + j] += gout[orow + j * r];
                                }
                            }
                        }
                    }
                }
            }
        }) as BackwardFn
    });
    Ok(tape.push(out, backward))
}

/// Align-corners-false bilinear resize on a plain tensor (no gradient
/// tracking); used by the synthetic scene generator and previews.
pub fn bilinear_resize_tensor(x: &Tensor, th: usize, tw: usize) -> Tensor {
    let xs = x.shape();
    let rows = bilinear_axis(xs.h, th);
    let cols = bilinear_axis(xs.w, tw);
    let xd = x.data();
    let mut out = Vec::with_capacity(xs.n * xs.c * th * tw);
    for nc in 0..xs.n * xs.c {
        let base = nc * xs.h * xs.w;
        for &(r0, r1, fr) in &rows {
            let row0 = base + r0 * xs.w;
            let row1 = base + r1 * xs.w;
            for &(c0, c1, fc) in &cols {
                let top = (1.0 - fc) * xd[row0 + c0] + fc * xd[row0 + c1];
                let bot = (1.0 - fc) * xd[row1 + c0] + fc * xd[row1 + c1];
                out.push((1.0 - fr) * top + fr * bot);
            }
        }
    }
    Tensor::from_vec(Shape::new(xs.n, xs.c, th, tw), out).expect("resize shape")
}

/// Inverse of [`depth_to_space`] on plain tensors (test and tooling helper).
pub fn space_to_depth_tensor(x: &Tensor, r: usize) -> Result<Tensor> {
    let xs = x.shape();
    if r == 0 || xs.h % r != 0 || xs.w % r != 0 {
        return Err(Error::Invalid {
            op: "space_to_depth",
            what: format!("spatial dims {}x{} not divisible by {r}", xs.h, xs.w),
        });
    }
    let os = Shape::new(xs.n, xs.c * r * r, xs.h / r, xs.w / r);
    let mut out = Tensor::zeros(os);
    for n in 0..xs.n {
        for c in 0..xs.c {
            for i in 0..os.h {
                for j in 0..os.w {
                    for dh in 0..r {
                        for dw in 0..r {
                            let co = c * r * r + dh * r + dw;
                            let v = x.at(n, c, i * r + dh, j * r + dw);
                            out.set(n, co, i, j, v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Leaky ReLU: `x` if `x >= 0`, else `slope * x`. The gradient at exactly 0
/// uses the positive branch.
pub fn leaky_relu(x: Var<'_>, slope: f32) -> Result<Var<'_>> {
    if !(0.0..1.0).contains(&slope) {
        return Err(Error::Invalid {
            op: "leaky_relu",
            what: format!("slope must be in [0,1), got {slope}"),
        });
    }
    let tape = x.tape();
    let out = tape.with_values(|v| {
        let data = v
            .data(x.id())
            .iter()
            .map(|&x| if x >= 0.0 { x } else { slope * x })
            .collect();
        Tensor::from_vec(v.shape(x.id()), data).expect("leaky_relu shape")
    });
    let backward: Option<BackwardFn> = x.needs_grad().then(|| {
        let xi = x.id();
        Box::new(move |v: &Values<'_>, gout: &[f32], grads: &mut Grads| {
            let xd = v.data(xi);
            let dx = grads.buf_mut(xi, xd.len());
            for i in 0..xd.len() {
                dx[i] += gout[i] * if xd[i] >= 0.0 { 1.0 } else { slope };
            }
        }) as BackwardFn
    });
    Ok(tape.push(out, backward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::rng::Rng;
    use crate::tape::{sum, Tape};

    fn random_tensor(rng: &mut Rng, shape: Shape) -> Tensor {
        Tensor::from_fn(shape, |_, _, _, _| rng.next_f32() * 2.0 - 1.0)
    }

    #[test]
    fn conv1x1_identity_weights_reproduce_input() {
        let tape = Tape::new();
        let mut rng = Rng::new(3);
        let x = tape.leaf(random_tensor(&mut rng, Shape::new(1, 3, 4, 4)));
        // identity weight matrix: w[oc][ic] = 1 if oc == ic
        let w = tape.leaf(Tensor::from_fn(Shape::new(3, 3, 1, 1), |oc, ic, _, _| {
            if oc == ic {
                1.0
            } else {
                0.0
            }
        }));
        let b = tape.leaf(Tensor::zeros(Shape::new(1, 3, 1, 1)));
        let spec = Conv2dSpec::k1(3, 3);
        let y = conv2d(x, w, Some(b), &spec).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn conv_param_count_closed_form() {
        assert_eq!(Conv2dSpec::k3(4, 32, 1).param_count(), 4 * 32 * 9 + 32);
        assert_eq!(Conv2dSpec::k3(4, 32, 1).param_count(), 1184);
        let no_bias = Conv2dSpec {
            bias: false,
            ..Conv2dSpec::k3(4, 32, 1)
        };
        assert_eq!(no_bias.param_count(), 1152);
    }

    #[test]
    fn dilated_same_padding_preserves_spatial_dims() {
        let spec = Conv2dSpec::k3(2, 2, 2);
        assert_eq!(spec.padding_amount().unwrap(), (2, 2));
        assert_eq!(spec.out_dims(7, 9).unwrap(), (7, 9));
        let tape = Tape::new();
        let mut rng = Rng::new(11);
        let x = tape.leaf(random_tensor(&mut rng, Shape::new(1, 2, 7, 9)));
        let w = tape.leaf(random_tensor(&mut rng, Shape::new(2, 2, 3, 3)));
        let y = conv2d(x, w, None, &spec).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 7, 9));
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_even_same_kernel() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 3, 4, 4)));
        let w = tape.leaf(Tensor::zeros(Shape::new(2, 2, 3, 3)));
        let spec = Conv2dSpec::k3(2, 2, 1);
        assert!(matches!(
            conv2d(x, w, None, &spec),
            Err(Error::ChannelMismatch { .. })
        ));
        let even = Conv2dSpec {
            kernel: (2, 2),
            ..Conv2dSpec::k3(3, 2, 1)
        };
        let w2 = tape.leaf(Tensor::zeros(Shape::new(2, 3, 2, 2)));
        assert!(conv2d(x, w2, None, &even).is_err());
    }

    /// Brute-force convolution over explicit padded input, as an oracle.
    fn conv_naive(x: &Tensor, w: &Tensor, spec: &Conv2dSpec) -> Tensor {
        let xs = x.shape();
        let (ph, pw) = spec.padding_amount().unwrap();
        let (oh, ow) = spec.out_dims(xs.h, xs.w).unwrap();
        Tensor::from_fn(Shape::new(xs.n, spec.out_ch, oh, ow), |n, oc, i, j| {
            let mut acc = 0.0;
            for ic in 0..spec.in_ch {
                for ki in 0..spec.kernel.0 {
                    for kj in 0..spec.kernel.1 {
                        let ih = (i * spec.stride.0 + ki * spec.dilation) as isize - ph as isize;
                        let iw = (j * spec.stride.1 + kj * spec.dilation) as isize - pw as isize;
                        if ih >= 0 && iw >= 0 && (ih as usize) < xs.h && (iw as usize) < xs.w {
                            acc += x.at(n, ic, ih as usize, iw as usize) * w.at(oc, ic, ki, kj);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_forward_matches_naive_oracle() {
        let mut rng = Rng::new(17);
        for &(dilation, stride) in &[(1usize, 1usize), (2, 1), (1, 2)] {
            let spec = Conv2dSpec {
                in_ch: 3,
                out_ch: 2,
                kernel: (3, 3),
                stride: (stride, stride),
                dilation,
                padding: if stride == 1 {
                    Padding::Same
                } else {
                    Padding::Explicit(1)
                },
                bias: false,
            };
            let tape = Tape::new();
            let xt = random_tensor(&mut rng, Shape::new(2, 3, 6, 8));
            let wt = random_tensor(&mut rng, Shape::new(2, 3, 3, 3));
            let x = tape.leaf(xt.clone());
            let w = tape.leaf(wt.clone());
            let y = conv2d(x, w, None, &spec).unwrap().value();
            let oracle = conv_naive(&xt, &wt, &spec);
            assert_eq!(y.shape(), oracle.shape());
            for (a, b) in y.data().iter().zip(oracle.data()) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_gradients_match_central_differences() {
        let mut rng = Rng::new(23);
        let xt = random_tensor(&mut rng, Shape::new(1, 2, 4, 4)).requires_grad(true);
        let wt = random_tensor(&mut rng, Shape::new(2, 2, 3, 3)).requires_grad(true);
        let bt = random_tensor(&mut rng, Shape::new(1, 2, 1, 1)).requires_grad(true);
        let spec = Conv2dSpec::k3(2, 2, 1);

        let f = |inputs: &[Tensor]| {
            let tape = Tape::new();
            let x = tape.leaf(inputs[0].clone());
            let w = tape.leaf(inputs[1].clone());
            let b = tape.leaf(inputs[2].clone());
            let y = conv2d(x, w, Some(b), &spec).unwrap();
            sum(y * y).item().unwrap()
        };

        let tape = Tape::new();
        let (x, w, b) = (tape.leaf(xt.clone()), tape.leaf(wt.clone()), tape.leaf(bt.clone()));
        let y = conv2d(x, w, Some(b), &spec).unwrap();
        sum(y * y).backward().unwrap();

        let inputs = [xt, wt, bt];
        let analytic = [x.grad().unwrap(), w.grad().unwrap(), b.grad().unwrap()];
        gradcheck::check_all(&inputs, &analytic, 1e-2, 1e-2, 1e-3, &f).unwrap();
    }

    #[test]
    fn transposed_conv_doubles_spatial_dims() {
        let tape = Tape::new();
        let mut rng = Rng::new(5);
        let x = tape.leaf(random_tensor(&mut rng, Shape::new(1, 2, 3, 3)));
        let w = tape.leaf(random_tensor(&mut rng, Shape::new(2, 4, 2, 2)));
        let spec = Conv2dSpec {
            in_ch: 2,
            out_ch: 4,
            kernel: (2, 2),
            stride: (2, 2),
            dilation: 1,
            padding: Padding::Explicit(0),
            bias: false,
        };
        let y = conv2d_transposed(x, w, None, &spec).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 6, 6));

        let bad = Conv2dSpec {
            kernel: (3, 3),
            ..spec
        };
        assert!(conv2d_transposed(x, w, None, &bad).is_err());
    }

    #[test]
    fn transposed_conv_zero_weights_give_bias_only() {
        let tape = Tape::new();
        let mut rng = Rng::new(6);
        let x = tape.leaf(random_tensor(&mut rng, Shape::new(1, 2, 3, 3)));
        let w = tape.leaf(Tensor::zeros(Shape::new(2, 3, 2, 2)));
        let b = tape.leaf(Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![0.5, -1.0, 2.0]).unwrap());
        let spec = Conv2dSpec {
            in_ch: 2,
            out_ch: 3,
            kernel: (2, 2),
            stride: (2, 2),
            dilation: 1,
            padding: Padding::Explicit(0),
            bias: true,
        };
        let y = conv2d_transposed(x, w, Some(b), &spec).unwrap().value();
        for c in 0..3 {
            let expect = [0.5, -1.0, 2.0][c];
            for i in 0..6 {
                for j in 0..6 {
                    assert_eq!(y.at(0, c, i, j), expect);
                }
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_strided_conv() {
        // <conv_T(x; W), y> == <x, conv_s2(y; W)> with shared weights.
        let mut rng = Rng::new(31);
        let xt = random_tensor(&mut rng, Shape::new(1, 3, 4, 5));
        let wt = random_tensor(&mut rng, Shape::new(3, 2, 2, 2)); // (in, out, 2, 2)
        let yt = random_tensor(&mut rng, Shape::new(1, 2, 8, 10));

        let up_spec = Conv2dSpec {
            in_ch: 3,
            out_ch: 2,
            kernel: (2, 2),
            stride: (2, 2),
            dilation: 1,
            padding: Padding::Explicit(0),
            bias: false,
        };
        let tape = Tape::new();
        let x = tape.leaf(xt.clone());
        let w = tape.leaf(wt.clone());
        let up = conv2d_transposed(x, w, None, &up_spec).unwrap().value();
        let lhs: f64 = up
            .data()
            .iter()
            .zip(yt.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();

        // Adjoint direction: stride-2 conv of y with transposed weight layout.
        let down_spec = Conv2dSpec {
            in_ch: 2,
            out_ch: 3,
            kernel: (2, 2),
            stride: (2, 2),
            dilation: 1,
            padding: Padding::Explicit(0),
            bias: false,
        };
        let w_down = Tensor::from_fn(Shape::new(3, 2, 2, 2), |oc, ic, ki, kj| wt.at(oc, ic, ki, kj));
        let tape2 = Tape::new();
        let y = tape2.leaf(yt.clone());
        let wd = tape2.leaf(w_down);
        let down = conv2d(y, wd, None, &down_spec).unwrap().value();
        let rhs: f64 = down
            .data()
            .iter()
            .zip(xt.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();

        assert!(
            (lhs - rhs).abs() < 1e-4 * lhs.abs().max(1.0),
            "lhs {lhs} rhs {rhs}"
        );
    }

    #[test]
    fn maxpool_matches_brute_force_scan() {
        let mut rng = Rng::new(41);
        let xt = random_tensor(&mut rng, Shape::new(1, 2, 8, 8));
        let tape = Tape::new();
        let y = maxpool2x2(tape.leaf(xt.clone())).unwrap().value();
        for c in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let mut best = f32::NEG_INFINITY;
                    for di in 0..2 {
                        for dj in 0..2 {
                            best = best.max(xt.at(0, c, 2 * i + di, 2 * j + dj));
                        }
                    }
                    assert_eq!(y.at(0, c, i, j), best);
                }
            }
        }
    }

    #[test]
    fn maxpool_simple_and_tie_break() {
        let tape = Tape::new();
        let x = tape.leaf(
            Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0])
                .unwrap()
                .requires_grad(true),
        );
        let y = maxpool2x2(x).unwrap();
        assert_eq!(y.value().data(), &[4.0]);

        // constant input: gradient routes to the top-left of each window
        let tape2 = Tape::new();
        let c = tape2.leaf(Tensor::full(Shape::new(1, 1, 4, 4), 2.5).requires_grad(true));
        let p = maxpool2x2(c).unwrap();
        assert_eq!(p.value().data(), &[2.5; 4]);
        sum(p).backward().unwrap();
        let g = c.grad().unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i % 2 == 0 && j % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(g.at(0, 0, i, j), expect);
            }
        }
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 3, 4)));
        assert!(maxpool2x2(x).is_err());
    }

    #[test]
    fn global_avg_pool_examples() {
        let tape = Tape::new();
        let c = tape.leaf(Tensor::full(Shape::new(1, 3, 5, 7), 0.37));
        let y = global_avg_pool(c).unwrap().value();
        for v in y.data() {
            assert!((v - 0.37).abs() < 1e-6);
        }

        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(global_avg_pool(x).unwrap().value().data(), &[2.5]);

        let big = tape.leaf(Tensor::zeros(Shape::new(2, 512, 16, 16)));
        assert_eq!(
            global_avg_pool(big).unwrap().shape(),
            Shape::new(2, 512, 1, 1)
        );
    }

    #[test]
    fn bilinear_broadcast_from_1x1() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.7, -0.2]).unwrap());
        let y = bilinear_upsample(x, (5, 6)).unwrap().value();
        for i in 0..5 {
            for j in 0..6 {
                assert_eq!(y.at(0, 0, i, j), 0.7);
                assert_eq!(y.at(0, 1, i, j), -0.2);
            }
        }
    }

    #[test]
    fn bilinear_2x2_to_4x4_hand_weights() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 0.0, 1.0]).unwrap());
        let y = bilinear_upsample(x, (4, 4)).unwrap().value();
        let expect_row = [0.0, 0.25, 0.75, 1.0];
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (y.at(0, 0, i, j) - expect_row[j]).abs() < 1e-6,
                    "row {i} col {j}: {}",
                    y.at(0, 0, i, j)
                );
            }
        }
    }

    #[test]
    fn bilinear_same_size_is_identity() {
        let tape = Tape::new();
        let mut rng = Rng::new(9);
        let xt = random_tensor(&mut rng, Shape::new(1, 2, 3, 5));
        let x = tape.leaf(xt.clone());
        let y = bilinear_upsample(x, (3, 5)).unwrap().value();
        for (a, b) in xt.data().iter().zip(y.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(bilinear_upsample(x, (2, 5)).is_err());
    }

    #[test]
    fn concat_then_slice_recovers_inputs() {
        let tape = Tape::new();
        let mut rng = Rng::new(13);
        let at = random_tensor(&mut rng, Shape::new(2, 2, 4, 4));
        let bt = random_tensor(&mut rng, Shape::new(2, 3, 4, 4));
        let a = tape.leaf(at.clone());
        let b = tape.leaf(bt.clone());
        let cat = concat_channels(a, b).unwrap();
        assert_eq!(cat.shape(), Shape::new(2, 5, 4, 4));
        let a2 = slice_channels(cat, 0, 2).unwrap().value();
        let b2 = slice_channels(cat, 2, 5).unwrap().value();
        assert_eq!(a2.data(), at.data());
        assert_eq!(b2.data(), bt.data());

        let bad = tape.leaf(Tensor::zeros(Shape::new(2, 3, 5, 4)));
        assert!(concat_channels(a, bad).is_err());
    }

    #[test]
    fn concat_bottleneck_shape_case() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(Shape::new(1, 512, 16, 16)));
        let b = tape.leaf(Tensor::zeros(Shape::new(1, 256, 16, 16)));
        assert_eq!(
            concat_channels(a, b).unwrap().shape(),
            Shape::new(1, 768, 16, 16)
        );
    }

    #[test]
    fn depth_to_space_shapes_and_inverse() {
        let tape = Tape::new();
        let mut rng = Rng::new(19);
        let xt = random_tensor(&mut rng, Shape::new(1, 12, 4, 4));
        let y = depth_to_space(tape.leaf(xt.clone()), 2).unwrap().value();
        assert_eq!(y.shape(), Shape::new(1, 3, 8, 8));
        let back = space_to_depth_tensor(&y, 2).unwrap();
        assert_eq!(back.data(), xt.data());

        let xt3 = random_tensor(&mut rng, Shape::new(1, 27, 2, 2));
        let y3 = depth_to_space(tape.leaf(xt3.clone()), 3).unwrap().value();
        assert_eq!(y3.shape(), Shape::new(1, 3, 6, 6));
        assert_eq!(space_to_depth_tensor(&y3, 3).unwrap().data(), xt3.data());

        let bad = tape.leaf(Tensor::zeros(Shape::new(1, 10, 2, 2)));
        assert!(depth_to_space(bad, 2).is_err());
    }

    #[test]
    fn leaky_relu_values_and_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(
            Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0])
                .unwrap()
                .requires_grad(true),
        );
        let y = leaky_relu(x, 0.2).unwrap();
        let v = y.value();
        assert!((v.data()[0] + 0.2).abs() < 1e-7);
        assert_eq!(v.data()[1], 0.0);
        assert_eq!(v.data()[2], 2.0);
        sum(y).backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.2, 1.0, 1.0]);

        let nonneg = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.5, 3.0]).unwrap());
        let id = leaky_relu(nonneg, 0.2).unwrap().value();
        assert_eq!(id.data(), &[0.5, 3.0]);

        assert!(leaky_relu(x, 1.0).is_err());
    }

    #[test]
    fn pool_upsample_activation_gradients_match_central_differences() {
        let mut rng = Rng::new(47);
        // keep values away from relu kinks and pooling ties
        let xt = Tensor::from_fn(Shape::new(1, 2, 4, 4), |_, c, i, j| {
            0.3 + 0.81 * ((c * 16 + i * 4 + j) as f32 * 0.37).sin() + 0.01 * rng.next_f32()
        })
        .requires_grad(true);

        type Build = for<'t> fn(Var<'t>) -> Var<'t>;
        let cases: Vec<(&str, Build)> = vec![
            ("maxpool", |x| maxpool2x2(x).unwrap()),
            ("avgpool", |x| avg_pool2x2(x).unwrap()),
            ("gap", |x| global_avg_pool(x).unwrap()),
            ("bilinear", |x| bilinear_upsample(x, (7, 9)).unwrap()),
            ("lrelu", |x| leaky_relu(x, 0.2).unwrap()),
            ("d2s", |x| depth_to_space(x, 1).unwrap()),
            ("crop", |x| crop_spatial(x, 3, 2).unwrap()),
            ("slice", |x| slice_channels(x, 1, 2).unwrap()),
        ];
        for (name, build) in cases {
            let f = move |inputs: &[Tensor]| {
                let tape = Tape::new();
                let x = tape.leaf(inputs[0].clone());
                let y = build(x);
                sum(y * y).item().unwrap()
            };
            let tape = Tape::new();
            let x = tape.leaf(xt.clone());
            let y = build(x);
            sum(y * y).backward().unwrap();
            let analytic = [x.grad().unwrap()];
            gradcheck::check_all(&[xt.clone()], &analytic, 1e-3, 1e-2, 1e-3, &f)
                .unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
