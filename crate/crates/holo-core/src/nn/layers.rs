//! Layer primitives with hand-written backward passes.
//!
//! Convolutions are "valid" (callers pad explicitly); downsampling layers use
//! stride 2 after padding odd axes to even, transposed convolutions double
//! every axis and are cropped back to the recorded encoder dims.

use super::tensor::Tensor;
use super::Scalar;
use crate::par;

/// 3D convolution parameters. Weight layout is
/// `(co, ci, kz, ky, kx)` for normal and `(ci, co, kz, ky, kx)` for
/// transposed convolutions; one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub ci: usize,
    pub co: usize,
    pub k: [usize; 3],
    pub stride: usize,
    pub transposed: bool,
}

impl<T: Scalar> Conv3d<T> {
    pub fn zeros(ci: usize, co: usize, k: [usize; 3], stride: usize, transposed: bool) -> Self {
        Self {
            w: vec![T::zero(); ci * co * k[0] * k[1] * k[2]],
            b: vec![T::zero(); co],
            ci,
            co,
            k,
            stride,
            transposed,
        }
    }

    pub fn kernel_volume(&self) -> usize {
        self.k[0] * self.k[1] * self.k[2]
    }

    pub fn map<U: Scalar>(&self) -> Conv3d<U> {
        Conv3d {
            w: self.w.iter().map(|v| U::from_f64_c(v.to_f64_c())).collect(),
            b: self.b.iter().map(|v| U::from_f64_c(v.to_f64_c())).collect(),
            ci: self.ci,
            co: self.co,
            k: self.k,
            stride: self.stride,
            transposed: self.transposed,
        }
    }

    pub fn out_dims(&self, din: [usize; 3]) -> [usize; 3] {
        let s = self.stride;
        if self.transposed {
            [
                (din[0] - 1) * s + self.k[0],
                (din[1] - 1) * s + self.k[1],
                (din[2] - 1) * s + self.k[2],
            ]
        } else {
            [
                (din[0] - self.k[0]) / s + 1,
                (din[1] - self.k[1]) / s + 1,
                (din[2] - self.k[2]) / s + 1,
            ]
        }
    }
}

/// Gradients for one convolution layer.
#[derive(Debug, Clone)]
pub struct ConvGrad<T> {
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

impl<T: Scalar> ConvGrad<T> {
    pub fn zeros_like(l: &Conv3d<T>) -> Self {
        Self {
            dw: vec![T::zero(); l.w.len()],
            db: vec![T::zero(); l.b.len()],
        }
    }

    pub fn accumulate(&mut self, other: &ConvGrad<T>) {
        for (a, &b) in self.dw.iter_mut().zip(other.dw.iter()) {
            *a = *a + b;
        }
        for (a, &b) in self.db.iter_mut().zip(other.db.iter()) {
            *a = *a + b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in self.dw.iter_mut() {
            *v = *v * s;
        }
        for v in self.db.iter_mut() {
            *v = *v * s;
        }
    }
}

pub fn conv3d_forward<T: Scalar>(l: &Conv3d<T>, x: &Tensor<T>) -> Tensor<T> {
    assert_eq!(x.c, l.ci, "conv input channels");
    if l.transposed {
        return conv3d_transposed_forward(l, x);
    }
    let [kd, kh, kw] = l.k;
    let s = l.stride;
    let [od, oh, ow] = l.out_dims(x.spatial());
    let (h, w) = (x.h, x.w);
    let mut out = Tensor::zeros(l.co, od, oh, ow);
    let plane_out = od * oh * ow;
    par::for_each_chunk_mut(&mut out.data, plane_out, |o, out_ch| {
        out_ch.fill(l.b[o]);
        for i in 0..l.ci {
            let x_ch = x.channel(i);
            for a in 0..kd {
                for bk in 0..kh {
                    for c in 0..kw {
                        let wv = l.w[(((o * l.ci + i) * kd + a) * kh + bk) * kw + c];
                        for oz in 0..od {
                            let iz = oz * s + a;
                            for oy in 0..oh {
                                let iy = oy * s + bk;
                                let ob = (oz * oh + oy) * ow;
                                let xb = (iz * h + iy) * w + c;
                                if s == 1 {
                                    let orow = &mut out_ch[ob..ob + ow];
                                    let xrow = &x_ch[xb..xb + ow];
                                    for (ov, &xv) in orow.iter_mut().zip(xrow.iter()) {
                                        *ov = *ov + wv * xv;
                                    }
                                } else {
                                    for ox in 0..ow {
                                        out_ch[ob + ox] = out_ch[ob + ox] + wv * x_ch[xb + ox * s];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv3d_transposed_forward<T: Scalar>(l: &Conv3d<T>, x: &Tensor<T>) -> Tensor<T> {
    let [kd, kh, kw] = l.k;
    let s = l.stride;
    let [od, oh, ow] = l.out_dims(x.spatial());
    let (d, h, w) = (x.d, x.h, x.w);
    let mut out = Tensor::zeros(l.co, od, oh, ow);
    let plane_out = od * oh * ow;
    par::for_each_chunk_mut(&mut out.data, plane_out, |o, out_ch| {
        out_ch.fill(l.b[o]);
        for i in 0..l.ci {
            let x_ch = x.channel(i);
            for a in 0..kd {
                for bk in 0..kh {
                    for c in 0..kw {
                        let wv = l.w[(((i * l.co + o) * kd + a) * kh + bk) * kw + c];
                        for iz in 0..d {
                            let oz = iz * s + a;
                            for iy in 0..h {
                                let oy = iy * s + bk;
                                let ob = (oz * oh + oy) * ow + c;
                                let xb = (iz * h + iy) * w;
                                for ix in 0..w {
                                    out_ch[ob + ix * s] = out_ch[ob + ix * s] + wv * x_ch[xb + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Backward pass; returns input gradient and parameter gradients.
pub fn conv3d_backward<T: Scalar>(
    l: &Conv3d<T>,
    x: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, ConvGrad<T>) {
    if l.transposed {
        return conv3d_transposed_backward(l, x, dy);
    }
    let [kd, kh, kw] = l.k;
    let s = l.stride;
    let [od, oh, ow] = dy.spatial();
    let (h, w) = (x.h, x.w);
    let mut grad = ConvGrad::zeros_like(l);

    for (o, db) in grad.db.iter_mut().enumerate() {
        *db = dy.channel(o).iter().copied().sum();
    }

    let kvol = kd * kh * kw;
    par::for_each_chunk_mut(&mut grad.dw, l.ci * kvol, |o, dw_ch| {
        let dy_ch = dy.channel(o);
        for i in 0..l.ci {
            let x_ch = x.channel(i);
            for a in 0..kd {
                for bk in 0..kh {
                    for c in 0..kw {
                        let mut acc = T::zero();
                        for oz in 0..od {
                            let iz = oz * s + a;
                            for oy in 0..oh {
                                let iy = oy * s + bk;
                                let ob = (oz * oh + oy) * ow;
                                let xb = (iz * h + iy) * w + c;
                                if s == 1 {
                                    for ox in 0..ow {
                                        acc = acc + dy_ch[ob + ox] * x_ch[xb + ox];
                                    }
                                } else {
                                    for ox in 0..ow {
                                        acc = acc + dy_ch[ob + ox] * x_ch[xb + ox * s];
                                    }
                                }
                            }
                        }
                        dw_ch[(i * kd + a) * kh * kw + bk * kw + c] = acc;
                    }
                }
            }
        }
    });

    let mut dx = Tensor::zeros(x.c, x.d, x.h, x.w);
    let plane_in = x.plane();
    par::for_each_chunk_mut(&mut dx.data, plane_in, |i, dx_ch| {
        for o in 0..l.co {
            let dy_ch = dy.channel(o);
            for a in 0..kd {
                for bk in 0..kh {
                    for c in 0..kw {
                        let wv = l.w[(((o * l.ci + i) * kd + a) * kh + bk) * kw + c];
                        for oz in 0..od {
                            let iz = oz * s + a;
                            for oy in 0..oh {
                                let iy = oy * s + bk;
                                let ob = (oz * oh + oy) * ow;
                                let xb = (iz * h + iy) * w + c;
                                if s == 1 {
                                    let dxrow = &mut dx_ch[xb..xb + ow];
                                    let dyrow = &dy_ch[ob..ob + ow];
                                    for (dv, &gv) in dxrow.iter_mut().zip(dyrow.iter()) {
                                        *dv = *dv + wv * gv;
                                    }
                                } else {
                                    for ox in 0..ow {
                                        dx_ch[xb + ox * s] = dx_ch[xb + ox * s] + wv * dy_ch[ob + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    (dx, grad)
}

fn conv3d_transposed_backward<T: Scalar>(
    l: &Conv3d<T>,
    x: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, ConvGrad<T>) {
    let [kd, kh, kw] = l.k;
    let s = l.stride;
    let (d, h, w) = (x.d, x.h, x.w);
    let (oh, ow) = (dy.h, dy.w);
    let mut grad = ConvGrad::zeros_like(l);

    for (o, db) in grad.db.iter_mut().enumerate() {
        *db = dy.channel(o).iter().copied().sum();
    }

    let kvol = kd * kh * kw;
    par::for_each_chunk_mut(&mut grad.dw, l.co * kvol, |i, dw_ch| {
        let x_ch = x.channel(i);
        for o in 0..l.co {
            let dy_ch = dy.channel(o);
            for a in 0..kd {
                for bk in 0..kh {
                    for c in 0..kw {
                        let mut acc = T::zero();
                        for iz in 0..d {
                            let oz = iz * s + a;
                            for iy in 0..h {
                                let oy = iy * s + bk;
                                let xb = (iz * h + iy) * w;
                                let ob = (oz * oh + oy) * ow + c;
                                for ix in 0..w {
                                    acc = acc + x_ch[xb + ix] * dy_ch[ob + ix * s];
                                }
                            }
                        }
                        dw_ch[(o * kd + a) * kh * kw + bk * kw + c] = acc;
                    }
                }
            }
        }
    });

    let mut dx = Tensor::zeros(x.c, x.d, x.h, x.w);
    let plane_in = x.plane();
    par::for_each_chunk_mut(&mut dx.data, plane_in, |i, dx_ch| {
        for o in 0..l.co {
            let dy_ch = dy.channel(o);
            for a in 0..kd {
                for bk in 0..kh {
                    for c in 0..kw {
                        let wv = l.w[(((i * l.co + o) * kd + a) * kh + bk) * kw + c];
                        for iz in 0..d {
                            let oz = iz * s + a;
                            for iy in 0..h {
                                let oy = iy * s + bk;
                                let xb = (iz * h + iy) * w;
                                let ob = (oz * oh + oy) * ow + c;
                                for ix in 0..w {
                                    dx_ch[xb + ix] = dx_ch[xb + ix] + wv * dy_ch[ob + ix * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    (dx, grad)
}

/// Zero-pad at the high end of each spatial axis.
pub fn pad_end<T: Scalar>(x: &Tensor<T>, p: [usize; 3]) -> Tensor<T> {
    if p == [0, 0, 0] {
        return x.clone();
    }
    let mut out = Tensor::zeros(x.c, x.d + p[0], x.h + p[1], x.w + p[2]);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for z in 0..x.d {
            for y in 0..x.h {
                let s = (z * x.h + y) * x.w;
                let d = (z * (x.h + p[1]) + y) * (x.w + p[2]);
                dst[d..d + x.w].copy_from_slice(&src[s..s + x.w]);
            }
        }
    }
    out
}

/// Symmetric zero padding of one voxel on every side (for 3^3 convolutions).
pub fn pad_same1<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(x.c, x.d + 2, x.h + 2, x.w + 2);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for z in 0..x.d {
            for y in 0..x.h {
                let s = (z * x.h + y) * x.w;
                let d = ((z + 1) * (x.h + 2) + y + 1) * (x.w + 2) + 1;
                dst[d..d + x.w].copy_from_slice(&src[s..s + x.w]);
            }
        }
    }
    out
}

/// Symmetric one-pixel zero padding on the lateral (h, w) axes only, for
/// 2D 3x3 convolutions expressed as (1, 3, 3) kernels.
pub fn pad_same_yx<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(x.c, x.d, x.h + 2, x.w + 2);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for z in 0..x.d {
            for y in 0..x.h {
                let s = (z * x.h + y) * x.w;
                let d = (z * (x.h + 2) + y + 1) * (x.w + 2) + 1;
                dst[d..d + x.w].copy_from_slice(&src[s..s + x.w]);
            }
        }
    }
    out
}

/// Adjoint of [`pad_same_yx`].
pub fn unpad_same_yx<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h - 2, dy.w - 2);
    let mut out = Tensor::zeros(dy.c, dy.d, h, w);
    for c in 0..dy.c {
        let src = dy.channel(c);
        let dst = out.channel_mut(c);
        for z in 0..dy.d {
            for y in 0..h {
                let s = (z * dy.h + y + 1) * dy.w + 1;
                let d = (z * h + y) * w;
                dst[d..d + w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    out
}

/// Adjoint of [`pad_same1`]: crop one voxel from every side.
pub fn unpad_same1<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (d, h, w) = (dy.d - 2, dy.h - 2, dy.w - 2);
    let mut out = Tensor::zeros(dy.c, d, h, w);
    for c in 0..dy.c {
        let src = dy.channel(c);
        let dst = out.channel_mut(c);
        for z in 0..d {
            for y in 0..h {
                let s = ((z + 1) * dy.h + y + 1) * dy.w + 1;
                let dd = (z * h + y) * w;
                dst[dd..dd + w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    out
}

/// Keep the first `t` entries of each spatial axis.
pub fn crop_to<T: Scalar>(x: &Tensor<T>, t: [usize; 3]) -> Tensor<T> {
    if x.spatial() == t {
        return x.clone();
    }
    let mut out = Tensor::zeros(x.c, t[0], t[1], t[2]);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for z in 0..t[0] {
            for y in 0..t[1] {
                let s = (z * x.h + y) * x.w;
                let d = (z * t[1] + y) * t[2];
                dst[d..d + t[2]].copy_from_slice(&src[s..s + t[2]]);
            }
        }
    }
    out
}

pub fn relu<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Mask a gradient by the forward ReLU output.
pub fn relu_backward<T: Scalar>(dy: &mut Tensor<T>, y: &Tensor<T>) {
    for (g, &v) in dy.data.iter_mut().zip(y.data.iter()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for v in out.data.iter_mut() {
        *v = T::one() / (T::one() + (-*v).exp());
    }
    out
}

pub fn sigmoid_backward<T: Scalar>(dy: &Tensor<T>, y: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &v) in dx.data.iter_mut().zip(y.data.iter()) {
        *g = *g * v * (T::one() - v);
    }
    dx
}

/// 2x2 max pooling (stride 2) over the (h, w) axes of a (c, 1, h, w) tensor.
/// Returns the pooled tensor and per-output argmax offsets within the channel.
pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    assert_eq!(x.d, 1);
    assert!(x.h % 2 == 0 && x.w % 2 == 0, "maxpool needs even dims");
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, 1, oh, ow);
    let mut idx = vec![0u32; x.c * oh * ow];
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (oy * 2 + dy) * x.w + ox * 2 + dx;
                        if src[i] > best {
                            best = src[i];
                            best_i = i;
                        }
                    }
                }
                dst[oy * ow + ox] = best;
                idx[(c * oh + oy) * ow + ox] = best_i as u32;
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward<T: Scalar>(
    dy: &Tensor<T>,
    idx: &[u32],
    in_shape: (usize, usize, usize),
) -> Tensor<T> {
    let (c, h, w) = in_shape;
    let mut dx = Tensor::zeros(c, 1, h, w);
    let plane_out = dy.h * dy.w;
    for ch in 0..c {
        let g = dy.channel(ch);
        let d = dx.channel_mut(ch);
        for j in 0..plane_out {
            let i = idx[ch * plane_out + j] as usize;
            d[i] = d[i] + g[j];
        }
    }
    dx
}

/// Take every `step`-th pixel along both lateral axes (origin kept).
pub fn subsample2d<T: Scalar>(x: &Tensor<T>, step: usize) -> Tensor<T> {
    assert_eq!(x.d, 1);
    assert!(x.h % step == 0 && x.w % step == 0);
    let (oh, ow) = (x.h / step, x.w / step);
    let mut out = Tensor::zeros(x.c, 1, oh, ow);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for oy in 0..oh {
            for ox in 0..ow {
                dst[oy * ow + ox] = src[oy * step * x.w + ox * step];
            }
        }
    }
    out
}

pub fn subsample2d_backward<T: Scalar>(
    dy: &Tensor<T>,
    step: usize,
    in_shape: (usize, usize, usize),
) -> Tensor<T> {
    let (c, h, w) = in_shape;
    let mut dx = Tensor::zeros(c, 1, h, w);
    for ch in 0..c {
        let g = dy.channel(ch);
        let d = dx.channel_mut(ch);
        for oy in 0..dy.h {
            for ox in 0..dy.w {
                d[oy * step * w + ox * step] = g[oy * dy.w + ox];
            }
        }
    }
    dx
}

/// Fully connected layer, weight layout (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub n_in: usize,
    pub n_out: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            w: vec![T::zero(); n_in * n_out],
            b: vec![T::zero(); n_out],
            n_in,
            n_out,
        }
    }

    pub fn map<U: Scalar>(&self) -> Linear<U> {
        Linear {
            w: self.w.iter().map(|v| U::from_f64_c(v.to_f64_c())).collect(),
            b: self.b.iter().map(|v| U::from_f64_c(v.to_f64_c())).collect(),
            n_in: self.n_in,
            n_out: self.n_out,
        }
    }
}

pub fn linear_forward<T: Scalar>(l: &Linear<T>, x: &[T]) -> Vec<T> {
    assert_eq!(x.len(), l.n_in);
    (0..l.n_out)
        .map(|o| {
            let row = &l.w[o * l.n_in..(o + 1) * l.n_in];
            row.iter()
                .zip(x.iter())
                .fold(l.b[o], |acc, (&wv, &xv)| acc + wv * xv)
        })
        .collect()
}

pub fn linear_backward<T: Scalar>(
    l: &Linear<T>,
    x: &[T],
    dy: &[T],
) -> (Vec<T>, ConvGrad<T>) {
    let mut dw = vec![T::zero(); l.w.len()];
    for o in 0..l.n_out {
        let g = dy[o];
        let row = &mut dw[o * l.n_in..(o + 1) * l.n_in];
        for (d, &xv) in row.iter_mut().zip(x.iter()) {
            *d = g * xv;
        }
    }
    let mut dx = vec![T::zero(); l.n_in];
    for o in 0..l.n_out {
        let g = dy[o];
        let row = &l.w[o * l.n_in..(o + 1) * l.n_in];
        for (d, &wv) in dx.iter_mut().zip(row.iter()) {
            *d = *d + wv * g;
        }
    }
    (
        dx,
        ConvGrad {
            dw,
            db: dy.to_vec(),
        },
    )
}

pub fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

pub fn softmax_backward<T: Scalar>(y: &[T], dy: &[T]) -> Vec<T> {
    let inner: T = y.iter().zip(dy.iter()).fold(T::zero(), |a, (&yi, &gi)| a + yi * gi);
    y.iter()
        .zip(dy.iter())
        .map(|(&yi, &gi)| yi * (gi - inner))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(c: usize, d: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor {
            c,
            d,
            h,
            w,
            data: (0..c * d * h * w).map(|_| rng.gen::<f64>() - 0.5).collect(),
        }
    }

    fn rand_conv(ci: usize, co: usize, k: [usize; 3], s: usize, t: bool, rng: &mut ChaCha8Rng) -> Conv3d<f64> {
        let mut l = Conv3d::zeros(ci, co, k, s, t);
        for v in l.w.iter_mut() {
            *v = rng.gen::<f64>() - 0.5;
        }
        for v in l.b.iter_mut() {
            *v = rng.gen::<f64>() - 0.5;
        }
        l
    }

    /// scalar loss used by the finite-difference probes: sum of squares / 2
    fn loss_of(t: &Tensor<f64>) -> f64 {
        t.data.iter().map(|v| v * v).sum::<f64>() / 2.0
    }

    fn check_conv_gradients(l: &mut Conv3d<f64>, x: &mut Tensor<f64>) {
        let y = conv3d_forward(l, x);
        let dy = y.clone(); // dL/dy for L = sum(y^2)/2
        let (dx, grad) = conv3d_backward(l, x, &dy);

        let h = 1e-6;
        let mut worst = 0.0f64;
        for idx in 0..x.data.len() {
            let orig = x.data[idx];
            x.data[idx] = orig + h;
            let lp = loss_of(&conv3d_forward(l, x));
            x.data[idx] = orig - h;
            let lm = loss_of(&conv3d_forward(l, x));
            x.data[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max((fd - dx.data[idx]).abs() / fd.abs().max(1e-6));
        }
        for idx in 0..l.w.len() {
            let orig = l.w[idx];
            l.w[idx] = orig + h;
            let lp = loss_of(&conv3d_forward(l, x));
            l.w[idx] = orig - h;
            let lm = loss_of(&conv3d_forward(l, x));
            l.w[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max((fd - grad.dw[idx]).abs() / fd.abs().max(1e-6));
        }
        for idx in 0..l.b.len() {
            let orig = l.b[idx];
            l.b[idx] = orig + h;
            let lp = loss_of(&conv3d_forward(l, x));
            l.b[idx] = orig - h;
            let lm = loss_of(&conv3d_forward(l, x));
            l.b[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max((fd - grad.db[idx]).abs() / fd.abs().max(1e-6));
        }
        assert!(worst < 1e-6, "finite differences disagree: {worst}");
    }

    #[test]
    fn conv3d_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = rand_conv(2, 3, [3, 3, 3], 1, false, &mut rng);
        let mut x = rand_tensor(2, 4, 5, 6, &mut rng);
        check_conv_gradients(&mut l, &mut x);
    }

    #[test]
    fn strided_conv3d_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut l = rand_conv(2, 4, [2, 2, 2], 2, false, &mut rng);
        let mut x = rand_tensor(2, 4, 6, 6, &mut rng);
        check_conv_gradients(&mut l, &mut x);
    }

    #[test]
    fn transposed_conv3d_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut l = rand_conv(3, 2, [2, 2, 2], 2, true, &mut rng);
        let mut x = rand_tensor(3, 2, 3, 3, &mut rng);
        check_conv_gradients(&mut l, &mut x);
    }

    #[test]
    fn transposed_conv_doubles_dims() {
        let l = Conv3d::<f64>::zeros(1, 1, [2, 2, 2], 2, true);
        assert_eq!(l.out_dims([7, 4, 13]), [14, 8, 26]);
    }

    #[test]
    fn pad_crop_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(2, 3, 3, 3, &mut rng);
        let p = pad_end(&x, [1, 0, 1]);
        assert_eq!(p.spatial(), [4, 3, 4]);
        let back = crop_to(&p, [3, 3, 3]);
        assert_eq!(back.data, x.data);

        let s = pad_same1(&x);
        assert_eq!(s.spatial(), [5, 5, 5]);
        assert_eq!(unpad_same1(&s).data, x.data);
    }

    #[test]
    fn linear_and_softmax_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut l = Linear::zeros(6, 3);
        for v in l.w.iter_mut() {
            *v = rng.gen::<f64>() - 0.5;
        }
        let x: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() - 0.5).collect();
        // L = sum(softmax(Wx+b)[i]^2)/2
        let loss = |l: &Linear<f64>, x: &[f64]| {
            let y = softmax(&linear_forward(l, x));
            y.iter().map(|v| v * v).sum::<f64>() / 2.0
        };
        let y = linear_forward(&l, &x);
        let sm = softmax(&y);
        let dsm: Vec<f64> = sm.clone();
        let dy = softmax_backward(&sm, &dsm);
        let (dx, grad) = linear_backward(&l, &x, &dy);

        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&l, &xp) - loss(&l, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7, "dx[{i}]");
        }
        for i in 0..l.w.len() {
            let orig = l.w[i];
            l.w[i] = orig + h;
            let lp = loss(&l, &x);
            l.w[i] = orig - h;
            let lm = loss(&l, &x);
            l.w[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grad.dw[i]).abs() < 1e-7, "dw[{i}]");
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(2, 1, 4, 4, &mut rng);
        let (y, idx) = maxpool2(&x);
        assert_eq!((y.h, y.w), (2, 2));
        let dy = Tensor::from_data(2, 1, 2, 2, vec![1.0; 8]).unwrap();
        let dx = maxpool2_backward(&dy, &idx, (2, 4, 4));
        // each channel receives exactly 4 units of gradient
        for c in 0..2 {
            let s: f64 = dx.channel(c).iter().sum();
            assert_eq!(s, 4.0);
            // and they sit at the maxima
            for (j, &i) in idx[c * 4..(c + 1) * 4].iter().enumerate() {
                assert_eq!(dx.channel(c)[i as usize], 1.0, "slot {j}");
            }
        }
    }

    #[test]
    fn subsample_picks_every_fourth_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(1, 1, 8, 8, &mut rng);
        let y = subsample2d(&x, 4);
        assert_eq!((y.h, y.w), (2, 2));
        assert_eq!(y.data[0], x.data[0]);
        assert_eq!(y.data[1], x.data[4]);
        assert_eq!(y.data[2], x.data[4 * 8]);
        let dx = subsample2d_backward(&y, 4, (1, 8, 8));
        assert_eq!(dx.data[4], y.data[1]);
        assert_eq!(dx.data[5], 0.0);
    }

    #[test]
    fn relu_and_sigmoid_behave() {
        let mut t = Tensor::from_data(1, 1, 1, 4, vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
        let s = sigmoid(&t);
        for (&v, &x) in s.data.iter().zip(t.data.iter()) {
            assert!((v - 1.0 / (1.0 + (-x as f64).exp())).abs() < 1e-15);
            assert!(v > 0.0 && v < 1.0);
        }
        relu(&mut t);
        assert_eq!(t.data, vec![0.0, 0.0, 0.5, 2.0]);
    }
}
