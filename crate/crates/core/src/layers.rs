//! Layer primitives with explicit forward and backward passes.
//!
//! Layers hold indices into the owning network's [`ParamSet`]; backward passes
//! accumulate into an aligned [`Grads`] when one is supplied and return the
//! input gradient only when asked, so frozen sub-networks can be traversed
//! without touching their parameter gradients.

use rand::Rng;

use crate::tensor::{gemm, Grads, ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    weight: usize,
    bias: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        gain: f32,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = params.add_he(
            format!("{name}.weight"),
            vec![out_ch, in_ch, kernel, kernel],
            fan_in,
            gain,
            rng,
        );
        let bias = params.zeros(format!("{name}.bias"), vec![out_ch]);
        Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weight,
            bias,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `[lo, hi)` whose input column `ox * stride + kj - pad` is in bounds.
    fn valid_cols(&self, kj: usize, w: usize, ow: usize) -> (usize, usize) {
        let (s, pad) = (self.stride, self.pad);
        let lo = if kj >= pad { 0 } else { (pad - kj).div_ceil(s) };
        let hi = if w + pad > kj { ((w + pad - kj - 1) / s + 1).min(ow) } else { 0 };
        (lo.min(hi), hi)
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, oh: usize, ow: usize, col: &mut [f32]) {
        let (k, s, pad) = (self.kernel, self.stride, self.pad);
        let p = oh * ow;
        let mut row = 0;
        for ci in 0..self.in_ch {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let (lo, hi) = self.valid_cols(kj, w, ow);
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        let iy = oy * s + ki;
                        if iy < pad || iy - pad >= h {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[(iy - pad) * w..(iy - pad + 1) * w];
                        out_row[..lo].fill(0.0);
                        out_row[hi..].fill(0.0);
                        if lo < hi {
                            let start = lo * s + kj - pad;
                            if s == 1 {
                                out_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                            } else {
                                for (o, v) in out_row[lo..hi].iter_mut().zip(src[start..].iter().step_by(s)) {
                                    *o = *v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], h: usize, w: usize, oh: usize, ow: usize, x: &mut [f32]) {
        let (k, s, pad) = (self.kernel, self.stride, self.pad);
        let p = oh * ow;
        let mut row = 0;
        for ci in 0..self.in_ch {
            let plane = &mut x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let (lo, hi) = self.valid_cols(kj, w, ow);
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = oy * s + ki;
                        if iy < pad || iy - pad >= h || lo >= hi {
                            continue;
                        }
                        let dst = &mut plane[(iy - pad) * w..(iy - pad + 1) * w];
                        let start = lo * s + kj - pad;
                        let vals = &src[oy * ow + lo..oy * ow + hi];
                        if s == 1 {
                            for (d, v) in dst[start..start + hi - lo].iter_mut().zip(vals) {
                                *d += *v;
                            }
                        } else {
                            for (d, v) in dst[start..].iter_mut().step_by(s).zip(vals) {
                                *d += *v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (oh, ow) = self.out_size(x.h, x.w);
        let (kk, p) = (self.in_ch * self.kernel * self.kernel, oh * ow);
        let weight = params.get(self.weight);
        let bias = params.get(self.bias);
        let mut out = Tensor::zeros(x.n, self.out_ch, oh, ow);
        let mut col = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; kk * p]
        };
        for i in 0..x.n {
            let xs = x.sample(i);
            let cols: &[f32] = if self.is_pointwise() {
                xs
            } else {
                self.im2col(xs, x.h, x.w, oh, ow, &mut col);
                &col
            };
            let ys = out.sample_mut(i);
            for (o, b) in bias.iter().enumerate() {
                ys[o * p..(o + 1) * p].fill(*b);
            }
            gemm(self.out_ch, kk, p, weight, kk, 1, cols, p, 1, 1.0, ys, p);
        }
        out
    }

    /// Accumulates parameter gradients into `grads` (if given) and returns the
    /// input gradient when `need_input` is set.
    pub fn backward(
        &self,
        params: &ParamSet,
        x: &Tensor,
        grad_out: &Tensor,
        mut grads: Option<&mut Grads>,
        need_input: bool,
    ) -> Option<Tensor> {
        let (oh, ow) = (grad_out.h, grad_out.w);
        let (kk, p) = (self.in_ch * self.kernel * self.kernel, oh * ow);
        let weight = params.get(self.weight);
        let mut gx = need_input.then(|| x.zeros_like());
        let mut col = vec![0.0; kk * p];
        for i in 0..x.n {
            let gy = grad_out.sample(i);
            if let Some(g) = grads.as_deref_mut() {
                let cols: &[f32] = if self.is_pointwise() {
                    x.sample(i)
                } else {
                    self.im2col(x.sample(i), x.h, x.w, oh, ow, &mut col);
                    &col
                };
                gemm(self.out_ch, p, kk, gy, p, 1, cols, 1, p, 1.0, g.get_mut(self.weight), kk);
                let gb = g.get_mut(self.bias);
                for (o, b) in gb.iter_mut().enumerate() {
                    *b += gy[o * p..(o + 1) * p].iter().sum::<f32>();
                }
            }
            if let Some(gx) = gx.as_mut() {
                let gxs = gx.sample_mut(i);
                if self.is_pointwise() {
                    gemm(kk, self.out_ch, p, weight, 1, kk, gy, p, 1, 0.0, gxs, p);
                } else {
                    gemm(kk, self.out_ch, p, weight, 1, kk, gy, p, 1, 0.0, &mut col, p);
                    self.col2im(&col, x.h, x.w, oh, ow, gxs);
                }
            }
        }
        gx
    }
}

/// Fully connected layer over `[n, in, 1, 1]` tensors; weight is `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    weight: usize,
    bias: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_features: usize,
        out_features: usize,
        gain: f32,
        rng: &mut R,
    ) -> Self {
        let weight = params.add_he(
            format!("{name}.weight"),
            vec![out_features, in_features],
            in_features,
            gain,
            rng,
        );
        let bias = params.zeros(format!("{name}.bias"), vec![out_features]);
        Linear {
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Tensor {
        assert_eq!(x.sample_len(), self.in_features, "linear input width");
        let (n, i, o) = (x.n, self.in_features, self.out_features);
        let mut y = Tensor::zeros(n, o, 1, 1);
        let bias = params.get(self.bias);
        for row in y.data.chunks_mut(o) {
            row.copy_from_slice(bias);
        }
        gemm(n, i, o, &x.data, i, 1, params.get(self.weight), 1, i, 1.0, &mut y.data, o);
        y
    }

    pub fn backward(
        &self,
        params: &ParamSet,
        x: &Tensor,
        grad_out: &Tensor,
        grads: Option<&mut Grads>,
        need_input: bool,
    ) -> Option<Tensor> {
        let (n, i, o) = (x.n, self.in_features, self.out_features);
        if let Some(g) = grads {
            gemm(o, n, i, &grad_out.data, 1, o, &x.data, i, 1, 1.0, g.get_mut(self.weight), i);
            let gb = g.get_mut(self.bias);
            for row in grad_out.data.chunks(o) {
                for (b, v) in gb.iter_mut().zip(row) {
                    *b += v;
                }
            }
        }
        need_input.then(|| {
            let mut gx = Tensor::zeros(x.n, x.c, x.h, x.w);
            gemm(n, o, i, &grad_out.data, o, 1, params.get(self.weight), i, 1, 0.0, &mut gx.data, i);
            gx
        })
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, yv) in g.data.iter_mut().zip(&y.data) {
        if *yv <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
    y
}

/// Gradient through a sigmoid given its output.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, yv) in g.data.iter_mut().zip(&y.data) {
        *gv *= yv * (1.0 - yv);
    }
    g
}

pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let hw = x.h * x.w;
    let data = x
        .data
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f32>() / hw as f32)
        .collect();
    Tensor::from_vec(x.n, x.c, 1, 1, data)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, h: usize, w: usize) -> Tensor {
    let hw = h * w;
    let mut g = Tensor::zeros(grad_out.n, grad_out.c, h, w);
    for (plane, v) in g.data.chunks_mut(hw).zip(&grad_out.data) {
        plane.fill(v / hw as f32);
    }
    g
}

pub fn upsample_nearest2x(x: &Tensor) -> Tensor {
    let (h, w) = (x.h, x.w);
    let mut y = Tensor::zeros(x.n, x.c, 2 * h, 2 * w);
    for (src, dst) in x.data.chunks(h * w).zip(y.data.chunks_mut(4 * h * w)) {
        for r in 0..2 * h {
            let s = &src[(r / 2) * w..(r / 2 + 1) * w];
            let d = &mut dst[r * 2 * w..(r + 1) * 2 * w];
            for (c, v) in d.iter_mut().enumerate() {
                *v = s[c / 2];
            }
        }
    }
    y
}

pub fn upsample_nearest2x_backward(grad_out: &Tensor) -> Tensor {
    let (h, w) = (grad_out.h / 2, grad_out.w / 2);
    let mut g = Tensor::zeros(grad_out.n, grad_out.c, h, w);
    for (src, dst) in grad_out.data.chunks(4 * h * w).zip(g.data.chunks_mut(h * w)) {
        for r in 0..2 * h {
            for c in 0..2 * w {
                dst[(r / 2) * w + c / 2] += src[r * 2 * w + c];
            }
        }
    }
    g
}

/// 3x3 max pooling, stride 2, padding 1 (padding never wins).
pub fn max_pool(x: &Tensor) -> Tensor {
    let (oh, ow) = ((x.h - 1) / 2 + 1, (x.w - 1) / 2 + 1);
    let mut y = Tensor::zeros(x.n, x.c, oh, ow);
    for (src, dst) in x.data.chunks(x.h * x.w).zip(y.data.chunks_mut(oh * ow)) {
        for oy in 0..oh {
            for ox in 0..ow {
                dst[oy * ow + ox] = src[pool_argmax(src, x.h, x.w, oy, ox)];
            }
        }
    }
    y
}

pub fn max_pool_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let (oh, ow) = (grad_out.h, grad_out.w);
    let mut g = x.zeros_like();
    let planes = x.data.chunks(x.h * x.w).zip(grad_out.data.chunks(oh * ow));
    for ((src, gsrc), gdst) in planes.zip(g.data.chunks_mut(x.h * x.w)) {
        for oy in 0..oh {
            for ox in 0..ow {
                gdst[pool_argmax(src, x.h, x.w, oy, ox)] += gsrc[oy * ow + ox];
            }
        }
    }
    g
}

fn pool_argmax(plane: &[f32], h: usize, w: usize, oy: usize, ox: usize) -> usize {
    let mut best = usize::MAX;
    for dy in 0..3 {
        let iy = (oy * 2 + dy) as isize - 1;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for dx in 0..3 {
            let ix = (ox * 2 + dx) as isize - 1;
            if ix < 0 || ix >= w as isize {
                continue;
            }
            let idx = iy as usize * w + ix as usize;
            if best == usize::MAX || plane[idx] > plane[best] {
                best = idx;
            }
        }
    }
    best
}
