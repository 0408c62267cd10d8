//! Network building blocks: 3x3 convolution, dense layer, and the
//! parameter-free ReLU / max-pool / global-average-pool operations.
//!
//! Every block exposes an explicit `forward` and a `backward` that
//! accumulates parameter gradients and returns the input gradient, so the
//! whole chain stays checkable by finite differences.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::scalar::Scalar;

/// 3x3 convolution, stride 1, zero padding 1 (shape-preserving).
///
/// Weight layout is `[out_ch][in_ch][3][3]` flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S: Scalar> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Conv2d<S> {
    /// He-normal initialization: std = sqrt(2 / fan_in), zero bias.
    pub fn init(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (in_ch * 9) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let weight = (0..out_ch * in_ch * 9)
            .map(|_| S::from_f64_lossy(normal.sample(rng)))
            .collect();
        Conv2d {
            in_ch,
            out_ch,
            weight,
            bias: vec![S::zero(); out_ch],
        }
    }

    pub fn zeros_like(&self) -> Conv2d<S> {
        Conv2d {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            weight: vec![S::zero(); self.weight.len()],
            bias: vec![S::zero(); self.bias.len()],
        }
    }

    #[inline]
    fn w(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> S {
        self.weight[((oc * self.in_ch + ic) * 3 + ky) * 3 + kx]
    }

    pub fn forward(&self, input: &Tensor<S>) -> Tensor<S> {
        assert_eq!(input.channels(), self.in_ch, "input channel mismatch");
        let (h, w) = (input.height(), input.width());
        let mut out = Tensor::zeros(self.out_ch, h, w);
        for oc in 0..self.out_ch {
            {
                let plane = out.channel_mut(oc);
                plane.fill(self.bias[oc]);
            }
            for ic in 0..self.in_ch {
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let wk = self.w(oc, ic, ky, kx);
                        if wk == S::zero() {
                            continue;
                        }
                        shift_axpy(out.channel_mut(oc), input.channel(ic), h, w, dy, dx, wk);
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients into `grads` and returns the
    /// gradient with respect to the input.
    pub fn backward(
        &self,
        input: &Tensor<S>,
        grad_out: &Tensor<S>,
        grads: &mut Conv2d<S>,
    ) -> Tensor<S> {
        let (h, w) = (input.height(), input.width());
        assert_eq!(grad_out.shape(), (self.out_ch, h, w));
        let mut grad_in = Tensor::zeros(self.in_ch, h, w);
        for oc in 0..self.out_ch {
            let go = grad_out.channel(oc);
            grads.bias[oc] += go.iter().copied().sum::<S>();
            for ic in 0..self.in_ch {
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        // dL/dw = <grad_out, input shifted by (dy, dx)>
                        let gw = shift_dot(go, input.channel(ic), h, w, dy, dx);
                        grads.weight[((oc * self.in_ch + ic) * 3 + ky) * 3 + kx] += gw;
                        // dL/dx scatters grad_out through the same shift.
                        let wk = self.w(oc, ic, ky, kx);
                        if wk != S::zero() {
                            shift_axpy_back(grad_in.channel_mut(ic), go, h, w, dy, dx, wk);
                        }
                    }
                }
            }
        }
        grad_in
    }
}

/// `out[y][x] += k * src[y+dy][x+dx]` over the intersection of both planes.
fn shift_axpy<S: Scalar>(out: &mut [S], src: &[S], h: usize, w: usize, dy: isize, dx: isize, k: S) {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize).min(h as isize - dy) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize).min(w as isize - dx) as usize;
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let orow = &mut out[y * w + x0..y * w + x1];
        let srow = &src[sy * w + (x0 as isize + dx) as usize..];
        for (o, s) in orow.iter_mut().zip(srow) {
            *o += k * *s;
        }
    }
}

/// `sum over valid (y, x) of a[y][x] * b[y+dy][x+dx]`.
fn shift_dot<S: Scalar>(a: &[S], b: &[S], h: usize, w: usize, dy: isize, dx: isize) -> S {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize).min(h as isize - dy) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize).min(w as isize - dx) as usize;
    let mut acc = S::zero();
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let arow = &a[y * w + x0..y * w + x1];
        let brow = &b[sy * w + (x0 as isize + dx) as usize..];
        acc += arow.iter().zip(brow).map(|(x, y)| *x * *y).sum::<S>();
    }
    acc
}

/// `out[y+dy][x+dx] += k * src[y][x]`: the transpose scatter of `shift_axpy`.
fn shift_axpy_back<S: Scalar>(
    out: &mut [S],
    src: &[S],
    h: usize,
    w: usize,
    dy: isize,
    dx: isize,
    k: S,
) {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize).min(h as isize - dy) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize).min(w as isize - dx) as usize;
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let srow = &src[y * w + x0..y * w + x1];
        let ostart = sy * w + (x0 as isize + dx) as usize;
        let orow = &mut out[ostart..ostart + (x1 - x0)];
        for (o, s) in orow.iter_mut().zip(srow) {
            *o += k * *s;
        }
    }
}

/// Fully connected layer; weight layout `[out_dim][in_dim]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S: Scalar> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).expect("positive std");
        let weight = (0..out_dim * in_dim)
            .map(|_| S::from_f64_lossy(normal.sample(rng)))
            .collect();
        Dense {
            in_dim,
            out_dim,
            weight,
            bias: vec![S::zero(); out_dim],
        }
    }

    pub fn zeros_like(&self) -> Dense<S> {
        Dense {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: vec![S::zero(); self.weight.len()],
            bias: vec![S::zero(); self.bias.len()],
        }
    }

    pub fn forward(&self, input: &[S]) -> Vec<S> {
        assert_eq!(input.len(), self.in_dim);
        (0..self.out_dim)
            .map(|j| {
                let row = &self.weight[j * self.in_dim..(j + 1) * self.in_dim];
                self.bias[j] + row.iter().zip(input).map(|(w, x)| *w * *x).sum::<S>()
            })
            .collect()
    }

    pub fn backward(&self, input: &[S], grad_out: &[S], grads: &mut Dense<S>) -> Vec<S> {
        assert_eq!(grad_out.len(), self.out_dim);
        let mut grad_in = vec![S::zero(); self.in_dim];
        for j in 0..self.out_dim {
            let g = grad_out[j];
            grads.bias[j] += g;
            let wrow = &self.weight[j * self.in_dim..(j + 1) * self.in_dim];
            let grow = &mut grads.weight[j * self.in_dim..(j + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * input[i];
                grad_in[i] += g * wrow[i];
            }
        }
        grad_in
    }
}

/// Elementwise `max(0, x)`.
pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
    out
}

/// ReLU input gradient; the mask comes from the pre-activation input.
pub fn relu_backward<S: Scalar>(pre: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    assert_eq!(pre.shape(), grad_out.shape());
    let mut grad_in = grad_out.clone();
    for (g, x) in grad_in.data_mut().iter_mut().zip(pre.data()) {
        if *x <= S::zero() {
            *g = S::zero();
        }
    }
    grad_in
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
///
/// Returns the pooled tensor and, per output element, the flat index of
/// the winning input within its channel plane (first maximum in row-major
/// window order on ties).
pub fn maxpool2<S: Scalar>(input: &Tensor<S>) -> (Tensor<S>, Vec<usize>) {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, oh, ow);
    let mut argmax = vec![0usize; c * oh * ow];
    for ch in 0..c {
        let plane = input.channel(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = (2 * oy) * w + 2 * ox;
                let mut best = plane[best_idx];
                for (ky, kx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * oy + ky) * w + 2 * ox + kx;
                    if plane[idx] > best {
                        best = plane[idx];
                        best_idx = idx;
                    }
                }
                out.set(ch, oy, ox, best);
                argmax[(ch * oh + oy) * ow + ox] = best_idx;
            }
        }
    }
    (out, argmax)
}

/// Scatters pooled gradients back to the argmax positions.
pub fn maxpool2_backward<S: Scalar>(
    input_shape: (usize, usize, usize),
    grad_out: &Tensor<S>,
    argmax: &[usize],
) -> Tensor<S> {
    let (c, h, w) = input_shape;
    let (oc, oh, ow) = grad_out.shape();
    assert_eq!(oc, c);
    assert_eq!(argmax.len(), oc * oh * ow);
    let mut grad_in = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let plane = grad_in.channel_mut(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let flat = (ch * oh + oy) * ow + ox;
                plane[argmax[flat]] += grad_out.get(ch, oy, ox);
            }
        }
    }
    grad_in
}

/// Per-channel plane average: CHW tensor down to a length-C vector.
pub fn global_avg_pool<S: Scalar>(input: &Tensor<S>) -> Vec<S> {
    let plane = S::from_f64_lossy((input.height() * input.width()) as f64);
    (0..input.channels())
        .map(|c| input.channel(c).iter().copied().sum::<S>() / plane)
        .collect()
}

/// Spreads each channel gradient uniformly over its plane.
pub fn global_avg_pool_backward<S: Scalar>(
    input_shape: (usize, usize, usize),
    grad_out: &[S],
) -> Tensor<S> {
    let (c, h, w) = input_shape;
    assert_eq!(grad_out.len(), c);
    let scale = S::one() / S::from_f64_lossy((h * w) as f64);
    let mut grad_in = Tensor::zeros(c, h, w);
    for ch in 0..c {
        grad_in.channel_mut(ch).fill(grad_out[ch] * scale);
    }
    grad_in
}
