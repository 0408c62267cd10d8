//! The compact two-headed convolutional network.
//!
//! Backbone: four blocks of (3x3 conv, ReLU, 2x2 max pool) with channel
//! widths 16, 32, 64, 64, followed by global average pooling. Two heads
//! share those features: a 2-way softmax classifier (index 1 = explored)
//! and a single-unit ReLU regressor for the explored-area fraction.

use rand::Rng;

use super::layer::{
    global_avg_pool, global_avg_pool_backward, maxpool2, maxpool2_backward, relu, relu_backward,
    Conv2d, Dense,
};
use super::tensor::Tensor;
use crate::grid::MapImage;
use crate::scalar::Scalar;

/// Channel widths of the four backbone blocks.
pub const BACKBONE_CHANNELS: [usize; 4] = [16, 32, 64, 64];

/// Class index of "explored" in logits / probabilities.
pub const EXPLORED_CLASS: usize = 1;

/// Minimum input side so four pooling stages keep at least one pixel.
pub const MIN_INPUT_SIDE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<S: Scalar> {
    pub input_side: usize,
    pub convs: Vec<Conv2d<S>>,
    pub cls_head: Dense<S>,
    pub reg_head: Dense<S>,
}

/// Gradient accumulator with the same parameter layout as the model.
#[derive(Debug, Clone)]
pub struct CnnGrads<S: Scalar> {
    pub convs: Vec<Conv2d<S>>,
    pub cls_head: Dense<S>,
    pub reg_head: Dense<S>,
}

/// Everything the backward pass and Grad-CAM need from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<S: Scalar> {
    conv_inputs: Vec<Tensor<S>>,
    conv_pre: Vec<Tensor<S>>,
    pool_argmax: Vec<Vec<usize>>,
    /// Post-ReLU activation of the final conv block, before pooling.
    pub last_conv_relu: Tensor<S>,
    /// Pooled features after global average pooling.
    pub features: Vec<S>,
    pub logits: Vec<S>,
    /// Softmax over `logits`.
    pub probs: Vec<S>,
    /// Regression head pre-activation.
    pub reg_raw: S,
    /// ReLU of `reg_raw`: the raw area estimate.
    pub reg_out: S,
}

/// Per-sample loss terms before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<S: Scalar> {
    pub cls: S,
    pub reg: S,
}

/// Which heads propagate gradients during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HeadSelect {
    pub cls: bool,
    pub reg: bool,
}

impl HeadSelect {
    pub const BOTH: HeadSelect = HeadSelect { cls: true, reg: true };
    pub const CLS_ONLY: HeadSelect = HeadSelect { cls: true, reg: false };
    pub const REG_ONLY: HeadSelect = HeadSelect { cls: false, reg: true };
}

/// Inference output for one map image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Probability that the map is fully explored.
    pub p_explored: f64,
    /// Estimated explored-area fraction, clamped to at most 1.
    pub area_estimate: f64,
}

const CE_CLAMP: f64 = 1e-12;

impl<S: Scalar> CnnModel<S> {
    pub fn new(input_side: usize, rng: &mut impl Rng) -> Self {
        assert!(
            input_side >= MIN_INPUT_SIDE,
            "input side {input_side} below minimum {MIN_INPUT_SIDE}"
        );
        let mut convs = Vec::with_capacity(BACKBONE_CHANNELS.len());
        let mut in_ch = 1;
        for &out_ch in &BACKBONE_CHANNELS {
            convs.push(Conv2d::init(in_ch, out_ch, rng));
            in_ch = out_ch;
        }
        let feat = *BACKBONE_CHANNELS.last().expect("non-empty backbone");
        let mut reg_head = Dense::init(feat, 1, rng);
        // The area target lives in [0, 1] and the head is a single ReLU
        // unit: random weights over non-negative features can start it
        // negative on every input, which ReLU then freezes permanently.
        // Zero weights with a positive bias keep its gradient path open.
        reg_head.weight.fill(S::zero());
        reg_head.bias[0] = S::from_f64_lossy(0.5);
        CnnModel {
            input_side,
            convs,
            cls_head: Dense::init(feat, 2, rng),
            reg_head,
        }
    }

    pub fn zero_grads(&self) -> CnnGrads<S> {
        CnnGrads {
            convs: self.convs.iter().map(Conv2d::zeros_like).collect(),
            cls_head: self.cls_head.zeros_like(),
            reg_head: self.reg_head.zeros_like(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_vecs().iter().map(|(_, v)| v.len()).sum()
    }

    /// Canonical `(name, values)` walk over every parameter vector. The
    /// optimizer and the checkpoint format both follow this order.
    pub fn param_vecs(&self) -> Vec<(String, &Vec<S>)> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), &conv.weight));
            out.push((format!("conv{i}.bias"), &conv.bias));
        }
        out.push(("cls.weight".to_string(), &self.cls_head.weight));
        out.push(("cls.bias".to_string(), &self.cls_head.bias));
        out.push(("reg.weight".to_string(), &self.reg_head.weight));
        out.push(("reg.bias".to_string(), &self.reg_head.bias));
        out
    }

    pub fn param_vecs_mut(&mut self) -> Vec<&mut Vec<S>> {
        let mut out = Vec::new();
        for conv in &mut self.convs {
            out.push(&mut conv.weight);
            out.push(&mut conv.bias);
        }
        out.push(&mut self.cls_head.weight);
        out.push(&mut self.cls_head.bias);
        out.push(&mut self.reg_head.weight);
        out.push(&mut self.reg_head.bias);
        out
    }

    /// Converts a map image to the network's 1-channel input tensor.
    pub fn image_to_input(&self, image: &MapImage) -> Tensor<S> {
        assert_eq!(
            image.side(),
            self.input_side,
            "image side {} does not match model input side {}",
            image.side(),
            self.input_side
        );
        let data = image
            .pixels()
            .iter()
            .map(|&p| S::from_f64_lossy(p as f64))
            .collect();
        Tensor::from_vec(1, self.input_side, self.input_side, data)
    }

    pub fn forward(&self, input: &Tensor<S>) -> ForwardPass<S> {
        assert_eq!(input.shape(), (1, self.input_side, self.input_side));
        let mut x = input.clone();
        let n = self.convs.len();
        let mut conv_inputs = Vec::with_capacity(n);
        let mut conv_pre = Vec::with_capacity(n);
        let mut pool_argmax = Vec::with_capacity(n);
        let mut last_conv_relu = None;
        for (i, conv) in self.convs.iter().enumerate() {
            let pre = conv.forward(&x);
            let post = relu(&pre);
            if i == n - 1 {
                last_conv_relu = Some(post.clone());
            }
            let (pooled, argmax) = maxpool2(&post);
            conv_inputs.push(x);
            conv_pre.push(pre);
            pool_argmax.push(argmax);
            x = pooled;
        }
        let features = global_avg_pool(&x);
        conv_inputs.push(x);
        let logits = self.cls_head.forward(&features);
        let probs = softmax(&logits);
        let reg_raw = self.reg_head.forward(&features)[0];
        let reg_out = reg_raw.max(S::zero());
        ForwardPass {
            conv_inputs,
            conv_pre,
            pool_argmax,
            last_conv_relu: last_conv_relu.expect("backbone is non-empty"),
            features,
            logits,
            probs,
            reg_raw,
            reg_out,
        }
    }

    /// Loss terms for a forward pass without touching gradients.
    pub fn losses(&self, fwd: &ForwardPass<S>, class: usize, area_target: S) -> LossTerms<S> {
        let p = fwd.probs[class]
            .to_f64()
            .expect("probability fits f64")
            .max(CE_CLAMP);
        let cls = S::from_f64_lossy(-p.ln());
        let diff = fwd.reg_out - area_target;
        LossTerms { cls, reg: diff * diff }
    }

    /// Backpropagates one sample, accumulating into `grads`.
    ///
    /// The total gradient corresponds to `cls + lambda * reg` restricted to
    /// the heads enabled in `select`; the returned losses are unweighted.
    pub fn backward(
        &self,
        fwd: &ForwardPass<S>,
        class: usize,
        area_target: S,
        lambda: S,
        select: HeadSelect,
        grads: &mut CnnGrads<S>,
    ) -> LossTerms<S> {
        assert!(class < 2, "class index out of range");
        let losses = self.losses(fwd, class, area_target);

        let mut grad_feat = vec![S::zero(); fwd.features.len()];
        if select.cls {
            // Softmax + cross-entropy fuse to (p - onehot) on the logits.
            let mut grad_logits = fwd.probs.clone();
            grad_logits[class] -= S::one();
            let g = self
                .cls_head
                .backward(&fwd.features, &grad_logits, &mut grads.cls_head);
            for (a, b) in grad_feat.iter_mut().zip(g) {
                *a += b;
            }
        }
        if select.reg && lambda != S::zero() && fwd.reg_raw > S::zero() {
            let two = S::from_f64_lossy(2.0);
            let grad_raw = lambda * two * (fwd.reg_out - area_target);
            let g = self
                .reg_head
                .backward(&fwd.features, &[grad_raw], &mut grads.reg_head);
            for (a, b) in grad_feat.iter_mut().zip(g) {
                *a += b;
            }
        }

        let last = self.convs.len();
        let pooled_shape = fwd.conv_inputs[last].shape();
        let mut grad = global_avg_pool_backward(pooled_shape, &grad_feat);
        for i in (0..last).rev() {
            let relu_shape = fwd.conv_pre[i].shape();
            let grad_relu = maxpool2_backward(relu_shape, &grad, &fwd.pool_argmax[i]);
            let grad_pre = relu_backward(&fwd.conv_pre[i], &grad_relu);
            grad = self.convs[i].backward(&fwd.conv_inputs[i], &grad_pre, &mut grads.convs[i]);
        }
        losses
    }

    pub fn predict(&self, image: &MapImage) -> Prediction {
        let fwd = self.forward(&self.image_to_input(image));
        Prediction {
            p_explored: fwd.probs[EXPLORED_CLASS].to_f64().expect("prob fits f64"),
            area_estimate: fwd.reg_out.to_f64().expect("estimate fits f64").min(1.0),
        }
    }

    /// Converts parameters to another scalar type, layout preserved.
    pub fn cast<T: Scalar>(&self) -> CnnModel<T> {
        let cast_vec = |v: &Vec<S>| -> Vec<T> {
            v.iter()
                .map(|x| T::from_f64_lossy(x.to_f64().expect("weight fits f64")))
                .collect()
        };
        CnnModel {
            input_side: self.input_side,
            convs: self
                .convs
                .iter()
                .map(|c| Conv2d {
                    in_ch: c.in_ch,
                    out_ch: c.out_ch,
                    weight: cast_vec(&c.weight),
                    bias: cast_vec(&c.bias),
                })
                .collect(),
            cls_head: Dense {
                in_dim: self.cls_head.in_dim,
                out_dim: self.cls_head.out_dim,
                weight: cast_vec(&self.cls_head.weight),
                bias: cast_vec(&self.cls_head.bias),
            },
            reg_head: Dense {
                in_dim: self.reg_head.in_dim,
                out_dim: self.reg_head.out_dim,
                weight: cast_vec(&self.reg_head.weight),
                bias: cast_vec(&self.reg_head.bias),
            },
        }
    }
}

impl<S: Scalar> CnnGrads<S> {
    /// Same canonical walk as [`CnnModel::param_vecs`].
    pub fn param_vecs(&self) -> Vec<(String, &Vec<S>)> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), &conv.weight));
            out.push((format!("conv{i}.bias"), &conv.bias));
        }
        out.push(("cls.weight".to_string(), &self.cls_head.weight));
        out.push(("cls.bias".to_string(), &self.cls_head.bias));
        out.push(("reg.weight".to_string(), &self.reg_head.weight));
        out.push(("reg.bias".to_string(), &self.reg_head.bias));
        out
    }

    pub fn param_vecs_mut(&mut self) -> Vec<&mut Vec<S>> {
        let mut out = Vec::new();
        for conv in &mut self.convs {
            out.push(&mut conv.weight);
            out.push(&mut conv.bias);
        }
        out.push(&mut self.cls_head.weight);
        out.push(&mut self.cls_head.bias);
        out.push(&mut self.reg_head.weight);
        out.push(&mut self.reg_head.bias);
        out
    }

    /// Adds `other` into `self` elementwise.
    pub fn accumulate(&mut self, other: &CnnGrads<S>) {
        let mut mine = self.param_vecs_mut();
        let theirs = other.param_vecs();
        for (dst, (_, src)) in mine.iter_mut().zip(theirs) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += *s;
            }
        }
    }

    /// Scales every gradient, e.g. by `1 / batch_size`.
    pub fn scale(&mut self, k: S) {
        for vec in self.param_vecs_mut() {
            for v in vec.iter_mut() {
                *v *= k;
            }
        }
    }

    /// Name of the first parameter vector containing a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.param_vecs()
            .into_iter()
            .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
            .map(|(name, _)| name)
    }
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| a.max(b));
    let exps: Vec<S> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum = exps.iter().copied().sum::<S>();
    exps.into_iter().map(|e| e / sum).collect()
}
