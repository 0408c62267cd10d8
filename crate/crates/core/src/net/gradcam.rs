//! Class-activation heatmaps for the classifier head.
//!
//! The map is built from the final conv block's post-ReLU activation: each
//! channel is weighted by the spatial mean of the target logit's gradient
//! at that activation, the weighted sum is rectified, min-max normalized,
//! and bilinearly upsampled to the input resolution.

use super::layer::{global_avg_pool_backward, maxpool2, maxpool2_backward};
use super::model::CnnModel;
use super::tensor::Tensor;
use crate::grid::MapImage;
use crate::scalar::Scalar;

/// Normalized heatmap at input resolution; values lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CamMap {
    pub side: usize,
    pub values: Vec<f64>,
}

impl CamMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.side + x]
    }

    /// Total heatmap mass inside the pixels selected by `mask`.
    pub fn masked_fraction(&self, mask: &[bool]) -> f64 {
        assert_eq!(mask.len(), self.values.len());
        let total: f64 = self.values.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        let inside: f64 = self
            .values
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(v, _)| *v)
            .sum();
        inside / total
    }
}

/// Heatmap of the evidence for `class` in `image`.
pub fn grad_cam<S: Scalar>(model: &CnnModel<S>, image: &MapImage, class: usize) -> CamMap {
    assert!(class < 2, "class index out of range");
    let input = model.image_to_input(image);
    let fwd = model.forward(&input);
    let activation = &fwd.last_conv_relu;

    // d(logit_class)/d(features) is just the classifier weight row; walk it
    // back through global average pooling and the final max pool to the
    // activation. ReLU is not crossed: the activation itself is post-ReLU.
    let feat_dim = model.cls_head.in_dim;
    let wrow = &model.cls_head.weight[class * feat_dim..(class + 1) * feat_dim];
    let (pooled, argmax) = maxpool2(activation);
    let grad_pooled = global_avg_pool_backward(pooled.shape(), wrow);
    let grad_act = maxpool2_backward(activation.shape(), &grad_pooled, &argmax);

    cam_from_activation(activation, &grad_act, image.side())
}

/// Combines an activation tensor with its gradient into a normalized,
/// upsampled heatmap. Channel weights are the spatial means of the
/// gradient planes.
pub fn cam_from_activation<S: Scalar>(
    activation: &Tensor<S>,
    grad: &Tensor<S>,
    out_side: usize,
) -> CamMap {
    assert_eq!(activation.shape(), grad.shape());
    let (c, h, w) = activation.shape();
    let plane = (h * w) as f64;

    let mut cam = vec![0.0f64; h * w];
    for ch in 0..c {
        let weight: f64 = grad
            .channel(ch)
            .iter()
            .map(|g| g.to_f64().expect("gradient fits f64"))
            .sum::<f64>()
            / plane;
        for (acc, a) in cam.iter_mut().zip(activation.channel(ch)) {
            *acc += weight * a.to_f64().expect("activation fits f64");
        }
    }
    for v in &mut cam {
        if *v < 0.0 {
            *v = 0.0;
        }
    }

    let normalized = min_max_normalize(&cam);
    let values = bilinear_upsample(&normalized, w, h, out_side, out_side);
    CamMap { side: out_side, values }
}

/// Maps values onto `[0, 1]`; a constant input becomes all zeros.
fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - min) / (max - min)).collect()
}

/// Half-pixel-center bilinear resampling.
pub fn bilinear_upsample(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    assert_eq!(src.len(), sw * sh);
    let mut out = vec![0.0f64; dw * dh];
    for y in 0..dh {
        let fy = ((y as f64 + 0.5) * sh as f64 / dh as f64 - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f64;
        for x in 0..dw {
            let fx = ((x as f64 + 0.5) * sw as f64 / dw as f64 - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * sw + x0] * (1.0 - tx) + src[y0 * sw + x1] * tx;
            let bot = src[y1 * sw + x0] * (1.0 - tx) + src[y1 * sw + x1] * tx;
            out[y * dw + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}
