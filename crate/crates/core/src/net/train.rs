//! Mini-batch training loop with augmentation, validation tracking, and
//! best-checkpoint selection.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::adam::Adam;
use super::model::{CnnGrads, CnnModel, HeadSelect};
use crate::grid::MapImage;
use crate::scalar::Scalar;
use crate::seeds;

/// One labeled training example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: MapImage,
    /// Class index; 1 means explored.
    pub class: usize,
    /// Explored-area fraction target in `[0, 1]`.
    pub area: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the regression loss in the combined objective.
    pub lambda: f64,
    /// Random quarter-turn rotations and mild zooms on training samples.
    pub augment: bool,
    pub seed: u64,
    pub heads: HeadSelect,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 24,
            batch_size: 8,
            lr: 1e-4,
            lambda: 1.0,
            augment: true,
            seed: 0,
            heads: HeadSelect::BOTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_cls_loss: f64,
    pub train_reg_loss: f64,
    /// Combined objective: cls + lambda * reg.
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_area_mae: f64,
    /// Whether this epoch became the new best checkpoint.
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    /// Best checkpoint under the selection metric.
    pub model: CnnModel<S>,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("validation set is empty")]
    EmptyValSet,
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("non-finite gradient in {param} (epoch {epoch}, batch {batch})")]
    NonFiniteGradient {
        epoch: usize,
        batch: usize,
        param: String,
    },
    #[error("sample {index} has class {class}, expected 0 or 1")]
    BadClass { index: usize, class: usize },
}

/// Validation metrics: classification accuracy at p >= 0.5 and mean
/// absolute error of the area estimate.
pub fn validate<S: Scalar>(model: &CnnModel<S>, samples: &[Sample]) -> (f64, f64) {
    assert!(!samples.is_empty());
    let results: Vec<(bool, f64)> = samples
        .par_iter()
        .map(|s| {
            let pred = model.predict(&s.image);
            let predicted_class = usize::from(pred.p_explored >= 0.5);
            (predicted_class == s.class, (pred.area_estimate - s.area).abs())
        })
        .collect();
    let correct = results.iter().filter(|(ok, _)| *ok).count();
    let mae = results.iter().map(|(_, e)| e).sum::<f64>() / results.len() as f64;
    (correct as f64 / results.len() as f64, mae)
}

/// Augmentation parameters drawn per sample per epoch.
#[derive(Debug, Clone, Copy)]
struct Augment {
    quarter_turns: usize,
    zoom: f64,
}

fn apply_augment(image: &MapImage, aug: Augment) -> MapImage {
    let rotated = image.rotated(aug.quarter_turns);
    if (aug.zoom - 1.0).abs() < 1e-9 {
        rotated
    } else {
        rotated.zoomed(aug.zoom)
    }
}

/// Trains a fresh model and returns the best checkpoint.
///
/// Selection: highest validation accuracy, ties broken by lowest
/// validation area error; strict improvement only. When only the
/// regression head trains, the area error alone decides.
pub fn train<S: Scalar>(
    train_set: &[Sample],
    val_set: &[Sample],
    input_side: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<S>, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptyValSet);
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(TrainError::BadConfig(
            "epochs and batch_size must be positive".into(),
        ));
    }
    if !cfg.heads.cls && !cfg.heads.reg {
        return Err(TrainError::BadConfig("no head selected".into()));
    }
    for (index, s) in train_set.iter().chain(val_set.iter()).enumerate() {
        if s.class > 1 {
            return Err(TrainError::BadClass { index, class: s.class });
        }
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 0x6d6f64));
    let mut model = CnnModel::<S>::new(input_side, &mut init_rng);
    let mut adam = Adam::new(&model, cfg.lr);
    let lambda = S::from_f64_lossy(cfg.lambda);

    let mut best: Option<((f64, f64), usize, CnnModel<S>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive2(cfg.seed, 0x65706f63, epoch as u64));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        // Draw augmentations sequentially so thread count never matters.
        let augments: Vec<Augment> = order
            .iter()
            .map(|_| {
                if cfg.augment {
                    Augment {
                        quarter_turns: rng.gen_range(0..4),
                        zoom: rng.gen_range(0.9..=1.1),
                    }
                } else {
                    Augment { quarter_turns: 0, zoom: 1.0 }
                }
            })
            .collect();

        let mut sum_cls = 0.0f64;
        let mut sum_reg = 0.0f64;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let offset = batch_index * cfg.batch_size;
            // Per-sample gradients in index order, then a sequential
            // reduction: bitwise identical for any worker count.
            let per_sample: Vec<(CnnGrads<S>, f64, f64)> = chunk
                .par_iter()
                .enumerate()
                .map(|(i, &si)| {
                    let sample = &train_set[si];
                    let image = apply_augment(&sample.image, augments[offset + i]);
                    let input = model.image_to_input(&image);
                    let fwd = model.forward(&input);
                    let mut grads = model.zero_grads();
                    let losses = model.backward(
                        &fwd,
                        sample.class,
                        S::from_f64_lossy(sample.area),
                        lambda,
                        cfg.heads,
                        &mut grads,
                    );
                    (
                        grads,
                        losses.cls.to_f64().expect("loss fits f64"),
                        losses.reg.to_f64().expect("loss fits f64"),
                    )
                })
                .collect();

            let mut batch_grads = model.zero_grads();
            for (g, cls, reg) in &per_sample {
                batch_grads.accumulate(g);
                sum_cls += cls;
                sum_reg += reg;
            }
            batch_grads.scale(S::one() / S::from_f64_lossy(chunk.len() as f64));
            if let Some(param) = batch_grads.first_non_finite() {
                return Err(TrainError::NonFiniteGradient {
                    epoch,
                    batch: batch_index,
                    param,
                });
            }
            adam.step(&mut model, &batch_grads);
        }

        let n = train_set.len() as f64;
        let (val_accuracy, val_area_mae) = validate(&model, val_set);
        // Lexicographic: better accuracy wins, equal accuracy falls back to
        // the area error. With a single trained head the untouched metric
        // is constant, so the trained one decides.
        let score = if cfg.heads.cls {
            (val_accuracy, -val_area_mae)
        } else {
            (0.0, -val_area_mae)
        };
        let improved = best.as_ref().map_or(true, |(s, _, _)| score > *s);
        if improved {
            best = Some((score, epoch, model.clone()));
        }
        history.push(EpochStats {
            epoch,
            train_cls_loss: sum_cls / n,
            train_reg_loss: sum_reg / n,
            train_loss: (sum_cls + cfg.lambda * sum_reg) / n,
            val_accuracy,
            val_area_mae,
            improved,
        });
    }

    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { model, best_epoch, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tiny synthetic task: explored maps are mostly free pixels, not
    /// explored maps carry a block of unknown; area target tracks the
    /// known fraction.
    fn synthetic_samples(n: usize, side: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let explored = i % 2 == 0;
                let mut pixels = vec![1.0f32; side * side];
                // Sprinkle obstacles so images are not constant.
                for _ in 0..side {
                    let p = rng.gen_range(0..side * side);
                    pixels[p] = 0.0;
                }
                let area = if explored {
                    1.0
                } else {
                    let w = side / 2 + rng.gen_range(0..side / 4);
                    for y in 0..w {
                        for x in 0..w {
                            pixels[y * side + x] = 0.5;
                        }
                    }
                    1.0 - (w * w) as f64 / (side * side) as f64
                };
                Sample {
                    image: MapImage::from_pixels(side, pixels).unwrap(),
                    class: usize::from(explored),
                    area,
                }
            })
            .collect()
    }

    fn quick_config(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            lr: 2e-3,
            lambda: 1.0,
            augment: false,
            seed,
            heads: HeadSelect::BOTH,
        }
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        let train_set = synthetic_samples(48, 16, 1);
        let val_set = synthetic_samples(16, 16, 2);
        let out = train::<f32>(&train_set, &val_set, 16, &quick_config(12, 3)).unwrap();
        let last = out.history.last().unwrap();
        let first = out.history.first().unwrap();
        assert!(last.train_loss < first.train_loss, "loss did not decrease");
        let (acc, mae) = validate(&out.model, &val_set);
        assert!(acc >= 0.9, "val accuracy {acc}");
        assert!(mae < 0.25, "val area mae {mae}");
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let train_set = synthetic_samples(12, 16, 4);
        let val_set = synthetic_samples(4, 16, 5);
        let mut cfg = quick_config(2, 9);
        cfg.augment = true;
        let a = train::<f32>(&train_set, &val_set, 16, &cfg).unwrap();
        let b = train::<f32>(&train_set, &val_set, 16, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        cfg.seed = 10;
        let c = train::<f32>(&train_set, &val_set, 16, &cfg).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn lambda_zero_freezes_regression_head() {
        let train_set = synthetic_samples(12, 16, 6);
        let val_set = synthetic_samples(4, 16, 7);
        let mut cfg = quick_config(2, 11);
        cfg.lambda = 0.0;
        let out = train::<f32>(&train_set, &val_set, 16, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 0x6d6f64));
        let init = CnnModel::<f32>::new(16, &mut rng);
        assert_eq!(out.model.reg_head.weight, init.reg_head.weight);
        assert_eq!(out.model.reg_head.bias, init.reg_head.bias);
        assert_ne!(out.model.cls_head.weight, init.cls_head.weight);
    }

    #[test]
    fn reg_only_training_freezes_classifier() {
        let train_set = synthetic_samples(12, 16, 8);
        let val_set = synthetic_samples(4, 16, 9);
        let mut cfg = quick_config(2, 13);
        cfg.heads = HeadSelect::REG_ONLY;
        let out = train::<f32>(&train_set, &val_set, 16, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 0x6d6f64));
        let init = CnnModel::<f32>::new(16, &mut rng);
        assert_eq!(out.model.cls_head.weight, init.cls_head.weight);
    }

    #[test]
    fn best_epoch_tracks_validation_improvements() {
        let train_set = synthetic_samples(24, 16, 10);
        let val_set = synthetic_samples(8, 16, 11);
        let out = train::<f32>(&train_set, &val_set, 16, &quick_config(6, 15)).unwrap();
        assert!(out.history[out.best_epoch].improved);
        let best_acc = out.history[out.best_epoch].val_accuracy;
        for s in &out.history {
            assert!(s.val_accuracy <= best_acc + 1e-12);
        }
        // The first epoch always improves over "no checkpoint yet".
        assert!(out.history[0].improved);
    }

    #[test]
    fn rejects_empty_and_misconfigured_inputs() {
        let samples = synthetic_samples(4, 16, 12);
        assert!(matches!(
            train::<f32>(&[], &samples, 16, &quick_config(1, 0)),
            Err(TrainError::EmptyTrainSet)
        ));
        assert!(matches!(
            train::<f32>(&samples, &[], 16, &quick_config(1, 0)),
            Err(TrainError::EmptyValSet)
        ));
        let mut cfg = quick_config(0, 0);
        assert!(matches!(
            train::<f32>(&samples, &samples, 16, &cfg),
            Err(TrainError::BadConfig(_))
        ));
        cfg = quick_config(1, 0);
        cfg.heads = HeadSelect { cls: false, reg: false };
        assert!(matches!(
            train::<f32>(&samples, &samples, 16, &cfg),
            Err(TrainError::BadConfig(_))
        ));
    }

    #[test]
    fn exploding_learning_rate_reports_offending_parameter() {
        let train_set = synthetic_samples(8, 16, 13);
        let val_set = synthetic_samples(4, 16, 14);
        let mut cfg = quick_config(6, 17);
        cfg.lr = 1e24;
        match train::<f32>(&train_set, &val_set, 16, &cfg) {
            Err(TrainError::NonFiniteGradient { param, .. }) => {
                assert!(!param.is_empty());
            }
            Ok(_) => panic!("training should have diverged"),
            Err(other) => panic!("unexpected error {other:?}"),
        }
    }
}
