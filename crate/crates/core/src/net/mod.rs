//! The learned map-completeness estimator: a small two-headed CNN built
//! from scratch, its optimizer, training loop, activation heatmaps, and
//! checkpoint format.

mod adam;
mod checkpoint;
mod gradcam;
mod layer;
mod model;
mod tensor;
mod train;

pub use adam::Adam;
pub use checkpoint::{load_model, save_model, CheckpointError};
pub use gradcam::{bilinear_upsample, cam_from_activation, grad_cam, CamMap};
pub use layer::{Conv2d, Dense};
pub use model::{
    softmax, CnnGrads, CnnModel, ForwardPass, HeadSelect, LossTerms, Prediction,
    BACKBONE_CHANNELS, EXPLORED_CLASS, MIN_INPUT_SIDE,
};
pub use tensor::Tensor;
pub use train::{train, validate, EpochStats, Sample, TrainConfig, TrainError, TrainOutcome};
