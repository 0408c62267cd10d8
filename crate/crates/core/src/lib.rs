//! Desk-scale laboratory for learned exploration stopping criteria.
//!
//! The crate covers the full loop: procedural indoor environments, a
//! frontier-based exploration simulator producing timestamped partial maps,
//! a rule-based completeness labeler, a compact convolutional network that
//! classifies map completeness and regresses the explored-area fraction,
//! pluggable stopping criteria, and an evaluation harness for batch and
//! online protocols.
//!
//! Numeric network code is generic over the scalar type (see [`Scalar`]);
//! training normally runs in `f32` while gradient verification runs in
//! `f64`. Concrete aliases live at the crate root.

pub mod eval;
pub mod grid;
pub mod label;
pub mod manifest;
pub mod net;
pub mod pipeline;
pub mod scalar;
pub mod seeds;
pub mod sim;
pub mod stop;

pub use scalar::Scalar;

/// Single-precision network, the training/inference default.
pub type Model32 = net::CnnModel<f32>;
/// Double-precision network, used by gradient checks.
pub type Model64 = net::CnnModel<f64>;
/// Single-precision tensor.
pub type Tensor32 = net::Tensor<f32>;
/// Double-precision tensor.
pub type Tensor64 = net::Tensor<f64>;
