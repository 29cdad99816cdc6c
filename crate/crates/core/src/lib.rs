//! Context-aware cross-level fusion network (C²F-Net) for camouflaged object
//! detection, built on a small double-precision autodiff engine.
//!
//! * [`tensor`], [`ops`], [`graph`], [`gradcheck`]: rank-4 tensors, the
//!   operator set, reverse-mode differentiation and finite-difference checks.
//! * [`blocks`]: backbone, RFB, MSCA, ACFM, DGCM, MRB, CIM and the full network.
//! * [`loss`]: weighted BCE + IoU on both prediction heads.
//! * [`metrics`]: MAE, S-measure, adaptive F/E-measure and weighted F-measure.
//! * [`datagen`]: deterministic synthetic camouflage data and PNG I/O.
//! * [`trainer`]: optimizer, schedule, checkpoints and the training loop.

pub mod blocks;
pub mod datagen;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod ops;
pub mod params;
pub mod tensor;
pub mod trainer;

pub use graph::{Graph, Var};
pub use params::{ParamKind, ParamStore};
pub use tensor::{ConvSpec, Shape, Tensor, TensorError};
