//! Network building blocks and the assembled coarse-to-fine network.
//!
//! Blocks own only parameter *names*; values live in a
//! [`ParamStore`](crate::ParamStore) and are bound per forward pass through
//! a [`Ctx`].

pub mod fusion;
pub mod inference;
pub mod layers;
pub mod msca;
pub mod net;
pub mod rfb;

pub use fusion::{Acfm, Dgcm};
pub use inference::{Cim, Mrb, Refinement, MODIFIED_RFB_BRANCHES};
pub use layers::{apply_bn_updates, BatchNorm, Conv, ConvBn, Ctx};
pub use msca::{Msca, DEFAULT_REDUCTION};
pub use net::{Backbone, C2fNet, FeaturePyramid, NetConfig, NetOutputs};
pub use rfb::{branch_specs, Rfb};
