//! Forward kernels (and their adjoints) over plain [`Tensor`](crate::Tensor)s.
//!
//! The autodiff [`Graph`](crate::Graph) records these; they can also be
//! called directly when no gradient is needed.

pub mod conv;
pub mod norm;
pub mod pointwise;
pub mod pool;
pub mod resize;

pub use conv::{conv2d, conv_transpose2d};
pub use norm::{batch_norm, RunningStats, BN_EPS, BN_MOMENTUM};
pub use pointwise::{add, concat_channels, elementwise, expand, mul, relu, sigmoid, sub, Elementwise};
pub use pool::{avg_pool_padded, pool, PoolKind};
pub use resize::{resize_nearest, upsample_bilinear};
