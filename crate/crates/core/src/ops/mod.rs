//! Forward and backward kernels for every layer primitive.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod merge;
pub mod norm;
pub mod pool;

pub use activation::{activation, ActivationMode};
pub use conv::{conv2d, depthwise_conv2d};
pub use dense::dense;
pub use merge::{merge, MergeMode};
pub use norm::{batch_norm, BnParams, NormMode};
pub use pool::{global_avg_pool, pool2d, PoolMode};
