//! Dynamic sparse GAN training engine: sparse-to-sparse training with
//! periodic prune-and-regrow exploration of the generator, a sparse moving
//! average of generator weights, and FLOPs-accounted comparisons against
//! static-sparse, dense, and prune-then-fine-tune baselines on synthetic 2D
//! generative tasks.

pub mod error;
pub mod exploration;
pub mod flops;
pub mod metrics;
pub mod gan;
pub mod optimizer;
pub mod report;
pub mod rng;
pub mod sweep;
pub mod tape;
pub mod train;
pub mod tensor;
pub mod topology;

pub use error::{Error, Result};
