//! Minimal reverse-mode automatic differentiation.
//!
//! [`Tape`] records operations eagerly: every op call executes forward
//! immediately (f32), stores its output and enough metadata to run the
//! backward pass and to replay the whole graph in f64. The f64 replay
//! backs [`grad_check`], which compares analytic gradients against
//! central finite differences evaluated without f32 noise.
//!
//! Determinism: all kernels accumulate in a source-fixed order (see
//! [`crate::tensor::gemm`]), gradient accumulation walks nodes in reverse
//! creation order, and nothing here depends on thread scheduling.

mod adam;
mod gradcheck;
mod kernels;
mod params;
mod tape;

pub use adam::adam_step;
pub use gradcheck::{grad_check, GradCheckConfig};
pub use kernels::ConvDims;
pub use params::{init_kaiming_uniform, ParamKind, ParamSet};
pub use tape::{Mode, NodeId, Tape};
