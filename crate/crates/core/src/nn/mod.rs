//! Layer library shared by both classifier architectures.
//!
//! Every layer is expressed as an operation on an autograd
//! [`Graph`](crate::autograd::Graph), so the same code serves the 32-bit
//! training path and the 64-bit gradient checks.

pub mod attention;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod mask;
pub mod norm;
pub mod params;
pub mod pool;

pub use attention::{mhsa, MhsaWeights};
pub use conv::{conv1d, depthwise_conv1d, eca};
pub use gradcheck::{gradient_check, layer_suite, GradCheckReport, SuiteRow};
pub use layers::{activation, dense, dropout, ffn, Activation};
pub use lstm::{lstm_layer, LstmWeights};
pub use mask::SequenceMask;
pub use norm::{batch_norm_1d, layer_norm, BatchNormStats};
pub use params::{glorot_uniform, LayerParams, ParamStore};
pub use pool::{masked_pool, PoolKind};

/// Train mode enables dropout and batch statistics; infer mode is
/// deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    Train,
    Infer,
}
