//! Deterministic TCH-Net inference kernel: three temporal paths, a contextual
//! embedding branch and a statistical branch fused by cross-branch gated
//! attention, plus loss evaluation, parameter accounting and a gradient check
//! of the fusion and focal loss.

pub mod branches;
pub mod config;
pub mod forward;
pub mod fusion;
pub mod gradcheck;
pub mod head;
pub mod layers;
pub mod loss;
pub mod params;
pub mod weights;

pub use config::{Conventions, LossConfig, ModelConfig};
pub use forward::{diagnostics_digest, forward_sample, forward_windows, model_forward, ForwardDiagnostics};
pub use gradcheck::{gradcheck_cbgaf_focal, gradcheck_suite, Coverage, GafDims, GafFixture, GradcheckReport, SuiteReport};
pub use loss::{class_weights, cross_entropy, focal_loss, total_loss};
pub use params::{count_parameters, ParameterReport, REFERENCE_TOTAL};
pub use weights::{layer_inventory, Component, WeightStore};
