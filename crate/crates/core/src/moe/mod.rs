//! Desk-scale sparse mixture-of-experts block: top-k routing, frozen
//! shared FFN experts adapted by trainable bottlenecks, load balancing,
//! gradient checking, sparse upcycling, parameter accounting, and routing
//! statistics. All math is dense f64.

mod checkpoint;
mod grad;
mod layer;
mod params;
mod stats;

pub use checkpoint::{
    checkpoint_hash, toy_dense_model, upcycle, CheckpointKind, DenseModel, Dtype, Manifest,
    MoeManifestInfo, MoeModel, TensorEntry, TensorStore, UpcycleOptions, INIT_STD, MANIFEST_FILE,
};
pub use grad::{backward, grad_check, DotLoss, GradCheckReport, Grads, LossFn, QuadLoss, ZeroLoss};
pub use layer::{
    adapter_forward, load_balance_loss, route, route_detailed, Activation, ExpertAdapter,
    ForwardTrace, MoeLayer, MoeLayerSpec, RouterWeights, Routing, SharedFfn, LOAD_BALANCE_COEFF,
};
pub use params::{count_params, relative_gap, MoePreset, ParamCounts};
pub use stats::{routing_stats, RoutingStats};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MoeError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: String, got: String },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
