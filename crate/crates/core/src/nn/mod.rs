//! Layers, topologies and exact backpropagation for the residual model
//! family.

pub mod layers;
pub mod model;
pub mod params;
pub mod spec;

pub use layers::{concat_forward, dense_forward, dropout_forward, relu, sigmoid_bce, Mode};
pub use model::{forward_logits, model_backward, model_forward, predict_scores, ForwardTrace};
pub use params::{init_params, Gradients, Parameters};
pub use spec::{
    build_baseline, build_baseline_scaled, build_collabres, BaselineId, CollabResConfig, LayerSpec, ModelSpec,
    ResidualBlockSpec, SkipSource,
};
