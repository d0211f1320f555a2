//! Toy-scale ViT runtime with token reduction inserted in every block.

mod config;
mod forward;
mod model;
mod weights;

pub use config::{ModelConfig, Pooling, PRESET_NAMES};
pub use forward::{
    forward, oversmoothing_metric, Diagnostics, FeatureMap, ForwardInput, ForwardOutput, LayerDiagnostics,
};
pub use model::{ffn_forward, gelu, layer_norm, patchify, Model, LN_EPS};
pub use weights::{
    generate_fixture, generate_image, generate_weights, schema, Image, Init, Tensor, WeightStore, MAGIC, VERSION,
};
