//! The ESDNet family: configuration, parameters, blocks and tiled inference.

mod config;
mod network;
mod params;
mod tiled;

pub use config::{DenseBlockConfig, ModelConfig, Variant};
pub use network::{
    drdb_forward, forward, forward_traced, sam_forward, sam_parts, Predictions, SamParts, TraceEntry, INPUT_MULTIPLE,
};
pub use params::{branch_prefix, init_tensors, layout, sam_prefix, Bound, Layout, ModelParams, ParamSpec};
pub use tiled::{reflect_pad, tiled_infer, TileConfig};
