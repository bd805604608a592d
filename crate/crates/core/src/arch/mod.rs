//! The pyramid network: configuration, parameters, forward pass, anytime
//! truncation, FLOP accounting and checkpoints.

pub mod checkpoint;
mod config;
mod flops;
mod model;
mod network;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use config::{CutPoint, NetworkConfig};
pub use flops::count_flops;
pub use model::{buffer_specs, param_specs, Init, ModelState, ParamSpec};
pub use network::{
    forward_cut, forward_cut_counted, forward_full, forward_graph, BlockVars, Graph, GraphBuilder, Mode,
    Prediction, PredictionSet,
};
