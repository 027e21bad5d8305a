//! Dense tensors, reverse-mode autodiff, neural layers and the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use graph::{Graph, Var};
pub use layers::{
    dropout, BiLstm, BoundLinear, BoundLstm, CharCnn, CharCnnConfig, Embedding, Highway, Linear, LstmLayer, Mlp,
};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::{argmax, softmax, Tensor};
