//! Graph-based neural dependency parsing with interchangeable word
//! representations (word lookup, character LSTM, character CNN, trigram
//! LSTM and a morphological oracle), Chu-Liu-Edmonds decoding, gated
//! attention over head morphology, case-tagging augmentation, probing
//! classifiers and the accompanying evaluation tools.

pub mod analysis;
pub mod archive;
pub mod config;
pub mod data;
pub mod encoders;
pub mod morph;
pub mod error;
pub mod numerics;
pub mod parser;
pub mod synthetic;

pub use error::{Error, Result};
