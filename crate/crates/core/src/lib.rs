//! Neighborhood multi-head attention for graph convolutional networks, plus
//! attention-map distillation and the KD / FitNet / LSP baselines.
//!
//! Everything runs on a small 64-bit dense tensor type with a reverse-mode
//! tape ([`tensor`]). Graphs are stored in CSR form and attention is computed
//! on edges only, so cost stays linear in the number of edges.

pub mod distill;
pub mod error;
pub mod graph;
pub mod io;
pub mod layers;
pub mod pipeline;
pub mod report;
pub mod tensor;

pub use error::{Error, Result};
