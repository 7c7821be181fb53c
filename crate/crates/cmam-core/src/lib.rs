//! Core library for memory-augmented handwritten-line transcription:
//! a tape-based autodiff engine, CNN/LSTM layers, a multi-way associative
//! external memory, CTC loss with decoding and metrics, and the full
//! sequence models built from those parts.

pub mod ctc;
pub mod gradcheck;
pub mod gradsuite;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod tensor;

pub use params::{Binder, ParamStore, TensorData};
pub use tensor::{Tape, TensorError, UnaryFn, Var};
