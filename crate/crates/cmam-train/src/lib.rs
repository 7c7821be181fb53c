//! Training and evaluation harness for the transcription models: RMSProp
//! optimization, experiment configs, binary checkpoints, metric reporting,
//! and the `cmam` command-line tool.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod optim;
pub mod trainer;
