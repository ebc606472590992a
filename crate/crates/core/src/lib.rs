//! Discrete-time multi-channel downlink scheduling: system model, slot
//! engine, scheduling policies, exact matching and rate-function analysis.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod engine;
pub mod matching;
pub mod model;
pub mod policies;
pub mod rng;

pub use engine::{run, run_paired, step, EngineError, MetricsAccumulator, RunOptions, Schedule, SystemState};
pub use model::{generate_sample_path, ArrivalSpec, ChannelSpec, ConnMatrix, ModelConfig, Packet, SamplePath};
pub use policies::{Policy, PolicyKind};
