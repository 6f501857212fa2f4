//! Batched multi-world, multi-agent driving simulation.

pub mod error;
pub mod friction;
pub mod geometry;
pub mod rng;
pub mod scenario;
pub mod spatial;
pub mod world;
pub mod sysid;
pub mod goals;

pub use error::{Result, SimError};
pub mod config;
pub mod vehicle;
pub mod obs;
pub mod reward;
pub mod engine;
pub mod synth;
pub mod policy;
pub mod metrics;
pub mod bench;
