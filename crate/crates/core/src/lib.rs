//! Uplink simulator for cell-free massive MIMO serving UAVs.

pub mod association;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod orchestrator;
pub mod pilots;
pub mod powerctl;
pub mod propagation;
pub mod receiver;
pub mod scenario;
pub mod table;

pub use error::{Error, Result};
