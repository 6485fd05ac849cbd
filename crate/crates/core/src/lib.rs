//! Dynamic structure development for spiking networks in continual learning.
//!
//! A fixed-capacity spiking network grows fresh neurons for every task,
//! prunes the unimportant ones during training and freezes the survivors, so
//! earlier tasks are never overwritten.

pub mod checkpoint;
pub mod cil;
pub mod continual;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod seed;
pub mod snn;
pub mod structure;

pub use error::{Error, Result};
