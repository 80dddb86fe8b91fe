//! Finite-volume simulation of 1D electromagnetic waves crossing a material
//! interface, an exact characteristics solution for validation, and
//! reproducible dataset generation.

pub mod datagen;
pub mod error;
pub mod exec;
pub mod fv;
pub mod grid;
pub mod oracle;
pub mod packet;

pub use error::{Error, Result};
pub use exec::Execution;
pub use grid::{FieldState, Grid1D, MaterialLayout};
pub use packet::{initial_state, wave_packet, Case, WavePacketSpec};
