//! Fifth-order upwind finite-volume solver for the 1D transverse Maxwell system.

pub mod characteristics;
pub mod reconstruct;
pub mod riemann;
mod solver;

pub use characteristics::{from_characteristics, to_characteristics, Characteristics};
pub use reconstruct::{reconstruct_faces, Upwind};
pub use riemann::{interface_riemann, FaceFlux, InterfaceSolution};
pub use solver::{
    min_region_cells, rhs, simulate, Boundary, FvOperator, SolverConfig, Trajectory, DEFAULT_DT, DEFAULT_STEPS,
};
