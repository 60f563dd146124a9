//! Stability certificates for block-structured non-square real matrices.

pub mod block;
pub mod conjecture;
pub mod dominance;
pub mod dus;
pub mod error;
pub mod gamma;
pub mod linalg;
pub mod lyapunov;
pub mod sampling;
mod solver;

pub use block::{BlockStructure, Detuning, GainMatrix, PlantMatrix, SquaredSelection};
pub use error::{Error, Result};
pub use linalg::{RealMatrix, Spectrum, Tolerances};
pub use lyapunov::{DiagonalCertificate, FeasibilityStatus, FeasibilityVerdict};
pub use solver::SolverOptions;
