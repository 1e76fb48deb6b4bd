//! Finite-volume unitary Anderson models `U = D S`.
//!
//! `S` is the five-diagonal unitary built from alternating 2x2 rotation
//! blocks (or its tensor power in `d` dimensions) and `D` is a diagonal
//! matrix of random phases `e^{-i theta_k}`. The crate builds these operators
//! on lattice boxes with several boundary conditions, evaluates resolvents and
//! transfer matrices, and runs the Monte Carlo estimators used to observe
//! localization: fractional moments, dynamical amplitudes, Lyapunov
//! exponents and Lifshitz-tail probabilities.

pub mod error;
pub mod experiment;
pub mod lattice;
pub mod linalg;
pub mod moments;
pub mod operators;
pub mod params;
pub mod quadrature;
pub mod phases;
pub mod resolvent;
pub mod seeding;
pub mod sparse;
pub mod spectral;
pub mod stats;
pub mod transfer;

pub use num_complex::Complex64 as C64;

pub use error::{Error, Result};
pub use lattice::{BoundarySpec, EndCondition, LatticeBox};
pub use operators::{BandedUnitary, OperatorKind, SplittingData};
pub use params::{ModelParams, PhaseDistribution};
pub use phases::PhaseField;
pub use resolvent::DecayProfile;
pub use sparse::SparseMatrix;
pub use spectral::{LifshitzTrial, SpectralSet};
pub use stats::{DecayFit, MomentEstimate};
pub use transfer::{LyapunovEstimate, SolutionPair, TransferMatrix};
