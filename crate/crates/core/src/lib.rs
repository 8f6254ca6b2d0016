//! Numerical toolkit for the stochastic evolutionary p-Laplace equation on a
//! truncated box.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: uniform Dirichlet grids, staggered gradient/divergence, discrete norms
//! - [`plaplace`]: the discrete p-Laplacian, its convex energy and monotonicity checks
//! - [`implicit_step`]: the per-step resolvent `v - tau * Δ_p v = F`
//! - [`noise`]: truncated cylindrical Wiener noise and diagonal σ families
//! - [`skeleton`]: controlled deterministic equation, Picard fixed point, diagnostics
//! - [`spde`]: semi-implicit Euler–Maruyama trajectories and Girsanov-coupled pairs
//! - [`ldp`]: small-noise experiments (conditions C1/C2, rare events, rate function)
//! - [`tci`]: transportation-cost inequality check through the Girsanov coupling

pub mod error;
pub mod implicit_step;
pub mod ldp;
pub mod mesh;
pub mod model;
pub mod noise;
pub mod plaplace;
pub mod rng;
pub mod skeleton;
pub mod spde;
pub mod stats;
pub mod tci;

pub use error::{Error, Result};
pub use implicit_step::{solve_resolvent, InitialGuess, ResolventProblem, SolverOptions, StepStats};
pub use mesh::{Field, GradientField, Grid};
pub use model::{Model, StepRecord, Trajectory};
pub use noise::{BrownianPath, Multiplier, NoiseModel};
pub use plaplace::PLaplaceOperator;
pub use skeleton::{Control, PicardOptions, SkeletonSolution};
pub use spde::SpdeRun;
