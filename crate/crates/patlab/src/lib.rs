//! Numerical laboratory for acoustic initial-data recovery with variable
//! sound speed.
//!
//! The crate simulates the acoustic initial-value problem on nested domains
//! (data support inside Omega, recovery ball `B_r0`, simulation ball
//! `B_r_sim`), accumulates time moments and Laplace transforms of the wave
//! field, and implements the analyses built on them: moment recursions and
//! their residuals, orthogonality discriminators that distinguish wave
//! speeds, low-frequency boundary asymptotics, spectral recovery of the
//! initial state from exterior data, and interior-transmission-eigenvalue
//! constructions for speed pairs.
//!
//! Everything is deterministic: seeded randomness, fixed-order reductions,
//! and bit-identical results across thread counts (the `parallel` feature
//! switches between a rayon thread pool and a sequential fallback without
//! changing any output bits).

pub mod asymptotics;
pub mod discriminator;
pub mod elliptic;
pub mod error;
pub mod field;
pub mod grid;
pub mod io;
pub mod medium;
pub mod moments;
pub mod parallel;
pub mod solver;
pub mod wave;

pub use error::{Error, Result};
