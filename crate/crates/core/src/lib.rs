//! Numerical laboratory for mean field games of moderate interaction.
//!
//! The crate solves the coupled backward value / forward density system in
//! mild (Duhamel) form on a truncated grid, extracts the optimal feedback
//! `α* = -∇u`, simulates the finite-N player system whose agents interact
//! through a mollified empirical density, and quantifies both the
//! particle-limit convergence and the quality of the induced approximate
//! Nash equilibrium.
//!
//! Module map:
//! * [`grid`] — truncated uniform grids, scalar/vector fields, flows.
//! * [`semigroup`] — heat semigroup `P_t` and its gradient via padded FFT.
//! * [`model`] — game data (b, f, g, p0, interaction kernel) + hypothesis checks.
//! * [`solver`] — Picard iteration on the coupled mild system, Hopf-Cole
//!   cross-check, mild-residual verification.
//! * [`forward`] — forward density equation under an arbitrary feedback.
//! * [`particles`] — Euler-Maruyama simulation of the N-player system with
//!   cell-list neighbor search and mollified empirical densities.
//! * [`analysis`] — cost functionals, distribution distances, convergence
//!   and Nash-gap studies.
//! * [`io`] — binary/CSV dump formats shared by the command-line tools.

pub mod analysis;
pub mod error;
pub mod forward;
pub mod grid;
pub mod io;
pub mod model;
pub mod particles;
pub mod rng;
pub mod selftest;
pub mod semigroup;
pub mod solver;

pub use error::{MfgError, Result};
