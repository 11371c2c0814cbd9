//! Finite-element and spectral-Galerkin laboratory for the semilinear
//! stochastic heat equation
//!
//! ```text
//! dX + (A X - f(X)) dt = g(X) dW,   X(0) = X_0,
//! ```
//!
//! on `(0, 1)` with homogeneous Dirichlet conditions, `A = -d^2/dx^2` and `W`
//! a `Q`-Wiener process. The crate measures strong and weak errors of the P1
//! finite-element semidiscretisation against a spectral reference and checks
//! the operator inequalities behind them.

pub mod cli;
pub mod config;
pub mod dst;
pub mod error;
pub mod fem;
pub mod integrator;
pub mod lab;
pub mod noise;
pub mod quadrature;
pub mod report;
pub mod spectral;
pub mod util;

pub use error::{Error, Result};
