//! Quadratic g-expectations in a Markovian one-dimensional setting.
//!
//! The library solves quadratic-growth BSDEs by finite differences on the
//! equivalent semilinear parabolic terminal-value problem, exposes the
//! resulting nonlinear evaluation operators, and packages one runnable
//! numerical check per structural result (generator representation,
//! comparison, Jensen, Doob-Meyer decomposition, optional sampling,
//! upcrossing inequality, stability, BMO bounds).
//!
//! Layout:
//! - [`grid`], [`quadrature`], [`rng`], [`paths`]: probabilistic substrate
//!   (time/space grids, Brownian ensembles, Gauss quadrature, stochastic
//!   exponentials, BMO estimation).
//! - [`generators`], [`expr`]: drivers g(t,y,z) with growth metadata,
//!   assumption validation, and an expression parser for custom drivers.
//! - [`solver`]: the IMEX finite-difference engine, exit-time (Dirichlet)
//!   variants, and Richardson extrapolation.
//! - [`gexp`]: the operator calculus (evaluation, composition, stopping
//!   times, martingale classification).
//! - [`theorems`]: one checker per result, each emitting a `CheckReport`.

pub mod error;
pub mod expr;
pub mod generators;
pub mod gexp;
pub mod grid;
pub mod paths;
pub mod quadrature;
pub mod rng;
pub mod solver;
pub mod theorems;

pub use error::Error;
pub use generators::{AssumptionReport, Generator, Lattice};
pub use gexp::{GExpectationOperator, GMartingaleVerdict, MartingaleClass};
pub use grid::{SpaceGrid, TimeGrid};
pub use paths::{FiniteStoppingTime, PathEnsemble, StochasticExponentialPath};
pub use solver::{DriverV, SolveParams, TerminalCondition, ValueSurface};
pub use theorems::CheckReport;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
