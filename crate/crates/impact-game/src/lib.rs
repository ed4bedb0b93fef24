//! Nash equilibria of N-player and mean-field liquidation games with
//! transient price impact and an Ornstein-Uhlenbeck predictive signal.
//!
//! The equilibrium strategies are linear feedback maps whose coefficients are
//! exponential sums read off closed-form diagonalizations of small system
//! matrices. On top of the solvers sit Monte-Carlo evaluation of the
//! performance functionals and the experiment drivers for convergence rates,
//! epsilon-Nash gaps and the illustration scenarios.

pub mod error;
pub mod evaluate;
pub mod experiments;
pub mod finite;
pub mod mfg;
pub mod model;
pub mod report;
pub mod signal;
pub mod spectral;

pub use error::{Error, Result};
