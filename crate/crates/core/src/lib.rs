//! Regularized continuous methods for nonlinear ill-posed equations `F(z) = 0`.

pub mod benchmarks;
pub mod error;
pub mod feigenbaum;
pub mod flows;
pub mod inequality_lab;
pub mod integrator;
pub mod linalg;
pub mod problem;
pub mod quadrature;
pub mod rates;
pub mod schedules;

pub use error::{Error, Result};
