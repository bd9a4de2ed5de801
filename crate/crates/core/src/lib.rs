//! Numerical tensor calculus on Cartan spaces and on their cotangent bundles
//! equipped with the Kähler-type deformed metric.

pub mod berwald;
pub mod cartan;
pub mod error;
pub mod expr;
pub mod jets;
pub mod kahler;
pub mod levicivita;
pub mod operators;
pub mod tensor;

pub use error::{EngineError, Result};
pub use jets::{ChartPoint, Jet};
