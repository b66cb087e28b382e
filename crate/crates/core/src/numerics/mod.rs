//! Numerical substrate: multiprecision scalars, power series, Taylor
//! integration, quadrature and least squares.

pub mod big;
pub mod lsq;
pub mod quad;
pub mod series;
pub mod taylor;

pub use big::{BigComplex, BigReal};
pub use series::PowerSeries;
