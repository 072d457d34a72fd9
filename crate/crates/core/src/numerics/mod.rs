//! Special functions, quadrature, stiff integration and least squares.

pub mod bessel;
pub mod least_squares;
pub mod mittag_leffler;
pub mod ode;
pub mod quadrature;
pub mod tolerance;

pub use bessel::bessel_k;
pub use least_squares::{fit_least_squares, Bounds, FitResult};
pub use mittag_leffler::mittag_leffler;
pub use ode::{solve_ivp, Direction, Event, OdeProblem, OdeSolution, Output};
pub use quadrature::{gauss_legendre, quadrature};
pub use tolerance::Tolerance;
