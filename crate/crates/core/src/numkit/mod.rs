//! Dense `f64` linear algebra, a seeded random stream and a Jacobi
//! eigensolver for symmetric matrices.

mod eig;
mod matrix;
mod rng;

pub use eig::{symmetric_eig, SymmetricEigen};
pub use matrix::{dot, norm2, Matrix, NORM_TOLERANCE};
pub use rng::{Distribution, RngStream};
