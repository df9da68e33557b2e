//! Dense linear algebra, the seeded generator, the Adam optimizer and the
//! finite-difference gradient checker shared by every other module.

mod gradcheck;
mod matrix;
mod optim;
mod rng;

pub use gradcheck::check_gradient;
pub use matrix::{matmul, solve_linear, solve_linear_with, spectral_radius, Matrix, DEFAULT_MAX_CONDITION};
pub use optim::{Adam, AdamConfig};
pub use rng::Rng;
