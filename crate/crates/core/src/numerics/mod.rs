//! Dense tensors, seeded random streams and a dense linear solver.

mod linalg;
mod rng;
mod tensor;

pub use linalg::{matvec, solve_dense};
pub use rng::{gaussian_sample, SeededRng};
pub use tensor::Tensor;
