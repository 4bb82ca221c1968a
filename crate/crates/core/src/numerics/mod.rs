//! Dense tensors, a gradient tape, and a finite-difference checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_gradient, max_relative_error, relative_error};
pub use params::{backward, Bindings, Parameter, ParameterSet};
pub use tape::{sigmoid, Gradients, Op, Tape, Var};
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The seeded generator threaded through every stochastic step.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}
