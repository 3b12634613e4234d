//! Dense f64 numerics: tensors, the reverse-mode tape, parameters, Adam, and
//! the finite-difference gradient checker.
//!
//! Everything is 64-bit; at the scales this crate targets, exactness and
//! checkability beat throughput.

pub mod adam;
pub mod gradcheck;
pub mod param;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::grad_check;
pub use param::{new_param, Param, ParamStore, ParamTensor};
pub use rng::StreamRng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
