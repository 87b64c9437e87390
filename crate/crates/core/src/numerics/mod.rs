//! Dense tensors, differentiable layers with explicit backward passes,
//! losses, the Adam optimizer, a finite-difference gradient checker and a
//! portable seeded PRNG.
//!
//! Models in this crate are fixed pipelines of layers. Each layer's
//! `forward` returns its output together with whatever it must remember, and
//! `backward` consumes that cache, accumulates parameter gradients into the
//! [`ParamStore`] and returns the gradient with respect to its input.
//! Training runs in `f32`; gradient checks instantiate the same code at `f64`.

mod checkpoint;
mod gradcheck;
pub(crate) mod kernels;
pub mod layers;
pub mod loss;
mod optim;
mod params;
mod rng;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

pub use checkpoint::Checkpoint;
pub use gradcheck::{finite_diff_check, GradCheckReport, DEFAULT_EPS, REL_ERR_FLOOR};
pub use loss::{cross_entropy, entropy, softmax};
pub use optim::{Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;

/// Floating-point element type: `f32` for training, `f64` for verification.
pub trait Real:
    Float
    + NumAssign
    + FromPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + serde::Serialize
    + serde::de::DeserializeOwned
    + 'static
{
    /// Convert an `f64` literal or computed constant.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
