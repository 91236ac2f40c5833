//! Small neural-network toolkit: reverse-mode autodiff over 2-D arrays,
//! parameter storage with group tags, linear layers with optional low-rank
//! adapters, and an AdamW optimizer.
//!
//! Everything is generic over the element type so the same forward/backward
//! code runs in `f32` for training and in `f64` for finite-difference checks.

pub mod adamw;
pub mod attention;
pub mod block;
pub mod init;
pub mod linear;
pub mod norm;
pub mod params;
pub mod tape;

pub use adamw::AdamW;
pub use linear::{LinearLayer, LoraAdapter};
pub use params::{GroupSet, ParamGroup, ParamId, ParamStore};
pub use tape::{NodeId, Tape};

use ndarray::ScalarOperand;
use num_traits::Float;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

/// Element type for all tensor math.
pub trait Scalar:
    ndarray::LinalgScalar
    + Float
    + ScalarOperand
    + AddAssign
    + Sum<Self>
    + Send
    + Sync
    + Debug
    + Display
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}
