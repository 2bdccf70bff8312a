//! Convolutional compressive sensing toolkit.
//!
//! Images are sensed by a bank of random strided filters ([`sensing`]) and
//! reconstructed either by an alternating analysis-sparse solver
//! ([`solver`]) or by a trainable two-branch network ([`nn`]).

pub mod conv;
pub mod error;
pub mod formats;
pub mod imageio;
pub mod nn;
pub mod par;
pub mod real;
pub mod sensing;
pub mod solver;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Image, Padding, Shape, Tensor};
