//! Vibration response of clamped thin plates with damped (complex) bending
//! moduli, and identification of those moduli from measured response curves.
//!
//! The pipeline: [`mesh`] builds a triangulated strip, [`fem`] assembles the
//! parameter-independent Morley operators, [`forward`] solves the harmonic
//! problem per frequency, [`sensitivity`] evaluates the least-squares loss with
//! exact gradient and Hessian, and [`inverse`] holds the trust-region and
//! differential-evolution optimizers.

pub mod error;
pub mod fem;
pub mod forward;
pub mod inverse;
pub mod io;
pub mod material;
pub mod mesh;
pub mod modal;
pub mod presets;
pub mod sensitivity;
pub mod sparse;

pub use error::{Error, Result};
pub use material::{MaterialParams, Modulus};
