//! Morley plate elements and assembly of the constant operators.

pub mod assembly;
pub mod morley;

pub use assembly::{
    assemble, assemble_unconstrained, assemble_with, AccelMode, AssemblyOptions, ConstantOperators,
    DofMap, UnconstrainedOperators,
};
pub use morley::{ElementMatrices, MorleyElement};
