//! Non-contextual hidden-variable models for finite-precision quantum
//! measurements.
//!
//! The crate builds dense families of measurement contexts that admit
//! truth valuations (projective: [`basisfamily`] + [`pba`]; positive-operator
//! valued: [`povmfamily`]), samples hidden-variable valuations that reproduce
//! Born statistics ([`simulator`]), and checks truth-function existence for
//! arbitrary finite operator sets ([`kscheck`]).

pub mod basisfamily;
pub mod born;
pub mod kscheck;
pub mod error;
pub mod opcore;
pub mod pba;
pub mod povmfamily;
pub mod random;
pub mod rational;
pub mod simulator;

pub use error::{Error, Result};
pub use opcore::{
    basis_distance, commutator, operator_norm, spectral_resolution, validate_resolution,
    ComplexOperator, DensityOperator, HermitianObservable, OrthonormalBasis, Projection, C64,
};
