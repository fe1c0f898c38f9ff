//! defectscope: a numerical laboratory for oscillation and concentration
//! diagnostics of bounded sequences on periodic grids.
//!
//! The crate measures where the L2 mass of a weakly convergent sequence
//! escapes compactness: jointly in space and in frequency directions, where
//! "direction" is generalized from rays to curved fibres adapted to mixed
//! fractional scalings. On top of that sit diagnostics for scalar
//! conservation laws with fractional directional derivatives: entropy defect
//! functionals, genuine-nonlinearity indices, and relaxation experiments that
//! track how oscillatory initial data loses its oscillation.
//!
//! Module map:
//!
//! * [`spectral`]: periodic grids, sampled fields, DFT in integral convention.
//! * [`fibration`]: curve families fibring frequency space, the manifolds
//!   they project onto, and meshes of those manifolds.
//! * [`symbols`]: Fourier multipliers adapted to a fibration, commutator
//!   matrices and their compactness profiles.
//! * [`hmeasure`]: quadratic-form estimates of direction-resolved defect
//!   measures for sequences of fields.
//! * [`conslaw`]: kinetic lifts, entropy defect forms, nonlinearity indices,
//!   and relaxation experiments for fractional conservation laws.

pub mod conslaw;
pub mod error;
pub mod fibration;
pub mod hmeasure;
pub mod spectral;
pub mod symbols;

pub use error::{Error, Result};
