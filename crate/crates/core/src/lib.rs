//! Numerical laboratory for a hyperbolic toral automorphism whose linear map is
//! composed with a local rotation that bends the unstable foliation until it is
//! tangent to the stable one at a heteroclinic point. The resulting map is a
//! non-Anosov homeomorphism that stays topologically conjugate to the linear map.
//!
//! Module map:
//! - [`torus`]: points on the cover `R^2 / kZ^2`, the automorphism, periodic points.
//! - [`perturbation`]: the rotation bump and the perturbed map with its derivatives.
//! - [`cocycle`]: invariant directions, cone fields, region atlas, leaf integration.
//! - [`conjugacy`]: the conjugacy series, its inverse, and the on-disk grid.
//! - [`holder`]: log-log exponent estimation and the beak geometry.
//! - [`spectrum`]: periodic data of the perturbed map.
//! - [`shadowing`]: pseudo-orbits, linear shadowing and the tangent-vector experiment.
//! - [`harness`]: config, seeds, subcommands and report writers.

pub mod cocycle;
pub mod conjugacy;
pub mod error;
pub mod fit;
pub mod geom;
pub mod harness;
pub mod holder;
pub mod perturbation;
pub mod shadowing;
pub mod spectrum;
pub mod torus;

#[cfg(test)]
mod testutil;

pub use error::{LabError, Result};
