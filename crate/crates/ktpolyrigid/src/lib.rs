//! Articulated volumetric deformation toolkit.
//!
//! Builds smooth, near-bijective dense deformations of articulated bodies
//! from a kinematic tree and volumetric skinning weights, and compares
//! three constructions of the field:
//!
//! * linear blend skinning (matrix averaging),
//! * polyrigid blending (averaging in the Lie algebra at the identity),
//! * kinematic-tree polyrigid blending (averaging relative motions in a
//!   local tangent space anchored at the dominant part), which stays
//!   well-defined under the large articulations that break the other two.
//!
//! Around that core: a projected-gradient solver that extends surface
//! skinning weights into the interior, a mean-value-coordinate shape flow
//! that standardizes body shape, Jacobian regularity metrics, groupwise
//! intensity-variance registration, synthetic articulated phantoms for
//! validation, and file formats plus a CLI tying the pipeline together.
//!
//! Start with the runnable examples (`cargo run --example full_pipeline`)
//! or the `ktpoly` binary.

pub mod cli;
pub mod deform;
pub mod error;
pub mod flow;
pub mod groupwise;
pub mod io;
pub mod kinematics;
pub mod mesh;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod render;
pub mod se3;
pub mod volume;
pub mod weights;

pub use error::{Error, Result};
