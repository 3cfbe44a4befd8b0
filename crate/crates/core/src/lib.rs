//! Semi-discrete near-field parallel refractors and reflectors.
//!
//! A vertical bundle of rays leaving `Omega` is redirected by a surface built
//! from ellipsoids of revolution (refraction) or paraboloids (reflection) so
//! that every target point receives its prescribed share of energy. The crate
//! also evaluates the target conditions that govern regularity of such
//! surfaces and traces rays to check the constructions physically.

pub mod error;
pub mod exec;
pub mod geometry;
pub mod optics;
pub mod raytrace;
pub mod regularity;
pub mod solver;
pub mod surface;
pub mod target;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::{Cylinder, OpticalConfig, OpticsKind, Omega, SpacePoint, SurfaceMode};
pub use optics::{EllipsoidPiece, ParaboloidPiece};
pub use surface::PiecewiseSurface;
pub use target::{DiscreteAtoms, GraphSurface, Target};
