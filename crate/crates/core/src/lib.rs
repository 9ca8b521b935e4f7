//! Two-phase porous-media flow toolkit: a locally conservative saddle-point
//! finite element method for the pressure equation, a Lagrangian-Eulerian
//! finite-volume scheme for saturation transport, and their IMPES coupling.

pub mod coupling;
pub mod elliptic;
pub mod error;
pub mod fields_io;
pub mod grid;
pub mod hyperbolic;
pub mod sparse;

pub use error::{Error, Result};
