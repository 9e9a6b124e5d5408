//! Compositional, equilibrium-free stability certification of power systems.

pub mod admm;
pub mod devices;
pub mod dissipativity;
pub mod equilibria;
pub mod error;
pub mod interconnect;
pub mod linalg;
pub mod sdp;

pub use error::{Error, Result};
