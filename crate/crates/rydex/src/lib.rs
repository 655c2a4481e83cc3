//! Atom–photon spin-exchange collisions in a Rydberg-dressed double-EIT medium.
//!
//! Internal units: time in μs, length in μm, angular frequency in rad/μs.

pub mod density;
pub mod error;
pub mod params;
pub mod potential;
mod quad;
pub mod repeater;
pub mod scatter1d;
pub mod subtractor;
pub mod timedomain;
pub mod transport;
pub mod twophoton;

pub use error::{Error, Result};
pub use num_complex::Complex64;
