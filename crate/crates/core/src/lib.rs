//! Dual-energy CT reconstruction of Compton and photoelectric coefficient
//! images.
//!
//! The crate provides the physics of the two-basis attenuation model, a
//! parallel-beam projector, per-ray dual-energy decomposition, (preconditioned)
//! conjugate-gradient solvers for the tomographic subproblem, and an ADMM
//! driver that alternates between them. Synthetic phantoms and a Poisson
//! measurement simulator make the whole pipeline runnable end to end.

pub mod admm;
pub mod decompose;
pub mod error;
pub mod io;
pub mod linsolve;
pub mod metrics;
pub mod phantom;
pub mod physics;
pub mod projector;
pub mod vecops;

pub use error::{DectError, Result};
pub use physics::{LogProjectionPair, RayIntegralPair, Spectrum, SpectrumPair};
pub use projector::{Image, OpCount, Projector, ScanGeometry, Sinogram};
