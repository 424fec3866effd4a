//! Exact stochastic simulation of the symmetric exclusion process superposed
//! with Glauber creation/annihilation on the discrete torus, together with the
//! macroscopic objects used to study its moderate-deviation behaviour: the
//! linear hydrodynamic equation, its inverse problem, the quadratic rate
//! functional, and the exponential martingale used as a change of measure.
//!
//! The crate is `no_std` (with `alloc`). The spectral [`field`] module needs
//! an FFT backend and is only available with the default `std` feature.
//!
//! Conventions used throughout:
//!
//! * The lattice torus `T_n^d` is linearised with the first axis fastest:
//!   `site = x_1 + n x_2 + ... + n^{d-1} x_d`.
//! * The macroscopic torus is the unit torus `[0,1)^d`; lattice site `x`
//!   sits at `x/n`, grid node `j` at `j/m`.
//! * Fourier modes are `k ∈ Z^d` with Laplacian symbol `-4π²|k|²`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
#[cfg(feature = "std")]
pub mod field;
pub mod lattice;
pub mod model;
pub mod observables;
pub mod rng;
pub mod simulate;
mod sum;

pub use error::{Error, Result};
pub use lattice::{Configuration, Event, Torus};
pub use model::{DerivedConstants, ModelParams, ScalingParams};
pub use simulate::{LatticeField, Observer, SimConfig, TiltControl, Trajectory};
