//! Trait-structured SEIR epidemics on a discretized trait space.
//!
//! The crate covers the full numerical pipeline for the structured model
//!
//! ```text
//! dS/dt = -S (βI),  dE/dt = S (βI) - αE,  dI/dt = αE - γI (+ νΔI),  dR/dt = γI
//! ```
//!
//! where `(βI)(x) = ∫ β(x,y) I(y) dy` is evaluated by quadrature on a
//! [`TraitDomain`]:
//!
//! * [`dynamics`]: RK4 time integration, conserved-quantity monitoring and
//!   long-time limits.
//! * [`spectral`]: the discretized next-generation operator, its principal
//!   eigen-elements, R0, herd immunity, the crossing time T0 and decay-rate
//!   bounds.
//! * [`final_size`]: the final-size fixed point by monotone iteration and by
//!   contraction in the ψ-weighted norm, plus the two-block non-uniqueness
//!   construction.
//! * [`diffusion`]: the variant with a Neumann Laplacian in the infected
//!   compartment.
//! * [`reduced`]: rank-1 / rank-N closed forms and reduced ODE systems.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
mod linalg;
mod math;
mod ode;

pub mod diffusion;
pub mod domain;
pub mod dynamics;
pub mod final_size;
pub mod model;
pub mod reduced;
pub mod spectral;

pub use domain::{Field, Kernel, TraitDomain};
pub use error::{Error, Result};
pub use model::{EpidemicState, ModelParams, Scenario, Structure};
