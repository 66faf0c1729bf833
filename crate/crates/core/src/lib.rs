//! Spherical spin-glass loss landscapes and the neural-network approximation chain.
//!
//! The crate is organised bottom-up:
//!
//! - [`theory`]: complexity functions, energy thresholds and leading-order critical point counts.
//! - [`spinglass`]: the H-spin Hamiltonian on the sphere of radius `sqrt(Λ)` and its derivatives.
//! - [`optimizers`]: spherical gradient descent and simulated annealing.
//! - [`spectral`]: Hessian spectra, normalized index and energy band labels.
//! - [`approx`]: path-sum network model, reduction and uniformity correlations, loss equivalence.
//! - [`nn`]: a single hidden layer ReLU network used for the empirical arm.
//! - [`data`]: IDX parsing, downsampling and a synthetic digit generator.
//! - [`campaign`]: seeded trial campaigns, record files and report tables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod campaign;
pub mod data;
pub mod error;
pub mod format;
pub mod nn;
pub mod optimizers;
pub mod rng;
pub mod spectral;
pub mod spinglass;
pub mod theory;

pub use error::{Error, Result};
