//! Numerical engine for continuous-time quantum processes under continuous
//! measurement, built on an exact algebra of complex Gaussian functionals
//! over discretized doubled trajectories.
//!
//! The crate provides
//!
//! * [`grid`] — time grids and labeling of doubled (ket/bra) trajectory
//!   variables;
//! * [`gauss`] — the Gaussian functional algebra (products, exact
//!   marginalization, boundary pinning, sampled positivity);
//! * [`process`] — constructors for process functionals: free oscillator
//!   action, double-time memory action, damped-oscillator processes,
//!   divisible (Markovian) products, Gaussian initial states;
//! * [`measure`] — constructors for operation functionals: continuous weak
//!   position measurement, Gaussian Kraus functionals, completeness checks;
//! * [`born`] — the functional Born rule: readout laws by direct
//!   marginalization and by the classical-trajectory (saddle) assembly,
//!   conditional states, record sampling, the projective limit;
//! * [`props`] — numerical verifiers for causality, trace preservation,
//!   normalization and divisibility;
//! * [`discrete`] — recovery of the discrete-time kernel formalism on
//!   interleaved partitions, with the discrete Born pairing;
//! * [`fock`] — a dense truncated-Fock oracle for brute-force
//!   cross-validation of the Gaussian engine.

pub mod born;
pub mod discrete;
pub mod error;
pub mod fock;
pub mod gauss;
pub mod grid;
pub mod linalg;
pub mod measure;
pub mod process;
pub mod props;

pub use error::{Error, Result};
pub use gauss::GaussianFunctional;
pub use grid::{Branch, Layout, TimeGrid, VarKind, VarLabel};
