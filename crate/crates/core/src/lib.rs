//! Channel synthesis and joint optimization for IRS-aided MIMO visible-light
//! communication.
//!
//! The crate covers the whole numerical pipeline:
//!
//! * [`scene`]: LED / photodiode / IRS-unit placement and link geometry.
//! * [`channel`]: Lambertian line-of-sight gains, specular IRS gains, and the
//!   assembly of the MIMO channel `H = H1 + H2(V)`.
//! * [`association`]: IRS unit-to-transceiver assignments (`F`, `G`, `V`).
//! * [`objective`]: demodulation MSE, SNR and the emission-power constraints.
//! * [`solver`]: the alternating optimizer and its three block solvers.
//! * [`baselines`]: ZF / MMSE precoding and the no-IRS reference.
//! * [`montecarlo`]: PAM link simulation and BER estimation.
//!
//! Everything here is `no_std` + `alloc`; file formats, the CLI and thread
//! pools live in the `irs-vlc` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod association;
pub mod baselines;
pub mod channel;
mod error;
pub mod linalg;
mod math;
pub mod montecarlo;
pub mod objective;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};

pub use association::{Assignment, RelaxedV, Violation};
pub use channel::ChannelSet;
pub use montecarlo::{BerEstimate, PamConfig};
pub use objective::{Design, PamNormalizer, PowerBudget, SignalStats};
pub use scene::{LinkGeometry, OpticalParams, Point3, Scene, SceneConfig};
pub use solver::{SolverOptions, SolverReport};
