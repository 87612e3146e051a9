//! Safe episodic learning for partially known control-affine systems.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of the
//! pipeline: environments, random Fourier features, the ridge residual model
//! with its confidence balls and Thompson sampling, stochastic discrete-time
//! barrier constraints, the QP safety filter, the MPPI planner, the episodic
//! learner with its baselines, and Monte Carlo verification of the safety
//! guarantees. File formats and the command line live in the `safe-ctrl`
//! companion crate.

#![no_std]

extern crate alloc;

pub mod cbf;
pub mod domain;
pub mod envs;
pub mod error;
pub mod features;
pub mod filter;
pub mod learner;
pub mod linalg;
pub mod model;
pub mod planner;
pub mod verify;

pub use domain::{
    sample_gaussian_noise, seeded_rng, substream, Control, ControlBounds, EpisodeTrace,
    ExperimentConfig, NoiseSpec, SimRng, State, TraceStep,
};
pub use error::{Error, Result};
