//! Physics-conditioned tactile grasping at desk scale.
//!
//! The pipeline ranks grasp candidates by contact-patch geometry, simulates a
//! quasi-static gel sensor with an analytic force-optimal grasp, learns a
//! variational latent space and a conditioned latent diffusion model that
//! predicts the force-optimal imprint, and closes the loop with an LQR servo
//! in the normalized latent error space.

pub mod codec;
pub mod config;
pub mod container;
pub mod control;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod image;
pub mod metrics;
pub(crate) mod nn;
pub mod numerics;
pub mod plant;

pub use error::{Error, Result};
pub use image::ImprintImage;
