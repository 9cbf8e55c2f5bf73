//! Egocentric hand-motion forecasting with a dual-branch latent diffusion
//! model: a head-egomotion branch and a hand-motion branch whose denoiser mixes
//! motion-conditioned selective scans with attention over 3D scene context and
//! task text.

pub mod config;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod encoders;
pub mod error;
pub mod evalcli;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
pub use model::Model;
