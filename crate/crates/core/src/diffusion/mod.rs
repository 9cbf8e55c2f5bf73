//! Noise schedules, partial noising/denoising with anchored past rows, and the
//! dual-branch forecast.

pub mod chain;
pub mod forecast;
pub mod schedule;

pub use chain::{denoise_step, q_sample, q_sample_var, reverse_chain, sample_emf, stride_steps};
pub use forecast::{chain_rng, dual_forecast, Forecast, ForecastOptions};
pub use schedule::{make_schedule, Schedule};
