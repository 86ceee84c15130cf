//! Learns the parameters of a single-input single-output, time-invariant,
//! frequency-independent feedback delay network (FDN) from a measured room
//! impulse response, by gradient descent on a time-domain loss combining the
//! energy decay curve with a differentiable echo-density profile.
//!
//! The crate also renders impulse responses from learned parameters, computes
//! standard room-acoustic metrics, and builds a classical analytically
//! designed baseline FDN for comparison.

pub mod audio;
pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod fdn;
pub mod losses;
pub mod metrics;
pub mod params;
pub mod train;

pub use error::{Error, Result};
