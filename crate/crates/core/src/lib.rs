//! Simulation and training toolkit for a reinforcement-learning tuned active EMI filter.
//!
//! The crate is organised bottom-up:
//!
//! * [`circuit`] - analytic frequency-domain model of the voltage-sensing,
//!   current-injecting active filter and its design equations.
//! * [`signal`] - EMI line datasets, time-series synthesis and Hann-windowed FFT spectra.
//! * [`env`] - the tuning task as a Markov decision process over the injection capacitance.
//! * [`neural`] - a small dense-network stack (MLP, Adam, VAE) written from scratch.
//! * [`agents`] - tabular Q-learning, SARSA, DQN and the VAE-augmented EQRL learner.
//! * [`eval`] - insertion loss, RMSE and reward statistics plus report emission.

pub mod agents;
pub mod circuit;
pub mod env;
mod error;
pub mod eval;
pub mod neural;
pub mod rng;
pub mod signal;

pub use error::{Error, Result};
