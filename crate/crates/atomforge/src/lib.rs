//! Simulation and analysis toolkit for delivering tweezer-trapped atoms onto
//! suspended photonic devices: membrane standing-wave optics, loading Monte
//! Carlo, blow-out and two-photon spectroscopy, fluorescence imaging,
//! autofocus scoring, rearrangement planning, and frame analysis.

pub mod analysis;
pub mod atoms;
pub mod autofocus;
pub mod cli;
pub mod config;
pub mod constants;
pub mod error;
pub mod optics;
pub mod fit;
pub mod image;
pub mod imaging;
pub mod montecarlo;
pub mod planner;
pub mod rng;
pub mod spectroscopy;

pub use config::{load_config, Config};
pub use error::{Error, Result};

pub use cli::run as run_cli;
