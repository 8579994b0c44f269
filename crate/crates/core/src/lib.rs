//! Spatio-temporal hybrid graph attention network (STAHGNet) for traffic
//! flow forecasting.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffcore`]: dense tensors and a reverse-mode tape with finite
//!   difference checking.
//! - [`data`]: road graphs, flow series, neighbor sampling, feature
//!   engineering and windowing.
//! - [`model`]: the recurrent encoders, hybrid graph attention, coarse
//!   temporal graph and predictor.
//! - [`train`]: loss, Adam, the fit/evaluate loop and grid search.
//! - [`synth`]: seeded synthetic road networks and trivial baselines.
//! - [`cli`]: the `stahgnet` command line.

pub mod cli;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod model;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
