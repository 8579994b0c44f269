//! The forecasting network.
//!
//! Per input step, the target and each of its `K` sampled neighbors run
//! their own recurrent cell. The target then aggregates neighbors twice,
//! once through fixed spatial weights and once through learned temporal
//! attention, and neighbors receive a message from the target. After the
//! window, recency-weighted summaries of all `K+1` histories define a small
//! learned graph whose convolution refines the target representation
//! before a two-layer head emits the forecast.

mod check;
mod config;
mod forward;
pub mod layers;
mod params;

pub use check::model_gradcheck;
pub use config::{ModelConfig, SgMode};
pub use forward::{attention_traces, batch_loss, eval_rng, forward, forward_frozen, forward_with, predict_raw, AttentionTrace, ForwardPass, TraceStep};
pub use params::{CellSlots, Checkpoint, EncoderSlots, Layout, ModelParams, StoredTensor, CHECKPOINT_FORMAT};
