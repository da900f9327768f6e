//! Grid-based tropical cyclone track forecasting.
//!
//! The pipeline: parse NOAA HURDAT2 best-track text ([`hurdat`]), derive
//! motion and grid-cell features on a 1-degree coordinate grid ([`geo`],
//! [`dataset`]), train a small encoder-only transformer with a tanh-bounded
//! regression head ([`model`], [`train`]) to predict the storm's grid cell
//! six hours ahead, and roll the model out into multi-step trajectories
//! ([`forecast`]).
//!
//! Everything numeric sits on a hand-built dense-matrix reverse-mode
//! differentiation engine ([`nn`]); there is no external ML dependency.
//!
//! Start with the `examples/` directory: each example is a runnable tour of
//! one capability (`cargo run --release --example end_to_end` walks the whole
//! pipeline on a bundled synthetic corpus).

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod forecast;
pub mod geo;
pub mod hurdat;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{Normalizer, SplitDataset, StepFeatures, WindowSample};
pub use geo::{GeoPoint, GridSpec};
pub use hurdat::{filter_tracks, parse_hurdat2, StormTrack};
pub use model::{forward, init_params, ModelConfig, ModelParams};
pub use train::{evaluate, train, Metrics, TrainConfig};
