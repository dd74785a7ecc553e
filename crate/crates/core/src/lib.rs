//! Core library for an event-camera surveillance pipeline.
//!
//! The processing chain mirrors a low-power smart sensor: an event stream is
//! accumulated into fixed-interval frames, a cheap region proposer finds
//! moving objects in a downsized binary view, fixed-size patches around the
//! proposals are classified by a small from-scratch CNN, and a cost model
//! reports the compute/memory footprint of each candidate architecture.
//!
//! Everything is deterministic given the seeds in the various config structs;
//! see [`pipeline::RunConfig::strict_deterministic`] for the reproducibility
//! contract.

pub mod bbox;
pub mod cost;
pub mod dataset;
pub mod error;
pub mod event;
pub mod formats;
pub mod frame;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod region;
pub mod scene;

pub use bbox::BoundingBox;
pub use cost::{CostConfig, CostReport, MemoryMode, MemoryReport};
pub use dataset::{DatasetConfig, DatasetSplit, Patch, Sample, Scene, DATASET_FORMAT_VERSION};
pub use error::{Error, Result};
pub use event::{Event, EventStream, Polarity, SENSOR_HEIGHT, SENSOR_WIDTH};
pub use frame::{Frame, FrameConfig, Representation};
pub use metrics::{Metrics, PerClassMetrics, Prediction};
pub use nn::{ArchLabel, Network, TrainConfig, MODEL_FORMAT_VERSION, PATCH_SIZE};
pub use pipeline::{run_pipeline, RunConfig, RunOutcome};
pub use region::{Proposal, RpSource};
pub use scene::{ClassLabel, Keyframe, ObjectSpec, SceneConfig, TrackAnnotation, NUM_CLASSES};
