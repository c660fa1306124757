//! Cyclist trajectory analytics: group tracked trajectories by where they
//! start and end, split each group by path shape, and measure how far the
//! observed movement departs from an intersection's designed paths.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`ingest`] reads trajectory files and the scene design file.
//! 2. [`preprocess`] drops broken trajectories and resamples by arc length.
//! 3. [`endpoint`] runs DBSCAN over 4-D source/destination vectors.
//! 4. [`pathcluster`] clusters each SD-cluster by [`dtw`] distance.
//! 5. [`compliance`] scores path-clusters against the designed paths.
//!
//! [`pipeline`] wires the stages together and writes every artifact;
//! [`synth`] generates scenes with known ground truth.

pub mod compliance;
pub mod dtw;
pub mod endpoint;
mod error;
pub mod export;
pub mod geometry;
pub mod ingest;
pub mod pathcluster;
pub mod pipeline;
pub mod preprocess;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Point, Polyline, Resolution, TrackPoint, TrajId, Trajectory, TrajectorySet};
pub use ingest::SceneSpec;
