//! Trajectory-set motion prediction core.
//!
//! Everything here is allocation-only `no_std`: planar geometry, greedy
//! ε-coverage trajectory sets, kinematic baselines, birds-eye-view rasters,
//! classification/regression losses with analytic gradients, a small MLP
//! head with its SGD training engine, evaluation metrics, and a procedural
//! driving-scene generator. File formats and the CLI live in the `trajcover`
//! crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod nnmodel;
pub mod physics;
pub mod raster;
pub mod rng;
pub mod scene;
pub mod synthdata;
pub mod trajset;

mod math;

pub use error::{Error, Result};
pub use geometry::{Frame, Point2, PolygonSet, Pose2, Trajectory};
pub use scene::{Scene, SceneContext};
pub use trajset::{CoverageMetric, TrajectorySet};
