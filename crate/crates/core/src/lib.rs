//! Estimation of temporally consistent rigid-body trajectories for object
//! instances seen as per-frame 3D point sets.
//!
//! The pipeline lifts 2D instance masks to labeled lidar points
//! ([`ingest`]), registers each frame against a growing canonical point set
//! ([`register`]), smooths the resulting pose measurements with a
//! coordinated-turn factor graph ([`ctsmooth`]) and scores the output with
//! CLEAR-MOT metrics ([`moteval`]). [`synthgen`] fabricates scenarios with
//! known ground truth for all of the above.

pub mod geometry;

pub use geometry::{umeyama, GeometryError, Pose, Tangent};
pub mod ingest;
pub mod spatial;

pub use ingest::{InstanceId, InstanceObservation};
pub mod ctsmooth;
pub mod io;
pub mod moteval;
pub mod register;
pub mod synthgen;
