//! Camera localization from ellipsoid landmarks.
//!
//! Objects in a scene are abstracted as ellipsoids and their detections as ellipses. The
//! crate covers the conic/quadric algebra relating the two, multi-view reconstruction of
//! the ellipsoid map, an embedding-based ellipse loss with analytic gradients, minimal pose
//! solvers with RANSAC data association, accuracy metrics, and a synthetic scene harness.

pub mod association;
pub mod conic;
pub mod error;
pub mod experiments;
pub mod io;
pub mod loss;
pub mod metrics;
mod polygon;
pub mod quadric;
pub mod reconstruction;
pub mod sim;
pub mod solvers;

pub use conic::{BBox, DualConic, Ellipse};
pub use error::{Error, Result};
pub use quadric::{Camera, CameraIntrinsics, DualQuadric, Ellipsoid, Pose};
