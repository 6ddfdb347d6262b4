//! Viewer-centred surface completion of partial car point clouds.
//!
//! The crate covers the full pipeline: synthetic scene generation by mesh
//! raycasting ([`synthgen`]), simulated-lidar subsampling ([`lidarsim`]),
//! a pose-estimating completion network built on a small explicit-backprop
//! substrate ([`nncore`], [`vcn`]), KNN/density post-processing
//! ([`postproc`]), and dataset/metrics plumbing ([`dataset`], [`pipeline`]).
//!
//! Coordinate conventions live in [`geometry`]; everything downstream
//! re-uses its types.

pub mod dataset;
pub mod geometry;
pub mod knn;
pub mod lidarsim;
pub mod nncore;
pub mod pipeline;
pub mod postproc;
pub mod synthgen;
pub mod vcn;

pub use geometry::{Box3, Frame, PointCloud, RigidPose, Rotation3, Vec3};
