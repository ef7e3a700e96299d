//! Pseudo-LiDAR: turning dense stereo depth into LiDAR-style point clouds.
//!
//! The crate covers the whole representation pipeline: KITTI calibration
//! ([`calib`]), disparity and depth maps ([`depthmap`]), back-projection and
//! point-cloud I/O ([`cloud`]), road-plane fitting ([`groundplane`]),
//! bird's-eye-view tensors ([`bev`]), KITTI-style 3D/BEV average precision
//! ([`boxeval`]) and an analytic scene renderer used as a test oracle
//! ([`synth`]).

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bev;
pub mod boxeval;
pub mod calib;
pub mod cloud;
pub mod depthmap;
pub mod groundplane;
pub mod pipeline;
pub mod synth;

pub use bev::{rasterize, BevConfig, BevTensor, HeightEncoding, Rasterized};
pub use boxeval::{
    evaluate, Box3D, Detection, Difficulty, EvalConfig, EvalReport, GtObject, Interpolation,
    Metric, ObjectClass,
};
pub use calib::{parse_kitti_calib, CalibrationSet, CameraModel, RigidTransform};
pub use cloud::{CloudFilterConfig, Frame, GridCloud, Point, PointCloud};
pub use depthmap::{DepthMap, DisparityMap, InstanceMask};
pub use groundplane::{GroundPlane, PlaneRegionGate, RansacConfig};
pub use synth::{render, SceneSpec};
