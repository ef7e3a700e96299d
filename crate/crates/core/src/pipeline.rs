//! Per-frame compositions of the module operations, shared by the command
//! line front-end, benches and tests.

use thiserror::Error;

use crate::calib::{CalibrationSet, CameraModel};
use crate::cloud::{
    backproject, backproject_indexed, height_filter, spread_report, to_camera, to_velodyne,
    CloudError, CloudFilterConfig, Frame, GridCloud, PointCloud, SpreadReport,
};
use crate::depthmap::{box_smooth, clip_depth, disparity_to_depth_with, DepthError, DepthMap, DisparityMap, InstanceMask};
use crate::groundplane::{fit_ransac, gate_points, GroundPlane, PlaneError, PlaneRegionGate, RansacConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Plane(#[from] PlaneError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Converted {
    /// Velodyne-frame pseudo-LiDAR after the height cut.
    pub cloud: PointCloud,
    /// Points lifted from valid depth pixels.
    pub lifted: usize,
    /// Points removed by the height cut.
    pub height_dropped: usize,
}

/// Depth gate -> rectified-camera cloud -> Velodyne frame -> height cut.
pub fn depth_to_pseudo_lidar(
    depth: &DepthMap,
    calib: &CalibrationSet,
    filter: &CloudFilterConfig,
) -> Result<Converted, PipelineError> {
    filter.validate()?;
    let cam_cloud = backproject(&clip_depth(depth, &filter.depth_limits()), &calib.cam)?;
    let lifted = cam_cloud.len();
    let velo = to_velodyne(&cam_cloud, calib)?;
    let cloud = height_filter(&velo, filter)?;
    Ok(Converted {
        height_dropped: lifted - cloud.len(),
        lifted,
        cloud,
    })
}

/// [`depth_to_pseudo_lidar`] preceded by the disparity to depth conversion,
/// using the filter's depth limits.
pub fn disparity_to_pseudo_lidar(
    disparity: &DisparityMap,
    calib: &CalibrationSet,
    filter: &CloudFilterConfig,
) -> Result<Converted, PipelineError> {
    filter.validate()?;
    let depth = disparity_to_depth_with(disparity, &calib.cam, &filter.depth_limits())?;
    depth_to_pseudo_lidar(&depth, calib, filter)
}

/// Gates a cloud (either frame) to the road band and fits the plane.
pub fn estimate_ground(
    cloud: &PointCloud,
    calib: &CalibrationSet,
    gate: &PlaneRegionGate,
    ransac: &RansacConfig,
) -> Result<GroundPlane, PipelineError> {
    gate.validate()?;
    let cam_cloud = match cloud.frame {
        Frame::CameraRect => cloud.clone(),
        Frame::Velodyne => to_camera(cloud, calib)?,
    };
    let road = gate_points(&cam_cloud, gate)?;
    Ok(fit_ransac(&road, ransac)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlurStudy {
    pub smoothed: DepthMap,
    pub before: GridCloud,
    pub after: GridCloud,
    pub report: SpreadReport,
}

/// Smooths the depth map with a `kernel x kernel` mean filter and measures
/// how far each instance's points spread before and after.
pub fn blur_study(
    depth: &DepthMap,
    cam: &CameraModel,
    masks: &InstanceMask,
    kernel: usize,
) -> Result<BlurStudy, PipelineError> {
    let smoothed = box_smooth(depth, kernel)?;
    let before = backproject_indexed(depth, cam)?;
    let after = backproject_indexed(&smoothed, cam)?;
    let report = spread_report(&before, &after, masks)?;
    Ok(BlurStudy {
        smoothed,
        before,
        after,
        report,
    })
}
