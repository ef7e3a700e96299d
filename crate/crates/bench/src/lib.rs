//! Deterministic inputs shared by the benches.

use pseudolidar::{CalibrationSet, CameraModel, DisparityMap, Frame, Point, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KITTI_SIZE: (usize, usize) = (1242, 375);

pub fn kitti_calib() -> CalibrationSet {
    let cam = CameraModel::new(721.5377, 721.5377, 609.5593, 172.854, 0.54, KITTI_SIZE)
        .expect("valid camera")
        .with_offset([0.0622, 0.0003]);
    let mut calib = CalibrationSet::identity(cam);
    calib.velo_to_cam = pseudolidar::synth::default_velo_to_cam();
    calib
}

/// Fully valid disparity map with depths between 2 and 80 m.
pub fn dense_disparity(seed: u64) -> DisparityMap {
    let (w, h) = KITTI_SIZE;
    let fb = 721.5377 * 0.54;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..w * h).map(|_| rng.random_range(fb / 80.0..fb / 2.0)).collect();
    DisparityMap::from_values(w, h, values).expect("sized map")
}

/// Velodyne-frame cloud spread over the default BEV extent.
pub fn velodyne_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            Point::new(
                rng.random_range(0.0..70.0),
                rng.random_range(-40.0..40.0),
                rng.random_range(-2.5..1.0),
                1.0,
            )
        })
        .collect();
    PointCloud::new(points, Frame::Velodyne)
}

/// Flat road at 1.65 m below the camera with a fraction of clutter above it.
pub fn road_cloud(n: usize, outliers: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let y = if rng.random::<f64>() < outliers {
                rng.random_range(-2.0..1.5)
            } else {
                1.65 + rng.random_range(-0.01..0.01)
            };
            Point::new(rng.random_range(-15.0..15.0), y, rng.random_range(2.0..40.0), 1.0)
        })
        .collect();
    PointCloud::new(points, Frame::CameraRect)
}
