//! Pseudo-LiDAR point clouds: back-projection of depth maps, frame
//! changes, the height cut, KITTI `.bin` I/O, pseudo-disparity ground truth
//! from real scans and the per-instance spread measurement.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::calib::{CalibrationSet, CameraModel, RigidTransform};
use crate::depthmap::{DepthLimits, DepthMap, DisparityMap, InstanceMask};

/// Reflectance given to every back-projected point; depth maps carry none.
pub const PSEUDO_REFLECTANCE: f64 = 1.0;

const BIN_RECORD: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("expected a cloud in the {expected:?} frame, got {got:?}")]
    WrongFrame { expected: Frame, got: Frame },
    #[error("dimension mismatch: depth map is {got:?}, camera expects {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("point file length {0} is not a multiple of 16 bytes")]
    TruncatedRecord(usize),
    #[error("cannot generate disparity from an empty cloud")]
    EmptyCloud,
    #[error("instance mask does not match the cloud's pixel grid: {0}")]
    MaskMismatch(String),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Frame {
    /// Rectified camera: x right, y down, z forward.
    CameraRect,
    /// LiDAR sensor: x forward, y left, z up.
    Velodyne,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub reflectance: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, reflectance: f64) -> Self {
        Self {
            x,
            y,
            z,
            reflectance,
        }
    }

    #[inline]
    pub fn xyz(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    #[inline]
    fn transformed(&self, t: &RigidTransform) -> Point {
        let p = t.apply(&self.xyz());
        Point::new(p.x, p.y, p.z, self.reflectance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, frame: Frame) -> Self {
        debug_assert!(points.iter().all(|p| (0.0..=1.0).contains(&p.reflectance)));
        Self { points, frame }
    }

    pub fn empty(frame: Frame) -> Self {
        Self::new(Vec::new(), frame)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn expect_frame(&self, expected: Frame) -> Result<(), CloudError> {
        if self.frame != expected {
            return Err(CloudError::WrongFrame {
                expected,
                got: self.frame,
            });
        }
        Ok(())
    }

    pub fn transformed(&self, t: &RigidTransform, frame: Frame) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p.transformed(t)).collect(),
            frame,
        }
    }
}

/// A cloud that remembers which pixel (row-major index) produced each point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCloud {
    pub cloud: PointCloud,
    pub pixels: Vec<u32>,
    pub width: usize,
    pub height: usize,
}

/// Post-processing applied to pseudo-LiDAR before it is handed to a
/// LiDAR-style consumer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudFilterConfig {
    /// Points higher than this above the LiDAR origin are removed, meters.
    pub max_height_above_lidar: f64,
    pub depth_ceiling: f64,
    pub min_depth: f64,
}

impl Default for CloudFilterConfig {
    fn default() -> Self {
        Self {
            max_height_above_lidar: 1.0,
            depth_ceiling: crate::depthmap::DEFAULT_MAX_DEPTH,
            min_depth: 0.0,
        }
    }
}

impl CloudFilterConfig {
    pub fn validate(&self) -> Result<(), CloudError> {
        if self.max_height_above_lidar.is_nan() || self.max_height_above_lidar == f64::NEG_INFINITY
        {
            return Err(CloudError::InvalidConfig(
                "max height must be a number".into(),
            ));
        }
        if !(self.min_depth >= 0.0 && self.depth_ceiling > self.min_depth) {
            return Err(CloudError::InvalidConfig(format!(
                "need 0 <= min_depth < depth_ceiling, got {} and {}",
                self.min_depth, self.depth_ceiling
            )));
        }
        Ok(())
    }

    pub fn depth_limits(&self) -> DepthLimits {
        DepthLimits {
            min_depth: self.min_depth,
            max_depth: self.depth_ceiling,
            ..DepthLimits::default()
        }
    }
}

fn check_grid(d: &DepthMap, cam: &CameraModel) -> Result<(), CloudError> {
    if d.size() != cam.image_size() {
        return Err(CloudError::DimensionMismatch {
            expected: cam.image_size(),
            got: d.size(),
        });
    }
    Ok(())
}

/// Lifts every valid pixel to `z = D(u,v)`, `x = (u - c_u) z / f_u`,
/// `y = (v - c_v) z / f_v` in the rectified camera frame (less the camera's
/// rectification offset). Points come out in row-major pixel order.
pub fn backproject(d: &DepthMap, cam: &CameraModel) -> Result<PointCloud, CloudError> {
    check_grid(d, cam)?;
    let mut points = Vec::with_capacity(d.valid_count());
    for_each_lifted(d, cam, |_, p| points.push(p));
    Ok(PointCloud::new(points, Frame::CameraRect))
}

/// [`backproject`] that also records the source pixel of each point.
pub fn backproject_indexed(d: &DepthMap, cam: &CameraModel) -> Result<GridCloud, CloudError> {
    check_grid(d, cam)?;
    let n = d.valid_count();
    let mut points = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n);
    for_each_lifted(d, cam, |i, p| {
        points.push(p);
        pixels.push(i as u32);
    });
    Ok(GridCloud {
        cloud: PointCloud::new(points, Frame::CameraRect),
        pixels,
        width: d.width(),
        height: d.height(),
    })
}

#[inline]
fn for_each_lifted(d: &DepthMap, cam: &CameraModel, mut f: impl FnMut(usize, Point)) {
    let (w, h) = d.size();
    let (inv_fu, inv_fv) = (1.0 / cam.f_u, 1.0 / cam.f_v);
    let values = d.values();
    let valid = d.valid_mask();
    for v in 0..h {
        let ry = (v as f64 - cam.c_v) * inv_fv;
        let row = v * w;
        for u in 0..w {
            let i = row + u;
            if !valid[i] {
                continue;
            }
            let z = values[i];
            let rx = (u as f64 - cam.c_u) * inv_fu;
            f(
                i,
                Point::new(
                    rx * z - cam.offset[0],
                    ry * z - cam.offset[1],
                    z,
                    PSEUDO_REFLECTANCE,
                ),
            );
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Projection {
    pub points: Vec<ImagePoint>,
    /// Index into the source cloud of each projected point.
    pub source: Vec<usize>,
    pub behind_camera: usize,
}

/// Pinhole projection of a rectified-camera cloud. Points with `z <= 0`
/// are dropped and counted.
pub fn project_to_image(pc: &PointCloud, cam: &CameraModel) -> Result<Projection, CloudError> {
    pc.expect_frame(Frame::CameraRect)?;
    let mut out = Projection {
        points: Vec::with_capacity(pc.len()),
        source: Vec::with_capacity(pc.len()),
        behind_camera: 0,
    };
    for (i, p) in pc.points.iter().enumerate() {
        if !(p.z > 0.0) {
            out.behind_camera += 1;
            continue;
        }
        out.points.push(ImagePoint {
            u: cam.f_u * (p.x + cam.offset[0]) / p.z + cam.c_u,
            v: cam.f_v * (p.y + cam.offset[1]) / p.z + cam.c_v,
            depth: p.z,
        });
        out.source.push(i);
    }
    Ok(out)
}

pub fn to_velodyne(pc: &PointCloud, calib: &CalibrationSet) -> Result<PointCloud, CloudError> {
    pc.expect_frame(Frame::CameraRect)?;
    Ok(pc.transformed(&calib.cam_to_velo(), Frame::Velodyne))
}

pub fn to_camera(pc: &PointCloud, calib: &CalibrationSet) -> Result<PointCloud, CloudError> {
    pc.expect_frame(Frame::Velodyne)?;
    Ok(pc.transformed(&calib.velo_to_rect(), Frame::CameraRect))
}

/// Keeps points whose Velodyne up-coordinate is at most
/// `max_height_above_lidar` (inclusive), preserving order.
pub fn height_filter(pc: &PointCloud, cfg: &CloudFilterConfig) -> Result<PointCloud, CloudError> {
    pc.expect_frame(Frame::Velodyne)?;
    Ok(PointCloud {
        points: pc
            .points
            .iter()
            .filter(|p| p.z <= cfg.max_height_above_lidar)
            .copied()
            .collect(),
        frame: Frame::Velodyne,
    })
}

/// Sparse disparity map from a real scan: points are moved into the
/// rectified camera, projected to the nearest pixel and converted with
/// `Y = f_u b / z`. When several points land on one pixel a uniformly random
/// one is kept, drawn from a generator seeded with `seed`.
pub fn pseudo_disparity_gt(
    lidar: &PointCloud,
    calib: &CalibrationSet,
    image_size: (usize, usize),
    seed: u64,
) -> Result<DisparityMap, CloudError> {
    if lidar.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    lidar.expect_frame(Frame::Velodyne)?;
    let cam = &calib.cam;
    let (w, h) = image_size;
    let t = calib.velo_to_rect();
    let fb = cam.focal_baseline();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0u32; w * h];
    let mut map = DisparityMap::invalid(w, h);
    for p in &lidar.points {
        let q = t.apply(&p.xyz());
        if !(q.z > 0.0) {
            continue;
        }
        let u = (cam.f_u * (q.x + cam.offset[0]) / q.z + cam.c_u).round();
        let v = (cam.f_v * (q.y + cam.offset[1]) / q.z + cam.c_v).round();
        if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
            continue;
        }
        let (u, v) = (u as usize, v as usize);
        let k = &mut hits[v * w + u];
        *k += 1;
        // reservoir of size one: the k-th arrival replaces with prob 1/k
        if *k == 1 || rng.random_range(0..*k) == 0 {
            map.set(u, v, Some(fb / q.z));
        }
    }
    Ok(map)
}

/// Parses a KITTI Velodyne scan: little-endian f32 quadruples
/// `(x, y, z, reflectance)`.
pub fn read_bin(bytes: &[u8]) -> Result<PointCloud, CloudError> {
    if !bytes.len().is_multiple_of(BIN_RECORD) {
        return Err(CloudError::TruncatedRecord(bytes.len()));
    }
    let points = bytes
        .chunks_exact(BIN_RECORD)
        .map(|r| {
            let f = |o: usize| f32::from_le_bytes([r[o], r[o + 1], r[o + 2], r[o + 3]]) as f64;
            Point::new(f(0), f(4), f(8), f(12))
        })
        .collect();
    Ok(PointCloud {
        points,
        frame: Frame::Velodyne,
    })
}

pub fn write_bin(pc: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(pc.len() * BIN_RECORD);
    for p in &pc.points {
        for v in [p.x, p.y, p.z, p.reflectance] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Axis-aligned extent of a set of points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub count: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Extent {
    pub fn of<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Extent> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut e = Extent {
            count: 1,
            min: [first.x, first.y, first.z],
            max: [first.x, first.y, first.z],
        };
        for p in it {
            e.count += 1;
            for (k, c) in [p.x, p.y, p.z].into_iter().enumerate() {
                e.min[k] = e.min[k].min(c);
                e.max[k] = e.max[k].max(c);
            }
        }
        Some(e)
    }

    /// `(Δx, Δy, Δz)`.
    pub fn size(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpread {
    pub id: u16,
    pub before: Option<Extent>,
    pub after: Option<Extent>,
}

impl InstanceSpread {
    /// Per-axis `after / before`; `None` if either side has no points.
    /// A zero-width axis gives 1 when both sides are flat, infinity otherwise.
    pub fn ratio(&self) -> Option<[f64; 3]> {
        let (b, a) = (self.before?.size(), self.after?.size());
        Some(std::array::from_fn(|k| {
            if b[k] == 0.0 {
                if a[k] == 0.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            } else {
                a[k] / b[k]
            }
        }))
    }

    /// Ratio along the camera's optical axis (z of the rectified frame).
    pub fn depth_ratio(&self) -> Option<f64> {
        self.ratio().map(|r| r[2])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpreadReport {
    pub instances: Vec<InstanceSpread>,
}

impl SpreadReport {
    pub fn get(&self, id: u16) -> Option<&InstanceSpread> {
        self.instances.iter().find(|s| s.id == id)
    }

    /// Tab-separated table, one row per instance; absent values print as `-`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "id\tn_before\tn_after\tdx_before\tdy_before\tdz_before\tdx_after\tdy_after\tdz_after\tratio_x\tratio_y\tratio_z\n",
        );
        let dash3 = || ["-".to_string(), "-".to_string(), "-".to_string()];
        let fmt3 = |v: [f64; 3]| v.map(|x| format!("{x:.6}"));
        for s in &self.instances {
            let nb = s.before.map_or(0, |e| e.count);
            let na = s.after.map_or(0, |e| e.count);
            let b = s.before.map_or_else(dash3, |e| fmt3(e.size()));
            let a = s.after.map_or_else(dash3, |e| fmt3(e.size()));
            let r = s.ratio().map_or_else(dash3, fmt3);
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                s.id,
                nb,
                na,
                b.join("\t"),
                a.join("\t"),
                r.join("\t")
            );
        }
        out
    }
}

/// Compares per-instance extents of two clouds lifted from the same pixel
/// grid, e.g. before and after smoothing the depth map. Every id from 1 to
/// the mask's largest id gets a row; an instance without points on one side
/// is reported as absent there.
pub fn spread_report(
    before: &GridCloud,
    after: &GridCloud,
    masks: &InstanceMask,
) -> Result<SpreadReport, CloudError> {
    for (name, g) in [("before", before), ("after", after)] {
        if (g.width, g.height) != (masks.width, masks.height) {
            return Err(CloudError::MaskMismatch(format!(
                "{name} cloud grid is {}x{}, mask is {}x{}",
                g.width, g.height, masks.width, masks.height
            )));
        }
        if g.pixels.len() != g.cloud.len() {
            return Err(CloudError::MaskMismatch(format!(
                "{name} cloud has {} points but {} pixel indices",
                g.cloud.len(),
                g.pixels.len()
            )));
        }
        if g.pixels.iter().any(|&i| i as usize >= masks.ids.len()) {
            return Err(CloudError::MaskMismatch(format!(
                "{name} cloud references a pixel outside the mask"
            )));
        }
    }
    if before.cloud.frame != after.cloud.frame {
        return Err(CloudError::WrongFrame {
            expected: before.cloud.frame,
            got: after.cloud.frame,
        });
    }

    let extents = |g: &GridCloud, id: u16| {
        Extent::of(
            g.cloud
                .points
                .iter()
                .zip(&g.pixels)
                .filter(|(_, &i)| masks.ids[i as usize] == id)
                .map(|(p, _)| p),
        )
    };
    let instances = (1..=masks.max_id())
        .map(|id| InstanceSpread {
            id,
            before: extents(before, id),
            after: extents(after, id),
        })
        .collect();
    Ok(SpreadReport { instances })
}
