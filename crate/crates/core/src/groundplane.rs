//! Per-frame road plane estimation from pseudo-LiDAR.
//!
//! Candidate ground points are first gated to a box in front of the camera.
//! The plane `wᵀp + h = 0` is then fit with RANSAC while holding `w_y = -1`,
//! which turns every hypothesis into the regression `y = w_x x + w_z z + h`
//! with three unknowns. The winning hypothesis is refit by least squares on
//! its inliers and finally scaled so that `‖w‖ = 1`.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cloud::{Frame, Point, PointCloud};

const SINGULAR_DET: f64 = 1e-12;

pub const DEFAULT_RANSAC_ITERS: usize = 200;
pub const DEFAULT_INLIER_THRESHOLD: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlaneError {
    #[error("need at least 3 points to fit a plane, got {0}")]
    TooFewPoints(usize),
    #[error("every sampled triple was degenerate")]
    DegenerateSample,
    #[error("expected a cloud in the rectified camera frame")]
    WrongFrame,
    #[error("invalid gate: {0}")]
    InvalidGate(String),
    #[error("bad plane file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane {
    /// Unit normal `w`, with `w_y < 0`.
    pub normal: Vector3<f64>,
    /// Offset `h` in `wᵀp + h = 0`, meters.
    pub offset: f64,
    pub inlier_count: usize,
    pub inlier_threshold: f64,
}

impl GroundPlane {
    /// Signed distance of `p` from the plane.
    #[inline]
    pub fn signed_distance(&self, p: &Point) -> f64 {
        self.normal.dot(&p.xyz()) + self.offset
    }
}

/// Closed intervals, rectified camera frame, selecting points that can be road.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneRegionGate {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
}

impl Default for PlaneRegionGate {
    fn default() -> Self {
        Self {
            x_range: (-15.0, 15.0),
            y_range: (1.5, 1.86),
            z_range: (0.0, 40.0),
        }
    }
}

impl PlaneRegionGate {
    pub fn validate(&self) -> Result<(), PlaneError> {
        for (name, (lo, hi)) in [
            ("x", self.x_range),
            ("y", self.y_range),
            ("z", self.z_range),
        ] {
            if !(lo <= hi) {
                return Err(PlaneError::InvalidGate(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, p: &Point) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(p.x, self.x_range) && inside(p.y, self.y_range) && inside(p.z, self.z_range)
    }
}

pub fn gate_points(pc: &PointCloud, gate: &PlaneRegionGate) -> Result<PointCloud, PlaneError> {
    if pc.frame != Frame::CameraRect {
        return Err(PlaneError::WrongFrame);
    }
    Ok(PointCloud::new(
        pc.points.iter().filter(|p| gate.contains(p)).copied().collect(),
        Frame::CameraRect,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iters: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iters: DEFAULT_RANSAC_ITERS,
            threshold: DEFAULT_INLIER_THRESHOLD,
            seed: 0,
        }
    }
}

/// `y = a x + c z + h`, i.e. `w = (a, -1, c)` before normalization.
#[derive(Debug, Clone, Copy)]
struct Hypothesis {
    a: f64,
    c: f64,
    h: f64,
}

impl Hypothesis {
    fn solve(m: Matrix3<f64>, rhs: Vector3<f64>) -> Option<Hypothesis> {
        if m.determinant().abs() < SINGULAR_DET {
            return None;
        }
        let s = m.lu().solve(&rhs)?;
        s.iter()
            .all(|v| v.is_finite())
            .then_some(Hypothesis {
                a: s[0],
                c: s[1],
                h: s[2],
            })
    }

    fn through(p: [&Point; 3]) -> Option<Hypothesis> {
        let m = Matrix3::new(
            p[0].x, p[0].z, 1.0, //
            p[1].x, p[1].z, 1.0, //
            p[2].x, p[2].z, 1.0,
        );
        Self::solve(m, Vector3::new(p[0].y, p[1].y, p[2].y))
    }

    fn least_squares<'a>(points: impl Iterator<Item = &'a Point>) -> Option<Hypothesis> {
        let mut ata = Matrix3::zeros();
        let mut atb = Vector3::zeros();
        for p in points {
            let row = Vector3::new(p.x, p.z, 1.0);
            ata += row * row.transpose();
            atb += row * p.y;
        }
        Self::solve(ata, atb)
    }

    fn norm(&self) -> f64 {
        (self.a * self.a + 1.0 + self.c * self.c).sqrt()
    }

    #[inline]
    fn residual(&self, p: &Point) -> f64 {
        self.a * p.x - p.y + self.c * p.z + self.h
    }

    fn count_inliers(&self, points: &[Point], threshold: f64) -> usize {
        let scaled = threshold * self.norm();
        points
            .iter()
            .filter(|p| self.residual(p).abs() <= scaled)
            .count()
    }

    fn is_inlier(&self, p: &Point, threshold: f64) -> bool {
        self.residual(p).abs() <= threshold * self.norm()
    }

    fn normalized(&self, points: &[Point], threshold: f64) -> GroundPlane {
        let n = self.norm();
        let plane = GroundPlane {
            normal: Vector3::new(self.a / n, -1.0 / n, self.c / n),
            offset: self.h / n,
            inlier_count: 0,
            inlier_threshold: threshold,
        };
        GroundPlane {
            inlier_count: points
                .iter()
                .filter(|p| plane.signed_distance(p).abs() <= threshold)
                .count(),
            ..plane
        }
    }
}

/// RANSAC with the `w_y = -1` constraint followed by a least-squares refit
/// on the inliers of the best hypothesis. The refit is kept only if it does
/// not lose inliers. Ties between hypotheses go to the earlier iteration, so
/// the result is a pure function of the input and `seed`.
pub fn fit_ransac(pc: &PointCloud, cfg: &RansacConfig) -> Result<GroundPlane, PlaneError> {
    let points = &pc.points;
    if points.len() < 3 {
        return Err(PlaneError::TooFewPoints(points.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Hypothesis, usize)> = None;
    for _ in 0..cfg.iters {
        let idx = rand::seq::index::sample(&mut rng, points.len(), 3);
        let Some(hyp) = Hypothesis::through([
            &points[idx.index(0)],
            &points[idx.index(1)],
            &points[idx.index(2)],
        ]) else {
            continue;
        };
        let count = hyp.count_inliers(points, cfg.threshold);
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((hyp, count));
        }
    }
    let (hyp, count) = best.ok_or(PlaneError::DegenerateSample)?;

    let refit = Hypothesis::least_squares(points.iter().filter(|p| hyp.is_inlier(p, cfg.threshold)))
        .filter(|r| r.count_inliers(points, cfg.threshold) >= count)
        .unwrap_or(hyp);
    Ok(refit.normalized(points, cfg.threshold))
}

fn fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    // keep -0.000000 out of the file
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

/// Plane file in the layout AVOD reads from `planes/*.txt`: three header
/// lines followed by `w_x w_y w_z h` with six decimals.
pub fn write_plane_file(plane: &GroundPlane) -> String {
    let mut out = String::from("# Plane\nWidth 4\nHeight 1\n");
    let _ = writeln!(
        out,
        "{} {} {} {}",
        fixed6(plane.normal.x),
        fixed6(plane.normal.y),
        fixed6(plane.normal.z),
        fixed6(plane.offset)
    );
    out
}

/// Reads the coefficient line of a plane file. Inlier bookkeeping is not
/// stored, so the returned plane has zero inliers and threshold.
pub fn parse_plane_file(text: &str) -> Result<GroundPlane, PlaneError> {
    let line = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .nth(3)
        .ok_or_else(|| PlaneError::Parse("missing coefficient line".into()))?;
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| PlaneError::Parse(e.to_string()))?;
    if vals.len() != 4 {
        return Err(PlaneError::Parse(format!("expected 4 values, got {}", vals.len())));
    }
    Ok(GroundPlane {
        normal: Vector3::new(vals[0], vals[1], vals[2]),
        offset: vals[3],
        inlier_count: 0,
        inlier_threshold: 0.0,
    })
}
