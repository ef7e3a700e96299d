//! KITTI-style calibration: pinhole intrinsics, stereo baseline and the
//! rigid transforms between the rectified camera and the Velodyne frame.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Image size assumed when a calibration file carries none (KITTI left color camera).
pub const DEFAULT_IMAGE_SIZE: (usize, usize) = (1242, 375);

const ORTHONORMAL_TOL: f64 = 1e-6;
// KITTI prints rotations with 7 significant digits; the parser accepts that
// and re-projects onto SO(3).
const PARSE_ORTHONORMAL_TOL: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("calibration key `{0}` is missing")]
    MissingKey(String),
    #[error("calibration key `{0}` appears more than once")]
    DuplicateKey(String),
    #[error("matrix `{name}` expects {expected} values, got {got}")]
    MalformedMatrix {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("matrix `{name}` has an unparsable value `{token}`")]
    BadNumber { name: String, token: String },
    #[error("rotation `{0}` is not orthonormal")]
    NonOrthonormalRotation(String),
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
}

/// Rectified pinhole camera with its stereo baseline.
///
/// `offset` is the translation baked into the fourth column of the
/// projection matrix, expressed in meters (`P[0,3]/f_u`, `P[1,3]/f_v`). It is
/// zero for the reference camera and applied by projection and
/// back-projection alike, so leaving it in is always self-consistent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub f_u: f64,
    pub f_v: f64,
    pub c_u: f64,
    pub c_v: f64,
    pub baseline: f64,
    pub width: usize,
    pub height: usize,
    pub offset: [f64; 2],
}

impl CameraModel {
    pub fn new(
        f_u: f64,
        f_v: f64,
        c_u: f64,
        c_v: f64,
        baseline: f64,
        image_size: (usize, usize),
    ) -> Result<Self, CalibError> {
        let cam = Self {
            f_u,
            f_v,
            c_u,
            c_v,
            baseline,
            width: image_size.0,
            height: image_size.1,
            offset: [0.0, 0.0],
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn with_offset(mut self, offset: [f64; 2]) -> Self {
        self.offset = offset;
        self
    }

    /// The same camera with the rectification offset dropped, i.e. the bare
    /// pinhole model of a reference camera.
    pub fn without_offset(self) -> Self {
        self.with_offset([0.0, 0.0])
    }

    pub fn with_image_size(mut self, width: usize, height: usize) -> Result<Self, CalibError> {
        self.width = width;
        self.height = height;
        self.validate()?;
        Ok(self)
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// `f_u * b`, the numerator of the disparity/depth relation.
    #[inline]
    pub fn focal_baseline(&self) -> f64 {
        self.f_u * self.baseline
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        let finite = [self.f_u, self.f_v, self.c_u, self.c_v, self.baseline]
            .iter()
            .chain(self.offset.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(CalibError::InvalidCamera("non-finite parameter".into()));
        }
        if self.f_u <= 0.0 || self.f_v <= 0.0 {
            return Err(CalibError::InvalidCamera(format!(
                "focal lengths must be positive (f_u={}, f_v={})",
                self.f_u, self.f_v
            )));
        }
        if self.baseline <= 0.0 {
            return Err(CalibError::InvalidCamera(format!(
                "baseline must be positive, got {}",
                self.baseline
            )));
        }
        if !(0.0..self.width as f64).contains(&self.c_u)
            || !(0.0..self.height as f64).contains(&self.c_v)
        {
            return Err(CalibError::InvalidCamera(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.c_u, self.c_v, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, CalibError> {
        if !is_rotation(&rotation, ORTHONORMAL_TOL) {
            return Err(CalibError::NonOrthonormalRotation("rigid transform".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Result<Self, CalibError> {
        Self::new(rotation, Vector3::zeros())
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Everything a KITTI `calib/*.txt` file tells us about one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub cam: CameraModel,
    pub rect_rotation: Matrix3<f64>,
    pub velo_to_cam: RigidTransform,
    pub source_file: Option<PathBuf>,
}

impl CalibrationSet {
    /// Calibration where the Velodyne and rectified camera frames coincide.
    pub fn identity(cam: CameraModel) -> Self {
        Self {
            cam,
            rect_rotation: Matrix3::identity(),
            velo_to_cam: RigidTransform::identity(),
            source_file: None,
        }
    }

    /// Velodyne -> rectified camera, i.e. `R0_rect ∘ Tr_velo_to_cam`.
    pub fn velo_to_rect(&self) -> RigidTransform {
        RigidTransform {
            rotation: self.rect_rotation,
            translation: Vector3::zeros(),
        }
        .compose(&self.velo_to_cam)
    }

    /// Rectified camera -> Velodyne.
    pub fn cam_to_velo(&self) -> RigidTransform {
        self.velo_to_rect().inverse()
    }

    pub fn with_image_size(mut self, width: usize, height: usize) -> Result<Self, CalibError> {
        self.cam = self.cam.with_image_size(width, height)?;
        Ok(self)
    }

    pub fn with_source(mut self, path: impl Into<PathBuf>) -> Self {
        self.source_file = Some(path.into());
        self
    }
}

/// Free-function form of [`CalibrationSet::cam_to_velo`].
pub fn cam_to_velo(calib: &CalibrationSet) -> RigidTransform {
    calib.cam_to_velo()
}

fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    err <= tol && (r.determinant() - 1.0).abs() <= tol * 3.0
}

/// Nearest rotation matrix in the Frobenius sense.
fn project_to_so3(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

fn checked_rotation(name: &str, r: Matrix3<f64>) -> Result<Matrix3<f64>, CalibError> {
    if !is_rotation(&r, PARSE_ORTHONORMAL_TOL) {
        return Err(CalibError::NonOrthonormalRotation(name.to_string()));
    }
    Ok(project_to_so3(&r))
}

/// Parses a KITTI object-detection calibration file.
///
/// Required keys are `P2`, `P3` (12 values each), `R0_rect` (9) and
/// `Tr_velo_to_cam` (12). Unknown keys are ignored, line order is
/// irrelevant and a repeated key is an error. The image size is not part of
/// the format; [`DEFAULT_IMAGE_SIZE`] is used until
/// [`CalibrationSet::with_image_size`] says otherwise.
pub fn parse_kitti_calib(text: &str) -> Result<CalibrationSet, CalibError> {
    let mut entries: HashMap<&str, Vec<&str>> = HashMap::new();
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim();
        if key.is_empty() {
            continue;
        }
        if entries
            .insert(key, rest.split_whitespace().collect())
            .is_some()
        {
            return Err(CalibError::DuplicateKey(key.to_string()));
        }
    }

    let values = |name: &str, expected: usize| -> Result<Vec<f64>, CalibError> {
        let tokens = entries
            .get(name)
            .ok_or_else(|| CalibError::MissingKey(name.to_string()))?;
        if tokens.len() != expected {
            return Err(CalibError::MalformedMatrix {
                name: name.to_string(),
                expected,
                got: tokens.len(),
            });
        }
        tokens
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| CalibError::BadNumber {
                    name: name.to_string(),
                    token: t.to_string(),
                })
            })
            .collect()
    };

    let p2 = values("P2", 12)?;
    let p3 = values("P3", 12)?;
    let r0 = values("R0_rect", 9)?;
    let tr = values("Tr_velo_to_cam", 12)?;

    let (f_u, f_v, c_u, c_v) = (p2[0], p2[5], p2[2], p2[6]);
    if f_u <= 0.0 {
        return Err(CalibError::InvalidCamera(format!("P2 focal length {f_u}")));
    }
    let baseline = (p2[3] - p3[3]) / f_u;
    let cam = CameraModel::new(f_u, f_v, c_u, c_v, baseline, DEFAULT_IMAGE_SIZE)?
        .with_offset([p2[3] / f_u, p2[7] / f_v]);

    let rect_rotation = checked_rotation("R0_rect", Matrix3::from_row_slice(&r0))?;
    let tr_rot = checked_rotation(
        "Tr_velo_to_cam",
        Matrix3::new(tr[0], tr[1], tr[2], tr[4], tr[5], tr[6], tr[8], tr[9], tr[10]),
    )?;
    let velo_to_cam = RigidTransform {
        rotation: tr_rot,
        translation: Vector3::new(tr[3], tr[7], tr[11]),
    };

    Ok(CalibrationSet {
        cam,
        rect_rotation,
        velo_to_cam,
        source_file: None,
    })
}

/// Writes a calibration in the KITTI layout read by [`parse_kitti_calib`].
/// `P0`/`P1` are emitted as copies of `P2` with the reference-camera offset
/// so the file is accepted by tools that expect all four projections.
pub fn write_kitti_calib(calib: &CalibrationSet) -> String {
    let cam = &calib.cam;
    let p2 = [
        cam.f_u,
        0.0,
        cam.c_u,
        cam.offset[0] * cam.f_u,
        0.0,
        cam.f_v,
        cam.c_v,
        cam.offset[1] * cam.f_v,
        0.0,
        0.0,
        1.0,
        0.0,
    ];
    let mut p3 = p2;
    p3[3] = p2[3] - cam.baseline * cam.f_u;
    let mut p0 = p2;
    p0[3] = 0.0;
    p0[7] = 0.0;

    let r = &calib.rect_rotation;
    let t = &calib.velo_to_cam;
    let r0: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])).collect();
    let tr: Vec<f64> = (0..3)
        .flat_map(|i| {
            (0..4).map(move |j| {
                if j < 3 {
                    t.rotation[(i, j)]
                } else {
                    t.translation[i]
                }
            })
        })
        .collect();

    let mut out = String::new();
    let mut line = |key: &str, vals: &[f64]| {
        let _ = write!(out, "{key}:");
        for v in vals {
            let _ = write!(out, " {v:.12e}");
        }
        out.push('\n');
    };
    line("P0", &p0);
    line("P1", &p0);
    line("P2", &p2);
    line("P3", &p3);
    line("R0_rect", &r0);
    line("Tr_velo_to_cam", &tr);
    out
}
