//! KITTI object labels: oriented boxes, ground truth, detections and the
//! benchmark's difficulty tiers.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::Vector3;
use serde::Serialize;

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ObjectClass {
    Car,
    Van,
    Truck,
    Pedestrian,
    PersonSitting,
    Cyclist,
    Tram,
    Misc,
    DontCare,
    Other(String),
}

impl ObjectClass {
    /// Classes whose boxes neither count nor penalize when evaluating
    /// `self` (a van detected as a car is not a false positive).
    pub fn neighbours(&self) -> &'static [ObjectClass] {
        match self {
            ObjectClass::Car => &[ObjectClass::Van],
            ObjectClass::Pedestrian => &[ObjectClass::PersonSitting],
            _ => &[],
        }
    }

    pub fn is_evaluable(&self) -> bool {
        !matches!(self, ObjectClass::DontCare | ObjectClass::Other(_))
    }
}

impl FromStr for ObjectClass {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Car" => ObjectClass::Car,
            "Van" => ObjectClass::Van,
            "Truck" => ObjectClass::Truck,
            "Pedestrian" => ObjectClass::Pedestrian,
            "Person_sitting" => ObjectClass::PersonSitting,
            "Cyclist" => ObjectClass::Cyclist,
            "Tram" => ObjectClass::Tram,
            "Misc" => ObjectClass::Misc,
            "DontCare" => ObjectClass::DontCare,
            other => ObjectClass::Other(other.to_string()),
        })
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectClass::Car => "Car",
            ObjectClass::Van => "Van",
            ObjectClass::Truck => "Truck",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::PersonSitting => "Person_sitting",
            ObjectClass::Cyclist => "Cyclist",
            ObjectClass::Tram => "Tram",
            ObjectClass::Misc => "Misc",
            ObjectClass::DontCare => "DontCare",
            ObjectClass::Other(s) => s,
        })
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Oriented box in the rectified camera frame, KITTI style: `center` is the
/// middle of the bottom face (y grows downward), `dims` is `(h, w, l)` and
/// `rotation_y` turns the length axis away from camera x about the vertical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: Vector3<f64>,
    pub dims: [f64; 3],
    pub rotation_y: f64,
}

impl Box3D {
    pub fn new(center: Vector3<f64>, dims: [f64; 3], rotation_y: f64) -> Result<Self, EvalError> {
        if !dims.iter().all(|d| *d > 0.0 && d.is_finite())
            || !center.iter().all(|c| c.is_finite())
            || !rotation_y.is_finite()
        {
            return Err(EvalError::InvalidBox(format!(
                "dims {dims:?} center {:?} ry {rotation_y}",
                center.as_slice()
            )));
        }
        Ok(Self {
            center,
            dims,
            rotation_y: wrap_angle(rotation_y),
        })
    }

    pub fn height(&self) -> f64 {
        self.dims[0]
    }
    pub fn width(&self) -> f64 {
        self.dims[1]
    }
    pub fn length(&self) -> f64 {
        self.dims[2]
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    /// Footprint corners in the `(x, z)` ground plane, counter-clockwise
    /// in that plane.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.rotation_y.sin_cos();
        let (hl, hw) = (self.length() / 2.0, self.width() / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(lx, lz)| {
            [
                self.center.x + c * lx + s * lz,
                self.center.z - s * lx + c * lz,
            ]
        })
    }

    /// Vertical extent `[y - h, y]`.
    pub fn y_interval(&self) -> (f64, f64) {
        (self.center.y - self.height(), self.center.y)
    }

    /// The eight corners in the camera frame.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let fp = self.footprint();
        let (top, bottom) = self.y_interval();
        std::array::from_fn(|i| {
            let [x, z] = fp[i % 4];
            Vector3::new(x, if i < 4 { bottom } else { top }, z)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl Difficulty {
    pub const LEVELS: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    /// `(min bbox height px, max occlusion, max truncation)` of the KITTI devkit.
    pub fn thresholds(self) -> Option<(f64, u8, f64)> {
        match self {
            Difficulty::Easy => Some((40.0, 0, 0.15)),
            Difficulty::Moderate => Some((25.0, 1, 0.30)),
            Difficulty::Hard => Some((25.0, 2, 0.50)),
            Difficulty::Ignored => None,
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
            Difficulty::Ignored => "ignored",
        })
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "moderate" => Ok(Difficulty::Moderate),
            "hard" => Ok(Difficulty::Hard),
            _ => Err(format!("unknown difficulty `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub class: ObjectClass,
    /// `None` only for `DontCare` regions, which carry no 3D box.
    pub box3d: Option<Box3D>,
    pub truncation: f64,
    pub occlusion: u8,
    pub alpha: f64,
    /// `[left, top, right, bottom]`, pixels.
    pub bbox2d: [f64; 4],
}

impl GtObject {
    pub fn new(class: ObjectClass, box3d: Box3D, bbox2d: [f64; 4]) -> Self {
        let alpha = observation_angle(&box3d);
        Self {
            class,
            box3d: Some(box3d),
            truncation: 0.0,
            occlusion: 0,
            alpha,
            bbox2d,
        }
    }

    pub fn dont_care(bbox2d: [f64; 4]) -> Self {
        Self {
            class: ObjectClass::DontCare,
            box3d: None,
            truncation: -1.0,
            occlusion: 0,
            alpha: -10.0,
            bbox2d,
        }
    }

    pub fn is_dont_care(&self) -> bool {
        self.class == ObjectClass::DontCare
    }

    pub fn bbox2d_height(&self) -> f64 {
        self.bbox2d[3] - self.bbox2d[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class: ObjectClass,
    pub box3d: Box3D,
    pub score: f64,
    pub alpha: f64,
    /// Image box when known; detections without one are never height-gated.
    pub bbox2d: Option<[f64; 4]>,
}

impl Detection {
    pub fn new(class: ObjectClass, box3d: Box3D, score: f64) -> Self {
        Self {
            class,
            alpha: observation_angle(&box3d),
            box3d,
            score,
            bbox2d: None,
        }
    }

    pub fn with_bbox2d(mut self, bbox2d: [f64; 4]) -> Self {
        self.bbox2d = Some(bbox2d);
        self
    }
}

/// KITTI `alpha`: heading relative to the ray through the box center.
pub fn observation_angle(b: &Box3D) -> f64 {
    wrap_angle(b.rotation_y - b.center.x.atan2(b.center.z))
}

/// Difficulty tier of a ground-truth object: the easiest tier whose
/// height, occlusion and truncation limits it satisfies.
pub fn classify_difficulty(gt: &GtObject) -> Difficulty {
    let height = gt.bbox2d_height();
    Difficulty::LEVELS
        .into_iter()
        .find(|d| {
            let (min_h, max_occ, max_trunc) = d.thresholds().unwrap();
            height >= min_h && gt.occlusion <= max_occ && gt.truncation <= max_trunc
        })
        .unwrap_or(Difficulty::Ignored)
}

/// One parsed line of a label file.
#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Gt(GtObject),
    Det(Detection),
}

fn parse_fields(line_no: usize, fields: &[&str]) -> Result<Vec<f64>, EvalError> {
    fields
        .iter()
        .enumerate()
        .map(|(k, t)| {
            t.parse::<f64>().map_err(|_| EvalError::BadNumber {
                line: line_no,
                field: k + 1,
            })
        })
        .collect()
}

/// Parses a KITTI label file. Lines with 15 fields are ground truth, lines
/// with 16 are detections (trailing score). Blank lines are skipped.
pub fn parse_kitti_label(text: &str) -> Result<Vec<Label>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 15 && fields.len() != 16 {
            return Err(EvalError::FieldCount {
                line: line_no,
                got: fields.len(),
            });
        }
        let class: ObjectClass = fields[0].parse().unwrap();
        let v = parse_fields(line_no, &fields[1..])?;
        let (truncation, occlusion, alpha) = (v[0], v[1], v[2]);
        let bbox2d = [v[3], v[4], v[5], v[6]];
        let dims = [v[7], v[8], v[9]];
        let center = Vector3::new(v[10], v[11], v[12]);
        let rotation_y = v[13];

        let make_box = || {
            Box3D::new(center, dims, rotation_y).map_err(|_| EvalError::BadNumber {
                line: line_no,
                field: 8,
            })
        };
        if let Some(&score) = v.get(14) {
            if !score.is_finite() {
                return Err(EvalError::BadNumber {
                    line: line_no,
                    field: 16,
                });
            }
            out.push(Label::Det(Detection {
                class,
                box3d: make_box()?,
                score,
                alpha,
                bbox2d: Some(bbox2d),
            }));
        } else {
            let box3d = if class == ObjectClass::DontCare {
                None
            } else {
                Some(make_box()?)
            };
            out.push(Label::Gt(GtObject {
                class,
                box3d,
                truncation,
                occlusion: occlusion.clamp(0.0, 3.0) as u8,
                alpha,
                bbox2d,
            }));
        }
    }
    Ok(out)
}

/// Ground-truth lines of a label file; detection lines are an error.
pub fn parse_ground_truth(text: &str) -> Result<Vec<GtObject>, EvalError> {
    parse_kitti_label(text)?
        .into_iter()
        .enumerate()
        .map(|(i, l)| match l {
            Label::Gt(g) => Ok(g),
            Label::Det(_) => Err(EvalError::FieldCount { line: i + 1, got: 16 }),
        })
        .collect()
}

/// Detection lines of a result file; ground-truth lines are an error.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>, EvalError> {
    parse_kitti_label(text)?
        .into_iter()
        .enumerate()
        .map(|(i, l)| match l {
            Label::Det(d) => Ok(d),
            Label::Gt(_) => Err(EvalError::FieldCount { line: i + 1, got: 15 }),
        })
        .collect()
}

fn push_box(out: &mut String, b: Option<&Box3D>) {
    match b {
        Some(b) => {
            let _ = write!(
                out,
                " {} {} {} {} {} {} {}",
                b.dims[0], b.dims[1], b.dims[2], b.center.x, b.center.y, b.center.z, b.rotation_y
            );
        }
        None => out.push_str(" -1 -1 -1 -1000 -1000 -1000 -10"),
    }
}

/// Writes ground truth in the 15-field layout. Numbers use the shortest
/// representation that parses back to the same value.
pub fn write_ground_truth(objects: &[GtObject]) -> String {
    let mut out = String::new();
    for g in objects {
        let [l, t, r, b] = g.bbox2d;
        let _ = write!(
            out,
            "{} {} {} {} {l} {t} {r} {b}",
            g.class, g.truncation, g.occlusion, g.alpha
        );
        push_box(&mut out, g.box3d.as_ref());
        out.push('\n');
    }
    out
}

/// Writes detections in the 16-field layout. A missing image box is
/// written as `0 0 0 0`, which parses back as a zero-height box.
pub fn write_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        let [l, t, r, b] = d.bbox2d.unwrap_or([0.0; 4]);
        let _ = write!(out, "{} -1 -1 {} {l} {t} {r} {b}", d.class, d.alpha);
        push_box(&mut out, Some(&d.box3d));
        let _ = writeln!(out, " {}", d.score);
    }
    out
}
