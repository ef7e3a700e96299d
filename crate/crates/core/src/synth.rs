//! Analytic scenes for verification: boxes standing on a flat road in front
//! of a calibrated stereo rig, ray cast exactly into depth maps, instance
//! masks and ground-truth labels.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::boxeval::{Box3D, GtObject, ObjectClass};
use crate::calib::{CalibError, CalibrationSet, CameraModel, RigidTransform};
use crate::depthmap::{DepthMap, InstanceMask, DEFAULT_MAX_DEPTH, DEFAULT_MIN_DISPARITY};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),
    #[error("scene file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Calib(#[from] CalibError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub class: ObjectClass,
    pub box3d: Box3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub calib: CalibrationSet,
    pub objects: Vec<SceneObject>,
    /// Road height below the camera (rectified y), `None` for no road.
    pub ground_height: Option<f64>,
    /// Std-dev of the Gaussian added to the disparity of every pixel.
    pub disparity_noise_sigma: f64,
    /// Hits farther than this are left invalid.
    pub max_depth: f64,
}

/// LiDAR mounted above and behind the camera, KITTI-like axes.
pub fn default_velo_to_cam() -> RigidTransform {
    RigidTransform {
        rotation: Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0),
        translation: Vector3::new(0.0, -0.08, -0.27),
    }
}

impl SceneSpec {
    pub fn new(cam: CameraModel) -> Self {
        let mut calib = CalibrationSet::identity(cam);
        calib.velo_to_cam = default_velo_to_cam();
        Self {
            calib,
            objects: Vec::new(),
            ground_height: None,
            disparity_noise_sigma: 0.0,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }

    pub fn cam(&self) -> &CameraModel {
        &self.calib.cam
    }

    pub fn with_ground(mut self, height: f64) -> Self {
        self.ground_height = Some(height);
        self
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.disparity_noise_sigma = sigma;
        self
    }

    pub fn with_object(mut self, class: ObjectClass, box3d: Box3D) -> Self {
        self.objects.push(SceneObject { class, box3d });
        self
    }

    /// Camera center in the rectified frame (non-zero for offset cameras).
    pub fn camera_center(&self) -> Vector3<f64> {
        let o = self.cam().offset;
        Vector3::new(-o[0], -o[1], 0.0)
    }

    /// Ray through pixel `(u, v)`, scaled so its z component is 1.
    pub fn ray(&self, u: usize, v: usize) -> Vector3<f64> {
        let c = self.cam();
        Vector3::new((u as f64 - c.c_u) / c.f_u, (v as f64 - c.c_v) / c.f_v, 1.0)
    }

    fn validate(&self) -> Result<(), SynthError> {
        self.cam().validate()?;
        if !(self.disparity_noise_sigma >= 0.0 && self.disparity_noise_sigma.is_finite()) {
            return Err(SynthError::DegenerateScene(format!(
                "noise sigma must be non-negative, got {}",
                self.disparity_noise_sigma
            )));
        }
        if !(self.max_depth > 0.0) {
            return Err(SynthError::DegenerateScene("max depth must be positive".into()));
        }
        let origin = self.camera_center();
        for (i, o) in self.objects.iter().enumerate() {
            if o.box3d.center.z <= 0.0 {
                return Err(SynthError::DegenerateScene(format!(
                    "object {i} is behind the camera"
                )));
            }
            if Slab::of(&o.box3d).contains(&origin) {
                return Err(SynthError::DegenerateScene(format!(
                    "camera is inside object {i}"
                )));
            }
        }
        Ok(())
    }
}

/// A box in its own axis-aligned frame, for slab tests.
struct Slab {
    center: Vector3<f64>,
    /// Columns are the box axes (length, height, width) in camera coordinates.
    axes: Matrix3<f64>,
    half: Vector3<f64>,
}

impl Slab {
    fn of(b: &Box3D) -> Self {
        let (s, c) = b.rotation_y.sin_cos();
        Slab {
            center: Vector3::new(b.center.x, b.center.y - b.height() / 2.0, b.center.z),
            axes: Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            half: Vector3::new(b.length() / 2.0, b.height() / 2.0, b.width() / 2.0),
        }
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        let l = self.axes.transpose() * (p - self.center);
        (0..3).all(|k| l[k].abs() < self.half[k])
    }

    /// Entry parameter of the ray `origin + t dir`, if it enters at `t > 0`.
    fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let o = self.axes.transpose() * (origin - self.center);
        let d = self.axes.transpose() * dir;
        let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..3 {
            if d[k] == 0.0 {
                if o[k].abs() > self.half[k] {
                    return None;
                }
                continue;
            }
            let t1 = (-self.half[k] - o[k]) / d[k];
            let t2 = (self.half[k] - o[k]) / d[k];
            t_near = t_near.max(t1.min(t2));
            t_far = t_far.min(t1.max(t2));
        }
        (t_near <= t_far && t_near > 0.0).then_some(t_near)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub depth: DepthMap,
    /// Object index + 1 for pixels whose nearest surface is that object.
    pub masks: InstanceMask,
    pub labels: Vec<GtObject>,
}

/// Ray casts the scene. With a positive noise level every valid pixel gets
/// Gaussian noise in disparity space before converting back to depth, so
/// depth error grows with the square of depth.
pub fn render(spec: &SceneSpec, seed: u64) -> Result<Rendered, SynthError> {
    spec.validate()?;
    let cam = *spec.cam();
    let (w, h) = cam.image_size();
    let origin = spec.camera_center();
    let slabs: Vec<Slab> = spec.objects.iter().map(|o| Slab::of(&o.box3d)).collect();

    let mut depth = DepthMap::invalid(w, h);
    let mut masks = InstanceMask::empty(w, h);
    // pixels covered by each object regardless of occluders
    let mut footprint = vec![0usize; slabs.len()];
    let mut visible = vec![0usize; slabs.len()];

    for v in 0..h {
        for u in 0..w {
            let dir = spec.ray(u, v);
            let mut best: Option<(f64, u16)> = None;
            for (i, s) in slabs.iter().enumerate() {
                if let Some(t) = s.hit(&origin, &dir) {
                    footprint[i] += 1;
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, i as u16 + 1));
                    }
                }
            }
            if let Some(g) = spec.ground_height {
                if dir.y > 0.0 {
                    let t = (g - origin.y) / dir.y;
                    if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, 0));
                    }
                }
            }
            if let Some((t, id)) = best {
                if t <= spec.max_depth {
                    depth.set(u, v, Some(t));
                    if id > 0 {
                        masks.ids[v * w + u] = id;
                        visible[id as usize - 1] += 1;
                    }
                }
            }
        }
    }

    if spec.disparity_noise_sigma > 0.0 {
        depth = perturb_disparity(&depth, &cam, spec.disparity_noise_sigma, spec.max_depth, seed);
    }

    let labels = spec
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let occluded = if footprint[i] == 0 {
                1.0
            } else {
                1.0 - visible[i] as f64 / footprint[i] as f64
            };
            label_for(o, &cam, occluded)
        })
        .collect();

    Ok(Rendered {
        depth,
        masks,
        labels,
    })
}

fn perturb_disparity(
    depth: &DepthMap,
    cam: &CameraModel,
    sigma: f64,
    max_depth: f64,
    seed: u64,
) -> DepthMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma checked by validate");
    let fb = cam.focal_baseline();
    let mut out = depth.clone();
    for v in 0..depth.height() {
        for u in 0..depth.width() {
            let Some(z) = depth.get(u, v) else { continue };
            let disp = fb / z + noise.sample(&mut rng);
            let noisy = (disp > DEFAULT_MIN_DISPARITY)
                .then(|| fb / disp)
                .filter(|d| *d <= max_depth);
            out.set(u, v, noisy);
        }
    }
    out
}

fn label_for(o: &SceneObject, cam: &CameraModel, occluded: f64) -> GtObject {
    let b = &o.box3d;
    let (w, h) = (cam.width as f64, cam.height as f64);
    let projected: Vec<[f64; 2]> = b
        .corners()
        .iter()
        .filter(|p| p.z > 0.1)
        .map(|p| {
            [
                cam.f_u * (p.x + cam.offset[0]) / p.z + cam.c_u,
                cam.f_v * (p.y + cam.offset[1]) / p.z + cam.c_v,
            ]
        })
        .collect();
    let (bbox, truncation) = if projected.len() < 8 {
        ([0.0, 0.0, 0.0, 0.0], 1.0)
    } else {
        let lo = |k: usize| projected.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = |k: usize| projected.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        let full = [lo(0), lo(1), hi(0), hi(1)];
        let clipped = [
            full[0].clamp(0.0, w - 1.0),
            full[1].clamp(0.0, h - 1.0),
            full[2].clamp(0.0, w - 1.0),
            full[3].clamp(0.0, h - 1.0),
        ];
        let area = |b: &[f64; 4]| ((b[2] - b[0]) * (b[3] - b[1])).max(0.0);
        let full_area = area(&full);
        let trunc = if full_area > 0.0 {
            1.0 - area(&clipped) / full_area
        } else {
            1.0
        };
        (clipped, trunc)
    };
    let occlusion = match occluded {
        f if f <= 0.1 => 0,
        f if f <= 0.5 => 1,
        _ => 2,
    };
    let mut gt = GtObject::new(o.class.clone(), *b, bbox);
    gt.truncation = truncation.clamp(0.0, 1.0);
    gt.occlusion = occlusion;
    gt
}

/// Parses a scene description.
///
/// One directive per line, whitespace separated, `#` starts a comment:
///
/// ```text
/// image_size 1242 375
/// focal 721.5377 721.5377          # f_u f_v
/// principal 609.5593 172.854       # c_u c_v
/// baseline 0.54
/// rect_offset 0.0 0.0              # optional, meters
/// velo_to_cam r11 r12 r13 tx r21 r22 r23 ty r31 r32 r33 tz   # optional
/// ground_height 1.65               # optional
/// noise_sigma 0.0                  # optional, disparity pixels
/// max_depth 120                    # optional
/// object Car 1.5 1.6 3.9 0.0 1.65 30.0 0.0   # class h w l x y z ry
/// ```
pub fn parse_scene(text: &str) -> Result<SceneSpec, SynthError> {
    let mut image_size = None;
    let mut focal = None;
    let mut principal = None;
    let mut baseline = None;
    let mut offset = [0.0, 0.0];
    let mut velo_to_cam = default_velo_to_cam();
    let mut ground = None;
    let mut sigma = 0.0;
    let mut max_depth = DEFAULT_MAX_DEPTH;
    let mut objects = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let key = tokens.next().unwrap();
        let rest: Vec<&str> = tokens.collect();
        let err = |msg: String| SynthError::Parse {
            line: line_no,
            msg,
        };
        let nums = |skip: usize, n: usize| -> Result<Vec<f64>, SynthError> {
            if rest.len() != skip + n {
                return Err(err(format!(
                    "`{key}` takes {} values, got {}",
                    skip + n,
                    rest.len()
                )));
            }
            rest[skip..]
                .iter()
                .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number `{t}`"))))
                .collect()
        };
        match key {
            "image_size" => {
                let v = nums(0, 2)?;
                if v.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
                    return Err(err("image size must be positive integers".into()));
                }
                image_size = Some((v[0] as usize, v[1] as usize));
            }
            "focal" => focal = Some(nums(0, 2)?),
            "principal" => principal = Some(nums(0, 2)?),
            "baseline" => baseline = Some(nums(0, 1)?[0]),
            "rect_offset" => {
                let v = nums(0, 2)?;
                offset = [v[0], v[1]];
            }
            "velo_to_cam" => {
                let v = nums(0, 12)?;
                velo_to_cam = RigidTransform::new(
                    Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
                    Vector3::new(v[3], v[7], v[11]),
                )?;
            }
            "ground_height" => ground = Some(nums(0, 1)?[0]),
            "noise_sigma" => sigma = nums(0, 1)?[0],
            "max_depth" => max_depth = nums(0, 1)?[0],
            "object" => {
                let class: ObjectClass = rest
                    .first()
                    .ok_or_else(|| err("object needs a class".into()))?
                    .parse()
                    .unwrap();
                let v = nums(1, 7)?;
                let b = Box3D::new(Vector3::new(v[3], v[4], v[5]), [v[0], v[1], v[2]], v[6])
                    .map_err(|e| err(e.to_string()))?;
                objects.push(SceneObject { class, box3d: b });
            }
            other => return Err(err(format!("unknown directive `{other}`"))),
        }
    }

    let missing = |what: &str| SynthError::Parse {
        line: 0,
        msg: format!("missing `{what}`"),
    };
    let (fu_fv, cu_cv) = (
        focal.ok_or_else(|| missing("focal"))?,
        principal.ok_or_else(|| missing("principal"))?,
    );
    let cam = CameraModel::new(
        fu_fv[0],
        fu_fv[1],
        cu_cv[0],
        cu_cv[1],
        baseline.ok_or_else(|| missing("baseline"))?,
        image_size.ok_or_else(|| missing("image_size"))?,
    )?
    .with_offset(offset);
    let mut spec = SceneSpec::new(cam);
    spec.calib.velo_to_cam = velo_to_cam;
    spec.objects = objects;
    spec.ground_height = ground;
    spec.disparity_noise_sigma = sigma;
    spec.max_depth = max_depth;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(w: usize, h: usize) -> CameraModel {
        CameraModel::new(700.0, 700.0, w as f64 / 2.0, h as f64 / 2.0, 0.5, (w, h)).unwrap()
    }

    #[test]
    fn fronto_parallel_wall() {
        // 40 m wide, 40 m tall box whose near face sits at z = 10
        let b = Box3D::new(Vector3::new(0.0, 20.0, 12.0), [40.0, 4.0, 40.0], 0.0).unwrap();
        let spec = SceneSpec::new(cam(64, 48)).with_object(ObjectClass::Misc, b);
        let r = render(&spec, 0).unwrap();
        assert_eq!(r.depth.valid_count(), 64 * 48);
        assert!(r.depth.values().iter().all(|d| (d - 10.0).abs() < 1e-12));
        assert!(r.masks.ids.iter().all(|id| *id == 1));
    }

    #[test]
    fn ground_rows_follow_ray_plane_formula() {
        let spec = SceneSpec::new(cam(40, 30)).with_ground(1.65);
        let r = render(&spec, 0).unwrap();
        for v in 0..30 {
            for u in 0..40 {
                let dy = (v as f64 - 15.0) / 700.0;
                let expected = (dy > 0.0).then(|| 1.65 / dy).filter(|d| *d <= 120.0);
                match (r.depth.get(u, v), expected) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
                    (None, None) => {}
                    other => panic!("pixel ({u},{v}): {other:?}"),
                }
            }
        }
    }

    #[test]
    fn deterministic_noise() {
        let spec = SceneSpec::new(cam(40, 30)).with_ground(1.65).with_noise(0.3);
        assert_eq!(render(&spec, 7).unwrap(), render(&spec, 7).unwrap());
        assert_ne!(render(&spec, 7).unwrap().depth, render(&spec, 8).unwrap().depth);
    }

    #[test]
    fn degenerate_scenes() {
        let b = Box3D::new(Vector3::new(0.0, 1.0, -5.0), [1.0, 1.0, 1.0], 0.0).unwrap();
        let spec = SceneSpec::new(cam(8, 8)).with_object(ObjectClass::Car, b);
        assert!(matches!(render(&spec, 0), Err(SynthError::DegenerateScene(_))));
        let spec = SceneSpec::new(cam(8, 8)).with_noise(-1.0);
        assert!(matches!(render(&spec, 0), Err(SynthError::DegenerateScene(_))));
        let around = Box3D::new(Vector3::new(0.0, 1.0, 0.5), [2.0, 2.0, 2.0], 0.0).unwrap();
        let spec = SceneSpec::new(cam(8, 8)).with_object(ObjectClass::Car, around);
        assert!(matches!(render(&spec, 0), Err(SynthError::DegenerateScene(_))));
    }

    #[test]
    fn labels_for_visible_car() {
        let car = Box3D::new(Vector3::new(0.0, 1.65, 20.0), [1.5, 1.6, 3.9], 0.3).unwrap();
        let spec = SceneSpec::new(cam(1242, 375))
            .with_ground(1.65)
            .with_object(ObjectClass::Car, car);
        let r = render(&spec, 0).unwrap();
        let gt = &r.labels[0];
        assert_eq!(gt.box3d, Some(car));
        assert_eq!(gt.occlusion, 0);
        assert_eq!(gt.truncation, 0.0);
        assert!(gt.bbox2d_height() > 40.0);
        assert!(r.masks.ids.contains(&1));
    }

    #[test]
    fn scene_file() {
        let text = "\
# test scene
image_size 200 100
focal 700 700
principal 100 50
baseline 0.5
ground_height 1.65   # road
object Car 1.5 1.6 3.9 0.0 1.65 30.0 0.0
";
        let spec = parse_scene(text).unwrap();
        assert_eq!(spec.cam().image_size(), (200, 100));
        assert_eq!(spec.objects.len(), 1);
        assert_eq!(spec.ground_height, Some(1.65));
        assert!(parse_scene("focal 1").is_err());
        assert!(parse_scene("bogus 1").is_err());
        assert!(matches!(
            parse_scene("image_size 10 10\nfocal 1 1\nprincipal 1 1\n"),
            Err(SynthError::Parse { .. })
        ));
    }
}
