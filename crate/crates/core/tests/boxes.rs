use std::f64::consts::PI;

use nalgebra::Vector3;
use proptest::prelude::*;
use pseudolidar::boxeval::{
    average_precision, bev_iou, iou_3d, parse_detections, parse_ground_truth, write_detections,
    write_ground_truth, Box3D, Detection, Difficulty, GtObject, Interpolation, Metric, ObjectClass,
};

/// Interval of `x` covered by the footprint of `b` on the line `z = const`,
/// solved directly from the box-local constraints `|lx| <= l/2`, `|lz| <= w/2`.
fn row_interval(b: &Box3D, z: f64) -> Option<(f64, f64)> {
    let (s, c) = b.rotation_y.sin_cos();
    let dz = z - b.center.z;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    // lx = c·dx - s·dz, lz = s·dx + c·dz
    for (coef, shift, half) in [(c, -s * dz, b.length() / 2.0), (s, c * dz, b.width() / 2.0)] {
        if coef.abs() < 1e-12 {
            if shift.abs() > half {
                return None;
            }
            continue;
        }
        let (a, bb) = ((-half - shift) / coef, (half - shift) / coef);
        lo = lo.max(a.min(bb));
        hi = hi.min(a.max(bb));
    }
    (hi > lo).then(|| (lo + b.center.x, hi + b.center.x))
}

/// Footprint intersection area by the midpoint rule over `z` scanlines.
fn scanline_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let reach = |b: &Box3D| (b.length().hypot(b.width())) / 2.0;
    let z_lo = (a.center.z - reach(a)).max(b.center.z - reach(b));
    let z_hi = (a.center.z + reach(a)).min(b.center.z + reach(b));
    if z_hi <= z_lo {
        return 0.0;
    }
    let n = 20_000;
    let dz = (z_hi - z_lo) / n as f64;
    (0..n)
        .filter_map(|i| {
            let z = z_lo + (i as f64 + 0.5) * dz;
            let (a0, a1) = row_interval(a, z)?;
            let (b0, b1) = row_interval(b, z)?;
            Some((a1.min(b1) - a0.max(b0)).max(0.0) * dz)
        })
        .sum()
}

fn oracle_bev(a: &Box3D, b: &Box3D) -> f64 {
    let i = scanline_intersection(a, b);
    i / (a.width() * a.length() + b.width() * b.length() - i)
}

fn oracle_3d(a: &Box3D, b: &Box3D) -> f64 {
    let dy = (a.center.y.min(b.center.y) - (a.center.y - a.height()).max(b.center.y - b.height())).max(0.0);
    let i = scanline_intersection(a, b) * dy;
    i / (a.volume() + b.volume() - i)
}

fn boxes() -> impl Strategy<Value = Box3D> {
    (-2.0f64..2.0, 0.5f64..2.5, 18.0f64..22.0, 1.0f64..2.5, 1.0f64..2.5, 2.0f64..5.0, -PI..PI)
        .prop_map(|(x, y, z, h, w, l, ry)| Box3D::new(Vector3::new(x, y, z), [h, w, l], ry).unwrap())
}

fn moved(b: &Box3D, dx: f64, dz: f64, dry: f64) -> Box3D {
    // rotate the centre about the origin by dry (about the camera y axis) and translate
    let (s, c) = dry.sin_cos();
    let (x, z) = (c * b.center.x + s * b.center.z, -s * b.center.x + c * b.center.z);
    Box3D::new(Vector3::new(x + dx, b.center.y, z + dz), b.dims, b.rotation_y + dry).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn bev_iou_matches_scanline_oracle(a in boxes(), b in boxes()) {
        let got = bev_iou(&a, &b);
        prop_assert!((got - oracle_bev(&a, &b)).abs() < 1e-3, "{got} vs {}", oracle_bev(&a, &b));
        let got3 = iou_3d(&a, &b);
        prop_assert!((got3 - oracle_3d(&a, &b)).abs() < 1e-3);
        prop_assert!(got3 <= got + 1e-12 || a.height() != b.height() || a.center.y != b.center.y);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in boxes(), b in boxes()) {
        for (ab, ba) in [(bev_iou(&a, &b), bev_iou(&b, &a)), (iou_3d(&a, &b), iou_3d(&b, &a))] {
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
        prop_assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_is_invariant_under_rigid_motion(a in boxes(), b in boxes(), dx in -30.0f64..30.0, dz in -30.0f64..30.0, dry in -PI..PI) {
        let (ma, mb) = (moved(&a, dx, dz, dry), moved(&b, dx, dz, dry));
        prop_assert!((bev_iou(&a, &b) - bev_iou(&ma, &mb)).abs() < 1e-9);
        prop_assert!((iou_3d(&a, &b) - iou_3d(&ma, &mb)).abs() < 1e-9);
    }

    #[test]
    fn adding_a_false_positive_never_raises_ap(
        gt_x in prop::collection::vec(-20.0f64..20.0, 1..6),
        det_jitter in prop::collection::vec((-1.0f64..1.0, 0.0f64..1.0), 1..8),
        fp_score in 0.0f64..1.0,
        mode in prop::sample::select(vec![Interpolation::Interp11, Interpolation::Interp40]),
    ) {
        let car = |x: f64| Box3D::new(Vector3::new(x, 1.6, 25.0), [1.5, 1.6, 3.9], 0.0).unwrap();
        let gts: Vec<GtObject> = gt_x.iter()
            .map(|x| GtObject::new(ObjectClass::Car, car(*x), [0.0, 0.0, 60.0, 60.0]))
            .collect();
        let dets: Vec<Detection> = det_jitter.iter().enumerate()
            .map(|(i, (j, s))| Detection::new(ObjectClass::Car, car(gt_x[i % gt_x.len()] + j), *s))
            .collect();
        let mut with_fp = dets.clone();
        with_fp.push(Detection::new(ObjectClass::Car, car(500.0), fp_score));

        let ap = |d: &[Detection]| average_precision(
            std::slice::from_ref(&gts), &[d.to_vec()], &ObjectClass::Car, Difficulty::Moderate,
            |a, b| Metric::Bev.iou(a, b), 0.5, mode,
        ).unwrap();
        prop_assert!(ap(&with_fp) <= ap(&dets) + 1e-12);
    }

    #[test]
    fn label_round_trip(x in -20.0f64..20.0, z in 1.0f64..60.0, ry in -3.0f64..3.0, score in 0.0f64..1.0) {
        let b = Box3D::new(Vector3::new(x, 1.7, z), [1.52, 1.63, 3.88], ry).unwrap();
        let gts = vec![GtObject::new(ObjectClass::Car, b, [10.5, 20.25, 100.0, 90.0])];
        prop_assert_eq!(parse_ground_truth(&write_ground_truth(&gts)).unwrap(), gts);
        let dets = vec![Detection::new(ObjectClass::Car, b, score).with_bbox2d([1.0, 2.0, 3.0, 4.0])];
        prop_assert_eq!(parse_detections(&write_detections(&dets)).unwrap(), dets);
    }
}

#[test]
fn rotated_square_overlap_by_hand() {
    // 2×2 squares, one turned 45°: the intersection is a regular octagon
    // of area 8(√2 - 1), union 8 - that
    let a = Box3D::new(Vector3::new(0.0, 1.0, 10.0), [1.0, 2.0, 2.0], 0.0).unwrap();
    let b = Box3D::new(Vector3::new(0.0, 1.0, 10.0), [1.0, 2.0, 2.0], std::f64::consts::FRAC_PI_4).unwrap();
    let oct = 8.0 * (2f64.sqrt() - 1.0);
    assert!((bev_iou(&a, &b) - oct / (8.0 - oct)).abs() < 1e-9);
    assert!((iou_3d(&a, &b) - oct / (8.0 - oct)).abs() < 1e-9);
}
