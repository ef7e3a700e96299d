use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;
use pseudolidar::calib::{CalibrationSet, CameraModel, RigidTransform};
use pseudolidar::cloud::{
    backproject, height_filter, project_to_image, read_bin, to_camera, to_velodyne,
    write_bin, CloudFilterConfig, Frame, Point, PointCloud,
};
use pseudolidar::depthmap::{box_smooth, depth_to_disparity, disparity_to_depth, DepthMap, DisparityMap};

fn camera(w: usize, h: usize) -> CameraModel {
    CameraModel::new(721.5377, 721.5377, w as f64 * 0.49, h as f64 * 0.46, 0.54, (w, h)).unwrap()
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    (-3.1f64..3.1, -1.5f64..1.5, -3.1f64..3.1)
        .prop_map(|(r, p, y)| *Rotation3::from_euler_angles(r, p, y).matrix())
}

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

/// Depth map with roughly a third of the pixels invalid.
fn depth_map(w: usize, h: usize) -> impl Strategy<Value = DepthMap> {
    prop::collection::vec(prop_oneof![Just(None), (0.5f64..119.0).prop_map(Some), (0.5f64..119.0).prop_map(Some)], w * h)
        .prop_map(move |cells| {
            let valid = cells.iter().map(Option::is_some).collect();
            DepthMap::new(w, h, cells.iter().map(|c| c.unwrap_or(0.0)).collect(), valid).unwrap()
        })
}

proptest! {
    #[test]
    fn transform_round_trip(r in rotation(), t in vec3(5.0), pts in prop::collection::vec(vec3(80.0), 100)) {
        let cam = camera(1242, 375);
        let mut calib = CalibrationSet::identity(cam);
        calib.rect_rotation = *Rotation3::from_euler_angles(0.01, -0.02, 0.005).matrix();
        calib.velo_to_cam = RigidTransform::new(r, t).unwrap();

        let c2v = calib.cam_to_velo();
        let v2c = calib.velo_to_rect();
        let ident = v2c.compose(&c2v);
        prop_assert!((ident.rotation - Matrix3::identity()).abs().max() < 1e-9);
        prop_assert!(ident.translation.abs().max() < 1e-9);
        for p in &pts {
            prop_assert!((v2c.apply(&c2v.apply(p)) - p).abs().max() < 1e-9);
        }

        let cloud = PointCloud::new(pts.iter().map(|p| Point::new(p.x, p.y, p.z, 0.25)).collect(), Frame::CameraRect);
        let back = to_camera(&to_velodyne(&cloud, &calib).unwrap(), &calib).unwrap();
        for (a, b) in cloud.points.iter().zip(&back.points) {
            prop_assert!((a.xyz() - b.xyz()).abs().max() < 1e-9);
            prop_assert_eq!(a.reflectance, b.reflectance);
        }
    }

    #[test]
    fn backproject_then_project_is_identity(d in depth_map(24, 16), off in (-0.1f64..0.1, -0.01f64..0.01)) {
        let cam = camera(24, 16).with_offset([off.0, off.1]);
        let pc = backproject(&d, &cam).unwrap();
        prop_assert_eq!(pc.len(), d.valid_count());
        prop_assert!(pc.points.iter().all(|p| p.reflectance == 1.0));

        let proj = project_to_image(&pc, &cam).unwrap();
        prop_assert_eq!(proj.behind_camera, 0);
        let valid_pixels = (0..24 * 16).filter(|i| d.valid_mask()[*i]);
        for (ip, i) in proj.points.iter().zip(valid_pixels) {
            let (u, v) = ((i % 24) as f64, (i / 24) as f64);
            prop_assert!((ip.u - u).abs() < 1e-6 && (ip.v - v).abs() < 1e-6);
            prop_assert!((ip.depth - d.values()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn disparity_depth_involution(vals in prop::collection::vec(0.5f64..200.0, 64)) {
        let cam = camera(8, 8);
        let y = DisparityMap::from_values(8, 8, vals).unwrap();
        let d = disparity_to_depth(&y, &cam).unwrap();
        // 0.5 px would exceed the 120 m ceiling only below 3.25 px
        let back = depth_to_disparity(&d, &cam).unwrap();
        for i in 0..64 {
            match (y.valid_mask()[i], d.valid_mask()[i]) {
                (true, true) => {
                    let rel = (back.values()[i] - y.values()[i]).abs() / y.values()[i];
                    prop_assert!(rel < 1e-6);
                }
                (true, false) => prop_assert!(cam.focal_baseline() / y.values()[i] > 120.0),
                _ => prop_assert!(false),
            }
        }
    }

    #[test]
    fn box_smooth_matches_windowed_mean(d in depth_map(13, 9), k in prop::sample::select(vec![1usize, 3, 5, 11])) {
        let s = box_smooth(&d, k).unwrap();
        let r = (k / 2) as isize;
        for v in 0..9isize {
            for u in 0..13isize {
                let Some(_) = d.get(u as usize, v as usize) else {
                    prop_assert_eq!(s.get(u as usize, v as usize), None);
                    continue;
                };
                let (mut sum, mut n) = (0.0, 0);
                for dv in -r..=r {
                    for du in -r..=r {
                        let (uu, vv) = (u + du, v + dv);
                        if (0..13).contains(&uu) && (0..9).contains(&vv) {
                            if let Some(z) = d.get(uu as usize, vv as usize) {
                                sum += z;
                                n += 1;
                            }
                        }
                    }
                }
                let got = s.get(u as usize, v as usize).unwrap();
                prop_assert!((got - sum / n as f64).abs() <= 1e-9 * got.abs());
            }
        }
    }

    #[test]
    fn box_smooth_commutes_with_mirroring(d in depth_map(17, 7), k in prop::sample::select(vec![3usize, 5, 11])) {
        let a = box_smooth(&d.mirrored(), k).unwrap();
        let b = box_smooth(&d, k).unwrap().mirrored();
        prop_assert_eq!(a.valid_mask(), b.valid_mask());
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn height_filter_matches_scan(zs in prop::collection::vec(-3.0f64..3.0, 0..200), thr in -1.0f64..2.0) {
        let pc = PointCloud::new(zs.iter().enumerate().map(|(i, z)| Point::new(i as f64, 0.0, *z, 1.0)).collect(), Frame::Velodyne);
        let cfg = CloudFilterConfig { max_height_above_lidar: thr, ..Default::default() };
        let kept = height_filter(&pc, &cfg).unwrap();
        let oracle: Vec<Point> = pc.points.iter().filter(|p| p.z <= thr).copied().collect();
        prop_assert_eq!(&kept.points, &oracle);
        prop_assert_eq!(height_filter(&kept, &cfg).unwrap(), kept);
    }

    #[test]
    fn bin_round_trip(raw in prop::collection::vec((any::<f32>(), any::<f32>(), any::<f32>(), 0.0f32..=1.0), 0..50)) {
        let mut bytes = Vec::new();
        for (x, y, z, r) in &raw {
            for v in [x, y, z, r] {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        prop_assert_eq!(write_bin(&read_bin(&bytes).unwrap()), bytes);
    }
}

#[test]
fn camera_model_offsets_default_on_from_calib() {
    let text = "P2: 721.5 0 609.5 44.85 0 721.5 172.8 0.2163 0 0 1 0.002745\n\
                P3: 721.5 0 609.5 -344.76 0 721.5 172.8 2.39 0 0 1 0.003\n\
                R0_rect: 1 0 0 0 1 0 0 0 1\n\
                Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
    let calib = pseudolidar::parse_kitti_calib(text).unwrap();
    assert!(calib.cam.offset[0] > 0.0);
    assert_eq!(calib.cam.without_offset().offset, [0.0, 0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pseudo_disparity_covers_exactly_the_projected_pixels(
        pts in prop::collection::vec((-10.0f64..10.0, -3.0f64..2.0, -5.0f64..50.0), 1..400),
        seed in any::<u64>(),
    ) {
        let (w, h) = (64, 24);
        let cam = CameraModel::new(40.0, 40.0, 31.5, 11.5, 0.54, (w, h)).unwrap();
        let calib = CalibrationSet::identity(cam);
        let cloud = PointCloud::new(pts.iter().map(|(x, y, z)| Point::new(*x, *y, *z, 0.5)).collect(), Frame::CameraRect);
        let velo = to_velodyne(&cloud, &calib).unwrap();
        let map = pseudolidar::cloud::pseudo_disparity_gt(&velo, &calib, (w, h), seed).unwrap();

        // each covered pixel must hold the disparity of one of the points landing there
        let mut landed: Vec<Vec<f64>> = vec![Vec::new(); w * h];
        for (x, y, z) in &pts {
            if *z <= 0.0 {
                continue;
            }
            let u = (40.0 * x / z + 31.5).round();
            let v = (40.0 * y / z + 11.5).round();
            if u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64 {
                landed[v as usize * w + u as usize].push(40.0 * 0.54 / z);
            }
        }
        for (i, cands) in landed.iter().enumerate() {
            let got = map.get(i % w, i / w);
            prop_assert_eq!(got.is_some(), !cands.is_empty());
            if let Some(y) = got {
                prop_assert!(cands.iter().any(|c| (c - y).abs() < 1e-9));
            }
        }
    }
}
