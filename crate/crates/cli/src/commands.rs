use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pseudolidar::bev::{rasterize, write_bev_npy_like};
use pseudolidar::boxeval::{evaluate, parse_detections, parse_ground_truth, write_ground_truth, EvalConfig, EvalError, ObjectClass};
use pseudolidar::calib::{write_kitti_calib, CalibrationSet};
use pseudolidar::cloud::{pseudo_disparity_gt, read_bin, to_velodyne, write_bin, CloudFilterConfig};
use pseudolidar::depthmap::{
    depth_to_disparity, disparity_to_depth_with, read_depth_dump, read_disparity_png,
    write_depth_dump, write_disparity_png, DepthMap, InstanceMask,
};
use pseudolidar::groundplane::{write_plane_file, PlaneRegionGate, RansacConfig};
use pseudolidar::pipeline::{blur_study as study, depth_to_pseudo_lidar, estimate_ground};
use pseudolidar::synth::{parse_scene, render};
use pseudolidar::{BevConfig, Interpolation};

use crate::frames::{config_error, frame_stem, list_frames, run_frames, write_atomic, CalibSource, FrameFile, RunOptions};
use crate::{CalibArgs, Common, FilterArgs};

fn run_options(common: &Common) -> Result<RunOptions> {
    if common.jobs == 0 {
        return Err(config_error("--jobs must be at least 1"));
    }
    std::fs::create_dir_all(&common.out)
        .map_err(|e| config_error(format!("cannot create {}: {e}", common.out.display())))?;
    Ok(RunOptions {
        jobs: common.jobs,
        keep_going: common.keep_going,
    })
}

fn filter_config(args: &FilterArgs) -> Result<CloudFilterConfig> {
    let cfg = CloudFilterConfig {
        max_height_above_lidar: args.max_height,
        depth_ceiling: args.max_depth,
        ..Default::default()
    };
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    Ok(cfg)
}

fn calib_source(args: &CalibArgs) -> Result<CalibSource> {
    CalibSource::from_args(args.calib_dir.as_deref(), args.calib_file.as_deref())
}

/// Frame calibration with the camera resized to the frame's map.
fn frame_calib(src: &CalibSource, args: &CalibArgs, stem: &str, size: (usize, usize)) -> Result<CalibrationSet> {
    let mut calib = src.load(stem)?.with_image_size(size.0, size.1)?;
    if args.no_rect_offset {
        calib.cam = calib.cam.without_offset();
    }
    Ok(calib)
}

/// Reads a depth dump (`.pldm`) or a disparity PNG and returns depth along
/// with the frame calibration sized to it.
fn load_depth(
    f: &FrameFile,
    src: &CalibSource,
    args: &CalibArgs,
    filter: &CloudFilterConfig,
) -> Result<(DepthMap, CalibrationSet)> {
    let bytes = std::fs::read(&f.path).with_context(|| format!("reading {}", f.path.display()))?;
    if f.path.extension().is_some_and(|e| e == "pldm") {
        let depth = read_depth_dump(&bytes)?;
        let calib = frame_calib(src, args, &f.stem, depth.size())?;
        Ok((depth, calib))
    } else {
        let disp = read_disparity_png(&bytes)?;
        let calib = frame_calib(src, args, &f.stem, disp.size())?;
        let depth = disparity_to_depth_with(&disp, &calib.cam, &filter.depth_limits())?;
        Ok((depth, calib))
    }
}

fn out_file(dir: &Path, stem: &str, ext: &str) -> PathBuf {
    dir.join(format!("{stem}.{ext}"))
}

struct ConvertStats {
    lifted: usize,
    height_dropped: usize,
    written: usize,
}

pub fn convert(input: &Path, calib: &CalibArgs, filter: &FilterArgs, common: &Common) -> Result<u8> {
    let frames = list_frames(input, &["png", "pldm"])?;
    let src = calib_source(calib)?;
    let filter = filter_config(filter)?;
    let opts = run_options(common)?;

    let outcome = run_frames(&frames, &opts, |f| {
        let (depth, frame_calib) = load_depth(f, &src, calib, &filter)?;
        let conv = depth_to_pseudo_lidar(&depth, &frame_calib, &filter)?;
        if conv.lifted == 0 {
            log::warn!("frame {}: no valid depth, writing an empty cloud", f.stem);
        }
        write_atomic(&out_file(&common.out, &f.stem, "bin"), &write_bin(&conv.cloud))?;
        Ok(ConvertStats {
            lifted: conv.lifted,
            height_dropped: conv.height_dropped,
            written: conv.cloud.len(),
        })
    })?;

    let mut summary = String::from("frame\tlifted\theight_dropped\twritten\n");
    for (stem, s) in outcome.successes() {
        let _ = writeln!(summary, "{stem}\t{}\t{}\t{}", s.lifted, s.height_dropped, s.written);
    }
    write_atomic(&common.out.join("summary.tsv"), summary.as_bytes())?;
    Ok(outcome.status("convert"))
}

pub fn plane(
    input: &Path,
    calib: &CalibArgs,
    filter: &FilterArgs,
    iters: usize,
    threshold: f64,
    common: &Common,
) -> Result<u8> {
    if iters == 0 || !(threshold > 0.0) {
        return Err(config_error("--iters must be positive and --threshold > 0"));
    }
    let frames = list_frames(input, &["bin", "png"])?;
    let src = calib_source(calib)?;
    let filter = filter_config(filter)?;
    let opts = run_options(common)?;
    let ransac = RansacConfig {
        iters,
        threshold,
        seed: common.seed,
    };

    let outcome = run_frames(&frames, &opts, |f| {
        let (cloud, frame_calib) = if f.path.extension().is_some_and(|e| e == "bin") {
            let cloud = read_bin(&std::fs::read(&f.path)?)?;
            (cloud, src.load(&f.stem)?)
        } else {
            let (depth, frame_calib) = load_depth(f, &src, calib, &filter)?;
            (depth_to_pseudo_lidar(&depth, &frame_calib, &filter)?.cloud, frame_calib)
        };
        let plane = estimate_ground(&cloud, &frame_calib, &PlaneRegionGate::default(), &ransac)?;
        write_atomic(&out_file(&common.out, &f.stem, "txt"), write_plane_file(&plane).as_bytes())
    })?;
    Ok(outcome.status("plane"))
}

pub fn bev(input: &Path, cfg: &BevConfig, pgm: bool, common: &Common) -> Result<u8> {
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    let frames = list_frames(input, &["bin"])?;
    let opts = run_options(common)?;

    let outcome = run_frames(&frames, &opts, |f| {
        let cloud = read_bin(&std::fs::read(&f.path)?)?;
        let r = rasterize(&cloud, cfg)?;
        write_atomic(&out_file(&common.out, &f.stem, "plbv"), &write_bev_npy_like(&r.tensor)?)?;
        if pgm {
            for ch in 0..r.tensor.channels {
                let path = common.out.join(format!("{}_c{ch}.pgm", f.stem));
                write_atomic(&path, &r.tensor.channel_pgm(ch))?;
            }
        }
        Ok(())
    })?;
    Ok(outcome.status("bev"))
}

pub fn gtdisp(input: &Path, calib: &CalibArgs, size: (usize, usize), common: &Common) -> Result<u8> {
    if size.0 == 0 || size.1 == 0 {
        return Err(config_error("--width and --height must be positive"));
    }
    let frames = list_frames(input, &["bin"])?;
    let src = calib_source(calib)?;
    let opts = run_options(common)?;

    let outcome = run_frames(&frames, &opts, |f| {
        let scan = read_bin(&std::fs::read(&f.path)?)?;
        let frame_calib = frame_calib(&src, calib, &f.stem, size)?;
        let map = pseudo_disparity_gt(&scan, &frame_calib, size, common.seed)?;
        write_atomic(&out_file(&common.out, &f.stem, "png"), &write_disparity_png(&map)?)
    })?;
    Ok(outcome.status("gtdisp"))
}

fn read_labels<T>(dir: &Path, parse: impl Fn(&str) -> Result<Vec<T>, EvalError>) -> Result<BTreeMap<String, Vec<T>>> {
    let mut out = BTreeMap::new();
    for f in list_frames(dir, &["txt"])? {
        let text = std::fs::read_to_string(&f.path)?;
        let items = parse(&text).with_context(|| format!("parsing {}", f.path.display()))?;
        out.insert(f.stem, items);
    }
    Ok(out)
}

pub fn eval(
    gt_dir: &Path,
    det_dir: &Path,
    ious: &[f64],
    interp: &str,
    classes: &[String],
    out: Option<&Path>,
) -> Result<u8> {
    let interpolation: Interpolation = interp
        .parse()
        .map_err(|_| config_error(format!("--interp must be 11 or 40, got {interp}")))?;
    if ious.is_empty() || ious.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(config_error("IoU thresholds must lie in (0, 1]"));
    }
    let classes: Vec<ObjectClass> = classes.iter().map(|c| c.parse().unwrap()).collect();
    if let Some(c) = classes.iter().find(|c| !c.is_evaluable()) {
        return Err(config_error(format!("class {c} cannot be evaluated")));
    }
    let gts = read_labels(gt_dir, parse_ground_truth)?;
    let dets = read_labels(det_dir, parse_detections)?;
    let config = EvalConfig {
        classes,
        iou_thresholds: ious.to_vec(),
        interpolation,
        ..Default::default()
    };
    let report = match evaluate(&gts, &dets, &config) {
        Err(e @ EvalError::FrameMismatch(_)) => return Err(config_error(e.to_string())),
        r => r?,
    };
    print!("{}", report.to_table());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| config_error(format!("cannot create {}: {e}", dir.display())))?;
        write_atomic(&dir.join("report.tsv"), report.to_tsv().as_bytes())?;
        let json = serde_json::to_string_pretty(&report)?;
        write_atomic(&dir.join("report.json"), json.as_bytes())?;
    }
    Ok(0)
}

pub fn blur_study(input: &Path, calib: &CalibArgs, mask_dir: &Path, kernel: usize, common: &Common) -> Result<u8> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(config_error(format!("--kernel must be odd and positive, got {kernel}")));
    }
    if !mask_dir.is_dir() {
        return Err(config_error(format!("{} is not a directory", mask_dir.display())));
    }
    let frames = list_frames(input, &["pldm", "png"])?;
    let src = calib_source(calib)?;
    let opts = run_options(common)?;
    let filter = CloudFilterConfig::default();

    let outcome = run_frames(&frames, &opts, |f| {
        let (depth, frame_calib) = load_depth(f, &src, calib, &filter)?;
        let mask_path = mask_dir.join(format!("{}.png", f.stem));
        let masks = InstanceMask::from_png(
            &std::fs::read(&mask_path).with_context(|| format!("reading {}", mask_path.display()))?,
        )?;
        if (masks.width, masks.height) != depth.size() {
            bail!(
                "mask is {}x{} but depth is {}x{}",
                masks.width,
                masks.height,
                depth.width(),
                depth.height()
            );
        }
        let s = study(&depth, &frame_calib.cam, &masks, kernel)?;
        let spread = common.out.join("spread");
        write_atomic(&out_file(&spread, &f.stem, "tsv"), s.report.to_tsv().as_bytes())?;
        for (name, grid) in [("before", &s.before), ("after", &s.after)] {
            let velo = to_velodyne(&grid.cloud, &frame_calib)?;
            write_atomic(&out_file(&common.out.join(name), &f.stem, "bin"), &write_bin(&velo))?;
        }
        Ok(())
    })?;
    Ok(outcome.status("blur-study"))
}

pub fn synth(scenes: &[PathBuf], common: &Common) -> Result<u8> {
    let stems: Vec<Option<&str>> = scenes.iter().map(|p| p.file_stem().and_then(|s| s.to_str())).collect();
    let kitti_named = stems
        .iter()
        .all(|s| s.is_some_and(|s| s.len() == 6 && s.bytes().all(|b| b.is_ascii_digit())));
    let mut frames: Vec<FrameFile> = scenes
        .iter()
        .zip(&stems)
        .enumerate()
        .map(|(i, (p, s))| FrameFile {
            stem: if kitti_named { s.unwrap().to_string() } else { frame_stem(i) },
            path: p.clone(),
        })
        .collect();
    frames.sort();
    if frames.windows(2).any(|w| w[0].stem == w[1].stem) {
        return Err(config_error("two scene files map to the same frame id"));
    }
    let opts = run_options(common)?;
    let out = &common.out;

    let outcome = run_frames(&frames, &opts, |f| {
        let text = std::fs::read_to_string(&f.path).with_context(|| format!("reading {}", f.path.display()))?;
        let spec = parse_scene(&text)?;
        let r = render(&spec, common.seed)?;
        let cam = spec.cam();
        let stem = &f.stem;
        write_atomic(&out_file(&out.join("depth"), stem, "pldm"), &write_depth_dump(&r.depth)?)?;
        let disparity = depth_to_disparity(&r.depth, cam)?;
        write_atomic(&out_file(&out.join("disparity"), stem, "png"), &write_disparity_png(&disparity)?)?;
        write_atomic(&out_file(&out.join("masks"), stem, "png"), &r.masks.to_png()?)?;
        write_atomic(&out_file(&out.join("labels"), stem, "txt"), write_ground_truth(&r.labels).as_bytes())?;
        write_atomic(&out_file(&out.join("calib"), stem, "txt"), write_kitti_calib(&spec.calib).as_bytes())?;
        let conv = depth_to_pseudo_lidar(&r.depth, &spec.calib, &CloudFilterConfig::default())?;
        write_atomic(&out_file(&out.join("velodyne"), stem, "bin"), &write_bin(&conv.cloud))?;
        Ok(())
    })?;
    Ok(outcome.status("synth"))
}
