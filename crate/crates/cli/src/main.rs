//! `pseudolidar` — batch front-end for the pseudo-LiDAR pipeline.
//!
//! Exit status: 0 on success, 1 when one or more frames failed, 2 for a
//! configuration error (bad flags, missing directories, unpaired inputs).

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod frames;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::frames::ConfigError;

#[derive(Debug, Parser)]
#[command(name = "pseudolidar", version, about = "Depth maps to pseudo-LiDAR point clouds, BEV tensors and detection metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; outputs are identical for every value.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Process the remaining frames after a failure (exit status 1).
    #[arg(long)]
    pub keep_going: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Clone)]
pub struct CalibArgs {
    /// Directory with one `<frame>.txt` KITTI calibration per frame.
    #[arg(long)]
    pub calib_dir: Option<PathBuf>,
    /// A single calibration file used for every frame.
    #[arg(long, conflicts_with = "calib_dir")]
    pub calib_file: Option<PathBuf>,
    /// Ignore the P2 translation column when back-projecting.
    #[arg(long)]
    pub no_rect_offset: bool,
}

#[derive(Debug, Args, Clone)]
pub struct FilterArgs {
    /// Drop points higher than this above the LiDAR (meters).
    #[arg(long, default_value_t = 1.0)]
    pub max_height: f64,
    /// Drop depths beyond this (meters).
    #[arg(long, default_value_t = 120.0)]
    pub max_depth: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Disparity PNGs or depth dumps to Velodyne-frame `.bin` clouds.
    Convert {
        /// Directory of `<frame>.png` disparities or `<frame>.pldm` depth dumps.
        input: PathBuf,
        #[command(flatten)]
        calib: CalibArgs,
        #[command(flatten)]
        filter: FilterArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Fits the road plane per frame and writes AVOD-style plane files.
    Plane {
        /// Directory of Velodyne `.bin` clouds or disparity PNGs.
        input: PathBuf,
        #[command(flatten)]
        calib: CalibArgs,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        /// Inlier distance (meters).
        #[arg(long, default_value_t = 0.02)]
        threshold: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Rasterizes `.bin` clouds into bird's-eye-view tensors.
    Bev {
        input: PathBuf,
        /// Cell size (meters).
        #[arg(long, default_value_t = 0.1)]
        resolution: f64,
        #[arg(long, default_value_t = 5)]
        slices: usize,
        /// Binary occupancy instead of normalized max height.
        #[arg(long)]
        occupancy: bool,
        #[arg(long)]
        no_density: bool,
        /// Also write one PGM image per channel.
        #[arg(long)]
        pgm: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Sparse disparity ground truth from LiDAR scans.
    Gtdisp {
        /// Directory of Velodyne `.bin` scans.
        input: PathBuf,
        #[command(flatten)]
        calib: CalibArgs,
        #[arg(long, default_value_t = 1242)]
        width: usize,
        #[arg(long, default_value_t = 375)]
        height: usize,
        #[command(flatten)]
        common: Common,
    },
    /// KITTI-style AP over a directory of ground-truth and detection labels.
    Eval {
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        det_dir: PathBuf,
        /// IoU thresholds; repeat or separate with commas.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.7])]
        iou: Vec<f64>,
        /// Recall sampling: 11 or 40 points.
        #[arg(long, default_value = "11")]
        interp: String,
        #[arg(long, value_delimiter = ',', default_values_t = vec!["Car".to_string()])]
        classes: Vec<String>,
        /// Directory for `report.tsv` and `report.json`; the table always
        /// goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measures how much depth-map smoothing stretches each object instance.
    BlurStudy {
        /// Directory of `<frame>.pldm` depth dumps or disparity PNGs.
        input: PathBuf,
        #[command(flatten)]
        calib: CalibArgs,
        /// Directory of `<frame>.png` 16-bit instance masks.
        #[arg(long)]
        mask_dir: PathBuf,
        #[arg(long, default_value_t = 11)]
        kernel: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Renders scene descriptions into depth, disparity, masks, labels,
    /// calibration and a pseudo-LiDAR cloud.
    Synth {
        /// Scene files. Six-digit stems (`000007.scene`) are kept as frame
        /// ids; otherwise frames are numbered in argument order.
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Convert { input, calib, filter, common } => commands::convert(&input, &calib, &filter, &common),
        Command::Plane { input, calib, filter, iters, threshold, common } => {
            commands::plane(&input, &calib, &filter, iters, threshold, &common)
        }
        Command::Bev { input, resolution, slices, occupancy, no_density, pgm, common } => {
            let cfg = pseudolidar::BevConfig {
                resolution,
                height_slices: slices,
                include_density: !no_density,
                encoding: if occupancy {
                    pseudolidar::HeightEncoding::Occupancy
                } else {
                    pseudolidar::HeightEncoding::MaxHeight
                },
                ..Default::default()
            };
            commands::bev(&input, &cfg, pgm, &common)
        }
        Command::Gtdisp { input, calib, width, height, common } => {
            commands::gtdisp(&input, &calib, (width, height), &common)
        }
        Command::Eval { gt_dir, det_dir, iou, interp, classes, out } => {
            commands::eval(&gt_dir, &det_dir, &iou, &interp, &classes, out.as_deref())
        }
        Command::BlurStudy { input, calib, mask_dir, kernel, common } => {
            commands::blur_study(&input, &calib, &mask_dir, kernel, &common)
        }
        Command::Synth { scenes, common } => commands::synth(&scenes, &common),
    };
    match result {
        Ok(status) => ExitCode::from(status),
        Err(e) => {
            log::error!("{e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
