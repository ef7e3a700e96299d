//! Frame discovery, atomic output and the per-frame parallel runner.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{Context, Result};
use pseudolidar::calib::{parse_kitti_calib, CalibrationSet};
use rayon::prelude::*;

/// A problem with the invocation itself rather than with one frame's data.
/// Maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct FrameFile {
    pub stem: String,
    pub path: PathBuf,
}

/// Files in `dir` whose extension is one of `exts`, sorted by stem. Two files
/// sharing a stem (e.g. `000001.png` and `000001.pldm`) are a configuration
/// error.
pub fn list_frames(dir: &Path, exts: &[&str]) -> Result<Vec<FrameFile>> {
    if !dir.is_dir() {
        return Err(config_error(format!("{} is not a directory", dir.display())));
    }
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !path.is_file() || !exts.contains(&ext) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        frames.push(FrameFile {
            stem: stem.to_string(),
            path,
        });
    }
    frames.sort();
    if let Some(w) = frames.windows(2).find(|w| w[0].stem == w[1].stem) {
        return Err(config_error(format!(
            "frame {} appears twice in {}",
            w[0].stem,
            dir.display()
        )));
    }
    if frames.is_empty() {
        log::warn!("no {:?} files in {}", exts, dir.display());
    }
    Ok(frames)
}

/// Zero-padded KITTI frame stem.
pub fn frame_stem(index: usize) -> String {
    format!("{index:06}")
}

/// Where per-frame calibration comes from: `<dir>/<stem>.txt` or one file
/// shared by every frame.
#[derive(Debug, Clone)]
pub enum CalibSource {
    PerFrame(PathBuf),
    Shared(Box<CalibrationSet>),
}

impl CalibSource {
    pub fn from_args(dir: Option<&Path>, file: Option<&Path>) -> Result<Self> {
        match (dir, file) {
            (Some(_), Some(_)) => Err(config_error("give either --calib-dir or --calib-file, not both")),
            (None, None) => Err(config_error("a calibration is required (--calib-dir or --calib-file)")),
            (Some(d), None) if !d.is_dir() => Err(config_error(format!("{} is not a directory", d.display()))),
            (Some(d), None) => Ok(Self::PerFrame(d.to_path_buf())),
            (None, Some(f)) => {
                let text = std::fs::read_to_string(f)
                    .map_err(|e| config_error(format!("{}: {e}", f.display())))?;
                let calib = parse_kitti_calib(&text)
                    .map_err(|e| config_error(format!("{}: {e}", f.display())))?;
                Ok(Self::Shared(Box::new(calib.with_source(f))))
            }
        }
    }

    pub fn load(&self, stem: &str) -> Result<CalibrationSet> {
        match self {
            Self::Shared(c) => Ok((**c).clone()),
            Self::PerFrame(dir) => {
                let path = dir.join(format!("{stem}.txt"));
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let calib = parse_kitti_calib(&text).with_context(|| format!("parsing {}", path.display()))?;
                Ok(calib.with_source(path))
            }
        }
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| e.error)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub struct RunOptions {
    pub jobs: usize,
    pub keep_going: bool,
}

pub struct Outcome<T> {
    /// One entry per processed frame, in stem order. Frames skipped after
    /// an abort are absent.
    pub results: Vec<(String, Result<T>)>,
}

impl<T> Outcome<T> {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|(_, r)| r.is_err()).count()
    }

    pub fn successes(&self) -> impl Iterator<Item = (&str, &T)> {
        self.results
            .iter()
            .filter_map(|(s, r)| r.as_ref().ok().map(|t| (s.as_str(), t)))
    }

    /// Logs every failure and turns the outcome into an exit status.
    pub fn status(&self, what: &str) -> u8 {
        for (stem, r) in &self.results {
            if let Err(e) = r {
                log::error!("{what} {stem}: {e:#}");
            }
        }
        let failed = self.failures();
        log::info!("{what}: {} frames ok, {failed} failed", self.results.len() - failed);
        u8::from(failed > 0)
    }
}

/// Runs `work` over every frame on a pool of `jobs` threads. Without
/// `keep_going` the first failure stops frames that have not started yet.
pub fn run_frames<T, F>(frames: &[FrameFile], opts: &RunOptions, work: F) -> Result<Outcome<T>>
where
    T: Send,
    F: Fn(&FrameFile) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| config_error(format!("cannot start {} worker threads: {e}", opts.jobs)))?;
    let abort = AtomicBool::new(false);
    let results: Vec<Option<(String, Result<T>)>> = pool.install(|| {
        frames
            .par_iter()
            .map(|f| {
                if abort.load(Ordering::SeqCst) {
                    return None;
                }
                let r = work(f);
                if r.is_err() && !opts.keep_going {
                    abort.store(true, Ordering::SeqCst);
                }
                Some((f.stem.clone(), r))
            })
            .collect()
    });
    Ok(Outcome {
        results: results.into_iter().flatten().collect(),
    })
}
