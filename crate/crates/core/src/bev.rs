//! Bird's-eye-view rasterization of Velodyne-frame clouds.
//!
//! The ground plane is split into `resolution`-sized cells; rows run along
//! the forward axis (`x` of the LiDAR) starting at the near edge, columns run
//! left to right (`-y` of the LiDAR). The height window is divided into equal
//! slices, each contributing one channel that stores the highest point of
//! the slice normalized to `[0, 1]` within it. An optional last channel holds
//! the log-normalized point density.

use thiserror::Error;

use crate::cloud::{Frame, PointCloud};

const BEV_MAGIC: &[u8; 4] = b"PLBV";
const BEV_HEADER: usize = 16;
/// Point count at which the density channel saturates.
pub const DENSITY_NORMALIZER: f64 = 64.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BevError {
    #[error("expected a Velodyne-frame cloud, got {0:?}")]
    WrongFrame(Frame),
    #[error("invalid BEV configuration: {0}")]
    InvalidConfig(String),
    #[error("tensor of shape {0:?} does not fit the u16 header")]
    TooLarge((usize, usize, usize)),
    #[error("bad tensor dump: {0}")]
    BadDump(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeightEncoding {
    /// Highest point within the slice, normalized to the slice.
    #[default]
    MaxHeight,
    /// 1 where the slice holds any point.
    Occupancy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevConfig {
    /// Lateral extent (meters, positive to the right).
    pub x_range: (f64, f64),
    /// Forward extent (meters).
    pub z_range_forward: (f64, f64),
    pub resolution: f64,
    pub height_slices: usize,
    /// Height window `[h_lo, h_hi]` in the Velodyne frame.
    pub height_range: (f64, f64),
    pub include_density: bool,
    pub encoding: HeightEncoding,
}

impl Default for BevConfig {
    fn default() -> Self {
        Self {
            x_range: (-40.0, 40.0),
            z_range_forward: (0.0, 70.0),
            resolution: 0.1,
            height_slices: 5,
            height_range: (-2.5, 1.0),
            include_density: true,
            encoding: HeightEncoding::MaxHeight,
        }
    }
}

impl BevConfig {
    pub fn validate(&self) -> Result<(), BevError> {
        let bad = |m: String| Err(BevError::InvalidConfig(m));
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return bad(format!("resolution must be positive, got {}", self.resolution));
        }
        if self.height_slices == 0 {
            return bad("need at least one height slice".into());
        }
        for (name, (lo, hi)) in [
            ("lateral", self.x_range),
            ("forward", self.z_range_forward),
            ("height", self.height_range),
        ] {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return bad(format!("{name} range [{lo}, {hi}] is empty"));
            }
        }
        Ok(())
    }

    fn cells(extent: f64, res: f64) -> usize {
        // 70 / 0.1 lands a hair above 700 in binary floating point
        ((extent / res) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn rows(&self) -> usize {
        Self::cells(self.z_range_forward.1 - self.z_range_forward.0, self.resolution)
    }

    pub fn cols(&self) -> usize {
        Self::cells(self.x_range.1 - self.x_range.0, self.resolution)
    }

    pub fn channels(&self) -> usize {
        self.height_slices + usize::from(self.include_density)
    }

    pub fn slice_height(&self) -> f64 {
        (self.height_range.1 - self.height_range.0) / self.height_slices as f64
    }

    /// `(row, col, slice)` of a Velodyne point, or `None` when it falls
    /// outside the grid or the height window.
    #[inline]
    pub fn bin(&self, x: f64, y: f64, z: f64) -> Option<(usize, usize, usize)> {
        Binner::new(self).bin(x, y, z)
    }
}

/// Grid geometry resolved once per rasterization.
struct Binner {
    lat: (f64, f64),
    fwd: (f64, f64),
    h: (f64, f64),
    res: f64,
    slice_h: f64,
    rows: usize,
    cols: usize,
    last_slice: usize,
}

impl Binner {
    fn new(cfg: &BevConfig) -> Self {
        Self {
            lat: cfg.x_range,
            fwd: cfg.z_range_forward,
            h: cfg.height_range,
            res: cfg.resolution,
            slice_h: cfg.slice_height(),
            rows: cfg.rows(),
            cols: cfg.cols(),
            last_slice: cfg.height_slices - 1,
        }
    }

    #[inline]
    fn bin(&self, x: f64, y: f64, z: f64) -> Option<(usize, usize, usize)> {
        let lateral = -y;
        if !(lateral >= self.lat.0 && lateral < self.lat.1 && x >= self.fwd.0 && x < self.fwd.1) {
            return None;
        }
        if !(z >= self.h.0 && z <= self.h.1) {
            return None;
        }
        let row = ((x - self.fwd.0) / self.res).floor() as usize;
        let col = ((lateral - self.lat.0) / self.res).floor() as usize;
        if row >= self.rows || col >= self.cols {
            return None;
        }
        let slice = (((z - self.h.0) / self.slice_h).floor() as usize).min(self.last_slice);
        Some((row, col, slice))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevTensor {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl BevTensor {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            channels,
            rows,
            cols,
            data: vec![0.0; channels * rows * cols],
        }
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.rows + row) * self.cols + col
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[self.index(channel, row, col)]
    }

    pub fn channel(&self, channel: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.data[channel * n..(channel + 1) * n]
    }

    /// Binary PGM (P5, 8-bit) of one channel, row 0 first.
    pub fn channel_pgm(&self, channel: usize) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend(
            self.channel(channel)
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rasterized {
    pub tensor: BevTensor,
    /// Points per cell, row-major `(row, col)`.
    pub counts: Vec<u32>,
    pub in_range: usize,
    pub dropped: usize,
}

/// Density value for a cell holding `n` points.
#[inline]
pub fn density(n: u32) -> f32 {
    ((n as f64 + 1.0).ln() / (DENSITY_NORMALIZER + 1.0).ln()).min(1.0) as f32
}

pub fn rasterize(pc: &PointCloud, cfg: &BevConfig) -> Result<Rasterized, BevError> {
    if pc.frame != Frame::Velodyne {
        return Err(BevError::WrongFrame(pc.frame));
    }
    cfg.validate()?;
    let (rows, cols) = (cfg.rows(), cfg.cols());
    let mut tensor = BevTensor::zeros(cfg.channels(), rows, cols);
    let mut counts = vec![0u32; rows * cols];
    let binner = Binner::new(cfg);
    let slice_h = binner.slice_h;
    let mut in_range = 0usize;

    for p in &pc.points {
        let Some((row, col, slice)) = binner.bin(p.x, p.y, p.z) else {
            continue;
        };
        in_range += 1;
        counts[row * cols + col] += 1;
        let value = match cfg.encoding {
            HeightEncoding::MaxHeight => {
                let slice_lo = cfg.height_range.0 + slice as f64 * slice_h;
                (((p.z - slice_lo) / slice_h).clamp(0.0, 1.0)) as f32
            }
            HeightEncoding::Occupancy => 1.0,
        };
        let i = tensor.index(slice, row, col);
        if value > tensor.data[i] {
            tensor.data[i] = value;
        }
    }

    if cfg.include_density {
        // density saturates at DENSITY_NORMALIZER points, so a table covers it
        let table: Vec<f32> = (0..=DENSITY_NORMALIZER as u32).map(density).collect();
        let plane = &mut tensor.data[cfg.height_slices * rows * cols..];
        for (d, n) in plane.iter_mut().zip(&counts) {
            if *n > 0 {
                *d = table[(*n as usize).min(table.len() - 1)];
            }
        }
    }

    Ok(Rasterized {
        tensor,
        counts,
        in_range,
        dropped: pc.len() - in_range,
    })
}

/// `PLBV`, three u16 LE dims `(channels, rows, cols)`, six zero bytes, then
/// the f32 LE data in `(channel, row, col)` order.
pub fn write_bev_npy_like(t: &BevTensor) -> Result<Vec<u8>, BevError> {
    let dims = (t.channels, t.rows, t.cols);
    if [t.channels, t.rows, t.cols].iter().any(|d| *d > u16::MAX as usize) {
        return Err(BevError::TooLarge(dims));
    }
    let mut out = Vec::with_capacity(BEV_HEADER + 4 * t.data.len());
    out.extend_from_slice(BEV_MAGIC);
    for d in [t.channels, t.rows, t.cols] {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    out.extend_from_slice(&[0u8; 6]);
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_bev_npy_like(bytes: &[u8]) -> Result<BevTensor, BevError> {
    if bytes.len() < BEV_HEADER || &bytes[..4] != BEV_MAGIC {
        return Err(BevError::BadDump("missing PLBV header".into()));
    }
    let dim = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
    let (channels, rows, cols) = (dim(4), dim(6), dim(8));
    let body = &bytes[BEV_HEADER..];
    let expected = 4 * channels * rows * cols;
    if body.len() != expected {
        return Err(BevError::BadDump(format!(
            "shape ({channels}, {rows}, {cols}) needs {expected} bytes, found {}",
            body.len()
        )));
    }
    Ok(BevTensor {
        channels,
        rows,
        cols,
        data: body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    })
}
