//! Dense disparity and depth maps with explicit validity masks, the
//! disparity/depth relation, windowed smoothing and on-disk formats.

use std::io::Cursor;

use thiserror::Error;

use crate::calib::CameraModel;

/// Default far-depth ceiling, meters.
pub const DEFAULT_MAX_DEPTH: f64 = 120.0;
/// Disparities at or below this are treated as missing.
pub const DEFAULT_MIN_DISPARITY: f64 = 1e-6;

/// Scale of the KITTI 16-bit disparity convention.
pub const PNG_DISPARITY_SCALE: f64 = 256.0;

const DEPTH_MAGIC: &[u8; 4] = b"PLDM";

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("smoothing kernel must be odd and positive, got {0}")]
    EvenKernel(usize),
    #[error("expected a 16-bit image, got {0} bits")]
    UnsupportedBitDepth(u8),
    #[error("expected a single-channel image, got {0:?}")]
    NotSingleChannel(png::ColorType),
    #[error("invalid value {value} at pixel ({u}, {v})")]
    InvalidValue { u: usize, v: usize, value: f64 },
    #[error("bad depth dump: {0}")]
    BadHeader(String),
    #[error("map of {0}x{1} does not fit the u16 header")]
    TooLarge(usize, usize),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
}

macro_rules! dense_map {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            width: usize,
            height: usize,
            values: Vec<f64>,
            valid: Vec<bool>,
        }

        impl $name {
            /// Builds a map from row-major values and mask. Invalid pixels are
            /// stored as 0.
            pub fn new(
                width: usize,
                height: usize,
                mut values: Vec<f64>,
                valid: Vec<bool>,
            ) -> Result<Self, DepthError> {
                let n = width * height;
                if values.len() != n || valid.len() != n {
                    return Err(DepthError::DimensionMismatch {
                        expected: (width, height),
                        got: (values.len(), valid.len()),
                    });
                }
                for (i, (v, ok)) in values.iter_mut().zip(&valid).enumerate() {
                    if *ok {
                        if !(v.is_finite() && *v > 0.0) {
                            return Err(DepthError::InvalidValue {
                                u: i % width.max(1),
                                v: i / width.max(1),
                                value: *v,
                            });
                        }
                    } else {
                        *v = 0.0;
                    }
                }
                Ok(Self { width, height, values, valid })
            }

            /// Marks every finite, strictly positive value valid.
            pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self, DepthError> {
                let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
                Self::new(width, height, values, valid)
            }

            pub fn invalid(width: usize, height: usize) -> Self {
                Self {
                    width,
                    height,
                    values: vec![0.0; width * height],
                    valid: vec![false; width * height],
                }
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn size(&self) -> (usize, usize) {
                (self.width, self.height)
            }

            #[doc = concat!("Row-major ", $what, " values; invalid pixels hold 0.")]
            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn valid_mask(&self) -> &[bool] {
                &self.valid
            }

            #[inline]
            pub fn get(&self, u: usize, v: usize) -> Option<f64> {
                let i = v * self.width + u;
                self.valid[i].then(|| self.values[i])
            }

            /// Sets a pixel; non-positive or non-finite values mark it invalid.
            pub fn set(&mut self, u: usize, v: usize, value: Option<f64>) {
                let i = v * self.width + u;
                match value {
                    Some(x) if x.is_finite() && x > 0.0 => {
                        self.values[i] = x;
                        self.valid[i] = true;
                    }
                    _ => {
                        self.values[i] = 0.0;
                        self.valid[i] = false;
                    }
                }
            }

            pub fn valid_count(&self) -> usize {
                self.valid.iter().filter(|v| **v).count()
            }

            /// Left-right mirror image.
            pub fn mirrored(&self) -> Self {
                let mut out = self.clone();
                for v in 0..self.height {
                    let row = v * self.width..(v + 1) * self.width;
                    out.values[row.clone()].reverse();
                    out.valid[row].reverse();
                }
                out
            }
        }
    };
}

dense_map!(
    /// Per-pixel horizontal disparity of the left image, in pixels.
    DisparityMap,
    "disparity"
);
dense_map!(
    /// Per-pixel depth along the optical axis, in meters.
    DepthMap,
    "depth"
);

/// Validity gates applied when converting disparity to depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthLimits {
    pub min_disparity: f64,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for DepthLimits {
    fn default() -> Self {
        Self {
            min_disparity: DEFAULT_MIN_DISPARITY,
            min_depth: 0.0,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

fn check_size(cam: &CameraModel, got: (usize, usize)) -> Result<(), DepthError> {
    if got.0 == 0 || got.1 == 0 || cam.image_size() != got {
        return Err(DepthError::DimensionMismatch {
            expected: cam.image_size(),
            got,
        });
    }
    Ok(())
}

/// `D = f_u * b / Y` with the default [`DepthLimits`].
pub fn disparity_to_depth(y: &DisparityMap, cam: &CameraModel) -> Result<DepthMap, DepthError> {
    disparity_to_depth_with(y, cam, &DepthLimits::default())
}

/// `D = f_u * b / Y`. Pixels whose disparity is at or below
/// `min_disparity`, or whose depth falls outside `(min_depth, max_depth]`,
/// become invalid; nothing is clamped.
pub fn disparity_to_depth_with(
    y: &DisparityMap,
    cam: &CameraModel,
    limits: &DepthLimits,
) -> Result<DepthMap, DepthError> {
    check_size(cam, y.size())?;
    let fb = cam.focal_baseline();
    let mut values = vec![0.0; y.values.len()];
    let mut valid = vec![false; y.values.len()];
    for i in 0..values.len() {
        let disp = y.values[i];
        if !y.valid[i] || disp <= limits.min_disparity {
            continue;
        }
        let d = fb / disp;
        if d > limits.min_depth && d <= limits.max_depth {
            values[i] = d;
            valid[i] = true;
        }
    }
    Ok(DepthMap {
        width: y.width,
        height: y.height,
        values,
        valid,
    })
}

/// Invalidates depths outside `(min_depth, max_depth]`; nothing is clamped.
pub fn clip_depth(d: &DepthMap, limits: &DepthLimits) -> DepthMap {
    let mut out = d.clone();
    for (z, ok) in out.values.iter_mut().zip(out.valid.iter_mut()) {
        if *ok && !(*z > limits.min_depth && *z <= limits.max_depth) {
            *ok = false;
            *z = 0.0;
        }
    }
    out
}

/// `Y = f_u * b / D` on valid pixels.
pub fn depth_to_disparity(d: &DepthMap, cam: &CameraModel) -> Result<DisparityMap, DepthError> {
    check_size(cam, d.size())?;
    let fb = cam.focal_baseline();
    let values = d
        .values
        .iter()
        .zip(&d.valid)
        .map(|(z, ok)| if *ok { fb / z } else { 0.0 })
        .collect();
    Ok(DisparityMap {
        width: d.width,
        height: d.height,
        values,
        valid: d.valid.clone(),
    })
}

/// Mean filter over a `kernel x kernel` window.
///
/// Only valid pixels contribute to a mean and the window is truncated at the
/// image border. The validity mask is carried over unchanged: a hole stays a
/// hole, so the filter never fills in depth.
pub fn box_smooth(d: &DepthMap, kernel: usize) -> Result<DepthMap, DepthError> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(DepthError::EvenKernel(kernel));
    }
    if kernel == 1 {
        return Ok(d.clone());
    }
    let (w, h) = d.size();
    let r = kernel / 2;

    // Summed-area tables with a zero top row / left column.
    let stride = w + 1;
    let mut sum = vec![0.0f64; stride * (h + 1)];
    let mut cnt = vec![0u32; stride * (h + 1)];
    for v in 0..h {
        let mut row_sum = 0.0;
        let mut row_cnt = 0u32;
        for u in 0..w {
            let i = v * w + u;
            if d.valid[i] {
                row_sum += d.values[i];
                row_cnt += 1;
            }
            let o = (v + 1) * stride + u + 1;
            sum[o] = sum[o - stride] + row_sum;
            cnt[o] = cnt[o - stride] + row_cnt;
        }
    }

    let mut values = vec![0.0; w * h];
    for v in 0..h {
        let (v0, v1) = (v.saturating_sub(r), (v + r + 1).min(h));
        for u in 0..w {
            let i = v * w + u;
            if !d.valid[i] {
                continue;
            }
            let (u0, u1) = (u.saturating_sub(r), (u + r + 1).min(w));
            let s = (sum[v1 * stride + u1] - sum[v0 * stride + u1])
                - (sum[v1 * stride + u0] - sum[v0 * stride + u0]);
            let c = (cnt[v1 * stride + u1] - cnt[v0 * stride + u1])
                - (cnt[v1 * stride + u0] - cnt[v0 * stride + u0]);
            values[i] = s / c as f64;
        }
    }
    Ok(DepthMap {
        width: w,
        height: h,
        values,
        valid: d.valid.clone(),
    })
}

fn decode_gray16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), DepthError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale {
        return Err(DepthError::NotSingleChannel(color));
    }
    if depth != png::BitDepth::Sixteen {
        return Err(DepthError::UnsupportedBitDepth(depth as u8));
    }
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let frame = reader.next_frame(&mut buf)?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let data = buf[..frame.buffer_size()]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((w, h, data))
}

fn encode_gray16(width: usize, height: usize, data: &[u16]) -> Result<Vec<u8>, DepthError> {
    if width > u32::MAX as usize || height > u32::MAX as usize {
        return Err(DepthError::TooLarge(width, height));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header()?;
        let raw: Vec<u8> = data.iter().flat_map(|v| v.to_be_bytes()).collect();
        writer.write_image_data(&raw)?;
    }
    Ok(out)
}

/// Reads a KITTI-convention 16-bit disparity PNG: `disparity = value / 256`,
/// with 0 meaning no measurement.
pub fn read_disparity_png(bytes: &[u8]) -> Result<DisparityMap, DepthError> {
    let (w, h, data) = decode_gray16(bytes)?;
    let valid: Vec<bool> = data.iter().map(|v| *v != 0).collect();
    let values = data.iter().map(|v| *v as f64 / PNG_DISPARITY_SCALE).collect();
    DisparityMap::new(w, h, values, valid)
}

/// Inverse of [`read_disparity_png`]. Valid disparities are rounded to the
/// nearest 1/256 px and clamped to `[1, 65535]` so they stay valid.
pub fn write_disparity_png(map: &DisparityMap) -> Result<Vec<u8>, DepthError> {
    let data: Vec<u16> = map
        .values
        .iter()
        .zip(&map.valid)
        .map(|(d, ok)| {
            if *ok {
                (d * PNG_DISPARITY_SCALE).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    encode_gray16(map.width, map.height, &data)
}

/// Binary depth dump: `PLDM`, u16 width, u16 height (LE), then row-major
/// f32 LE depths with 0 for invalid pixels.
pub fn write_depth_dump(map: &DepthMap) -> Result<Vec<u8>, DepthError> {
    let (w, h) = map.size();
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(DepthError::TooLarge(w, h));
    }
    let mut out = Vec::with_capacity(8 + 4 * w * h);
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(w as u16).to_le_bytes());
    out.extend_from_slice(&(h as u16).to_le_bytes());
    for (d, ok) in map.values.iter().zip(&map.valid) {
        let v = if *ok { *d as f32 } else { 0.0 };
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_depth_dump(bytes: &[u8]) -> Result<DepthMap, DepthError> {
    if bytes.len() < 8 || &bytes[..4] != DEPTH_MAGIC {
        return Err(DepthError::BadHeader("missing PLDM magic".into()));
    }
    let w = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let h = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let body = &bytes[8..];
    if body.len() != 4 * w * h {
        return Err(DepthError::BadHeader(format!(
            "{}x{} map needs {} bytes, found {}",
            w,
            h,
            4 * w * h,
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    DepthMap::from_values(w, h, values)
}

/// Per-pixel instance labels, 0 for background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u16>,
}

impl InstanceMask {
    pub fn new(width: usize, height: usize, ids: Vec<u16>) -> Result<Self, DepthError> {
        if ids.len() != width * height {
            return Err(DepthError::DimensionMismatch {
                expected: (width, height),
                got: (ids.len(), 1),
            });
        }
        Ok(Self { width, height, ids })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ids: vec![0; width * height],
        }
    }

    /// Largest instance id present.
    pub fn max_id(&self) -> u16 {
        self.ids.iter().copied().max().unwrap_or(0)
    }

    pub fn to_png(&self) -> Result<Vec<u8>, DepthError> {
        encode_gray16(self.width, self.height, &self.ids)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, DepthError> {
        let (w, h, ids) = decode_gray16(bytes)?;
        Self::new(w, h, ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(w: usize, h: usize) -> CameraModel {
        CameraModel::new(700.0, 700.0, (w / 2) as f64, (h / 2) as f64, 0.5, (w, h)).unwrap()
    }

    #[test]
    fn disparity_seven_is_fifty_meters() {
        let y = DisparityMap::from_values(1, 1, vec![7.0]).unwrap();
        let d = disparity_to_depth(&y, &cam(1, 1)).unwrap();
        assert_eq!(d.get(0, 0), Some(50.0));
        let back = depth_to_disparity(&d, &cam(1, 1)).unwrap();
        assert_eq!(back.get(0, 0), Some(7.0));
    }

    #[test]
    fn zero_disparity_is_invalid() {
        let y = DisparityMap::from_values(2, 1, vec![0.0, 7.0]).unwrap();
        let d = disparity_to_depth(&y, &cam(2, 1)).unwrap();
        assert_eq!(d.get(0, 0), None);
        assert_eq!(d.valid_count(), 1);
    }

    #[test]
    fn far_depths_are_dropped_not_clamped() {
        // 350 / 2.0 = 175 m > 120 m
        let y = DisparityMap::from_values(2, 1, vec![2.0, 3.5]).unwrap();
        let d = disparity_to_depth(&y, &cam(2, 1)).unwrap();
        assert_eq!(d.get(0, 0), None);
        assert_eq!(d.get(1, 0), Some(100.0));
    }

    #[test]
    fn size_must_match_camera() {
        let y = DisparityMap::from_values(2, 2, vec![7.0; 4]).unwrap();
        assert!(matches!(
            disparity_to_depth(&y, &cam(3, 2)),
            Err(DepthError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn invalid_stays_invalid_through_inverse() {
        let d = DepthMap::new(2, 1, vec![50.0, 9.0], vec![true, false]).unwrap();
        let y = depth_to_disparity(&d, &cam(2, 1)).unwrap();
        assert_eq!(y.get(1, 0), None);
        assert_eq!(y.values()[1], 0.0);
    }

    #[test]
    fn kernel_one_is_identity() {
        let d = DepthMap::from_values(3, 2, vec![1.0, 2.0, 0.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(box_smooth(&d, 1).unwrap(), d);
    }

    #[test]
    fn even_kernel_rejected() {
        let d = DepthMap::from_values(1, 1, vec![1.0]).unwrap();
        assert!(matches!(box_smooth(&d, 4), Err(DepthError::EvenKernel(4))));
        assert!(matches!(box_smooth(&d, 0), Err(DepthError::EvenKernel(0))));
    }

    #[test]
    fn constant_map_unchanged() {
        let d = DepthMap::from_values(7, 5, vec![12.5; 35]).unwrap();
        assert_eq!(box_smooth(&d, 3).unwrap(), d);
        assert_eq!(box_smooth(&d, 11).unwrap(), d);
    }

    #[test]
    fn center_pixel_is_mean_of_nine() {
        let d = DepthMap::from_values(
            3,
            3,
            vec![10.0, 10.0, 10.0, 10.0, 10.0, 50.0, 10.0, 10.0, 10.0],
        )
        .unwrap();
        let s = box_smooth(&d, 3).unwrap();
        // (8 * 10 + 50) / 9
        assert!((s.get(1, 1).unwrap() - 130.0 / 9.0).abs() < 1e-12);
        // corner window truncates to 2x2: (10 + 10 + 10 + 10) / 4
        assert!((s.get(0, 0).unwrap() - 10.0).abs() < 1e-12);
        // right edge column: 2x3 window holding one 50
        assert!((s.get(2, 0).unwrap() - (3.0 * 10.0 + 50.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn holes_excluded_and_preserved() {
        let d = DepthMap::new(3, 1, vec![10.0, 0.0, 20.0], vec![true, false, true]).unwrap();
        let s = box_smooth(&d, 3).unwrap();
        assert_eq!(s.get(1, 0), None);
        assert_eq!(s.get(0, 0), Some(10.0));
        assert_eq!(s.get(2, 0), Some(20.0));

        let empty = DepthMap::invalid(4, 4);
        assert_eq!(box_smooth(&empty, 3).unwrap().valid_count(), 0);
    }

    #[test]
    fn png_scale_and_sentinel() {
        let map = DisparityMap::new(2, 1, vec![7.0, 0.0], vec![true, false]).unwrap();
        let bytes = write_disparity_png(&map).unwrap();
        let back = read_disparity_png(&bytes).unwrap();
        assert_eq!(back, map);

        let raw = encode_gray16(2, 1, &[1792, 0]).unwrap();
        let parsed = read_disparity_png(&raw).unwrap();
        assert_eq!(parsed.get(0, 0), Some(7.0));
        assert_eq!(parsed.get(1, 0), None);
    }

    #[test]
    fn png_rejects_wrong_formats() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[3]).unwrap();
        }
        assert!(matches!(
            read_disparity_png(&out),
            Err(DepthError::UnsupportedBitDepth(8))
        ));

        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Sixteen);
            enc.write_header().unwrap().write_image_data(&[0; 6]).unwrap();
        }
        assert!(matches!(
            read_disparity_png(&out),
            Err(DepthError::NotSingleChannel(png::ColorType::Rgb))
        ));
    }

    #[test]
    fn depth_dump_round_trip() {
        let d = DepthMap::new(3, 2, vec![1.5, 0.0, 80.25, 3.0, 4.0, 5.0], vec![
            true, false, true, true, true, true,
        ])
        .unwrap();
        let bytes = write_depth_dump(&d).unwrap();
        assert_eq!(&bytes[..8], b"PLDM\x03\x00\x02\x00");
        assert_eq!(bytes.len(), 8 + 24);
        assert_eq!(read_depth_dump(&bytes).unwrap(), d);
        assert!(read_depth_dump(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_depth_dump(b"XXXX\x01\x00\x01\x00\0\0\0\0").is_err());
    }

    #[test]
    fn mask_png_round_trip() {
        let m = InstanceMask::new(3, 1, vec![0, 1, 513]).unwrap();
        assert_eq!(InstanceMask::from_png(&m.to_png().unwrap()).unwrap(), m);
        assert_eq!(m.max_id(), 513);
    }
}
