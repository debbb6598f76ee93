//! Per-frame feature grids used for correspondence.
//!
//! The built-in descriptor summarizes luminance around each grid cell at a
//! few patch radii: patch mean, patch standard deviation, mean absolute
//! horizontal and vertical gradient, and an 8-bin gradient-orientation
//! histogram weighted by gradient magnitude. Trained features can instead be
//! loaded from an STCF file (see [`load_external`]).

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{ensure_dims, Error, Result};
use crate::imaging::Frame;

pub const DEFAULT_STRIDE: usize = 4;
pub const DEFAULT_SCALES: [usize; 3] = [2, 4, 8];

const ORIENTATION_BINS: usize = 8;
const PER_SCALE: usize = 4 + ORIENTATION_BINS;

pub const STCF_MAGIC: &[u8; 4] = b"STCF";
pub const STCF_VERSION: u32 = 1;
const STCF_HEADER_LEN: usize = 24;

/// Dense feature field at grid resolution, `channels` values per cell in
/// row-major cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    grid_h: usize,
    grid_w: usize,
    channels: usize,
    stride: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(grid_h: usize, grid_w: usize, channels: usize, stride: usize, data: Vec<f32>) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        if grid_h == 0 || grid_w == 0 || channels == 0 {
            return Err(Error::InvalidInput("feature grid has a zero dimension".into()));
        }
        ensure_dims(data.len() == grid_h * grid_w * channels, || {
            format!(
                "feature data has {} values, expected {}x{}x{}",
                data.len(),
                grid_h,
                grid_w,
                channels
            )
        })?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature grid contains non-finite values".into()));
        }
        Ok(Self {
            grid_h,
            grid_w,
            channels,
            stride,
            data,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn cell(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// True when both grids have the same shape.
    pub fn same_shape(&self, other: &FeatureGrid) -> bool {
        self.grid_h == other.grid_h && self.grid_w == other.grid_w && self.channels == other.channels
    }
}

/// Grid size covering a frame at the given stride.
pub fn grid_dims(width: usize, height: usize, stride: usize) -> (usize, usize) {
    (height.div_ceil(stride), width.div_ceil(stride))
}

/// Where features come from.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    Builtin { stride: usize, scales: Vec<usize> },
    External { path: PathBuf },
}

impl Default for FeatureSource {
    fn default() -> Self {
        FeatureSource::Builtin {
            stride: DEFAULT_STRIDE,
            scales: DEFAULT_SCALES.to_vec(),
        }
    }
}

struct Plane<'a> {
    w: usize,
    h: usize,
    data: &'a [f64],
}

impl Plane<'_> {
    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }
}

/// Computes the hand-crafted descriptor grid for one frame.
pub fn extract_builtin(frame: &Frame, stride: usize, scales: &[usize]) -> Result<FeatureGrid> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be >= 1".into()));
    }
    if scales.is_empty() {
        return Err(Error::InvalidParameter("at least one patch radius is required".into()));
    }
    let (w, h) = frame.dims();
    let (gh, gw) = grid_dims(w, h, stride);
    if gh < 2 || gw < 2 {
        return Err(Error::InvalidParameter(format!(
            "stride {stride} leaves a {gw}x{gh} grid for a {w}x{h} frame; need at least 2x2"
        )));
    }
    let largest = *scales.iter().max().unwrap();
    if w < 2 * largest + 1 || h < 2 * largest + 1 {
        return Err(Error::Degenerate(format!(
            "{w}x{h} frame is smaller than the {0}x{0} patch",
            2 * largest + 1
        )));
    }

    let lum: Vec<f64> = frame.l().iter().map(|&v| v as f64).collect();
    let lp = Plane { w, h, data: &lum };
    let n = w * h;
    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; n];
    let mut mag = vec![0.0; n];
    let mut bin = vec![0u8; n];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let gx = (lp.at(xi + 1, yi) - lp.at(xi - 1, yi)) * 0.5;
            let gy = (lp.at(xi, yi + 1) - lp.at(xi, yi - 1)) * 0.5;
            let k = y * w + x;
            dx[k] = gx.abs();
            dy[k] = gy.abs();
            mag[k] = (gx * gx + gy * gy).sqrt();
            let mut angle = gy.atan2(gx);
            if angle < 0.0 {
                angle += 2.0 * PI;
            }
            bin[k] = ((angle / (2.0 * PI / ORIENTATION_BINS as f64)) as usize % ORIENTATION_BINS) as u8;
        }
    }
    let dxp = Plane { w, h, data: &dx };
    let dyp = Plane { w, h, data: &dy };
    let magp = Plane { w, h, data: &mag };

    let channels = PER_SCALE * scales.len();
    let mut data = Vec::with_capacity(gh * gw * channels);
    let offset = ((stride - 1) / 2) as isize;
    for gy in 0..gh {
        for gx in 0..gw {
            let cx = (gx * stride) as isize + offset;
            let cy = (gy * stride) as isize + offset;
            for &s in scales {
                let r = s as isize;
                let count = ((2 * r + 1) * (2 * r + 1)) as f64;
                let (mut sum, mut sdx, mut sdy) = (0.0, 0.0, 0.0);
                let mut hist = [0.0f64; ORIENTATION_BINS];
                for y in cy - r..=cy + r {
                    for x in cx - r..=cx + r {
                        sum += lp.at(x, y);
                        sdx += dxp.at(x, y);
                        sdy += dyp.at(x, y);
                        let xc = x.clamp(0, w as isize - 1) as usize;
                        let yc = y.clamp(0, h as isize - 1) as usize;
                        hist[bin[yc * w + xc] as usize] += magp.at(x, y);
                    }
                }
                let mean = sum / count;
                let mut var = 0.0;
                for y in cy - r..=cy + r {
                    for x in cx - r..=cx + r {
                        let d = lp.at(x, y) - mean;
                        var += d * d;
                    }
                }
                data.push(mean as f32);
                data.push((var / count).sqrt() as f32);
                data.push((sdx / count) as f32);
                data.push((sdy / count) as f32);
                let total: f64 = hist.iter().sum();
                for v in hist {
                    data.push(if total > 0.0 { (v / total) as f32 } else { 0.0 });
                }
            }
        }
    }
    FeatureGrid::new(gh, gw, channels, stride, data)
}

/// Serializes grids into the STCF layout: magic, version, T, grid_h, grid_w,
/// L as little-endian u32, then f32 values in (t, row, col, channel) order.
pub fn encode_stcf(grids: &[FeatureGrid]) -> Result<Vec<u8>> {
    let first = grids
        .first()
        .ok_or_else(|| Error::InvalidInput("no grids to write".into()))?;
    if grids.iter().any(|g| !g.same_shape(first)) {
        return Err(Error::Dimension("all grids in an STCF file must share a shape".into()));
    }
    let mut out = Vec::with_capacity(STCF_HEADER_LEN + grids.len() * first.data.len() * 4);
    out.extend_from_slice(STCF_MAGIC);
    for v in [
        STCF_VERSION,
        grids.len() as u32,
        first.grid_h as u32,
        first.grid_w as u32,
        first.channels as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for g in grids {
        for v in &g.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_stcf(path: &Path, grids: &[FeatureGrid]) -> Result<()> {
    let bytes = encode_stcf(grids)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Parsed STCF header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StcfHeader {
    pub frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: usize,
}

impl StcfHeader {
    pub fn payload_len(&self) -> usize {
        self.frames * self.grid_h * self.grid_w * self.channels * 4
    }
}

pub fn parse_stcf_header(bytes: &[u8]) -> Result<StcfHeader> {
    if bytes.len() < STCF_HEADER_LEN {
        return Err(Error::Format(format!(
            "file has {} bytes, shorter than the {STCF_HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != STCF_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    if word(0) != STCF_VERSION {
        return Err(Error::Format(format!("unsupported version {}", word(0))));
    }
    let header = StcfHeader {
        frames: word(1) as usize,
        grid_h: word(2) as usize,
        grid_w: word(3) as usize,
        channels: word(4) as usize,
    };
    if header.frames == 0 || header.grid_h == 0 || header.grid_w == 0 || header.channels == 0 {
        return Err(Error::Format(format!("header has a zero dimension: {header:?}")));
    }
    Ok(header)
}

/// Decodes an in-memory STCF image, checking dims against `(T, grid_h, grid_w)`.
pub fn decode_stcf(bytes: &[u8], expected: Option<(usize, usize, usize)>, stride: usize) -> Result<Vec<FeatureGrid>> {
    let header = parse_stcf_header(bytes)?;
    if let Some((t, gh, gw)) = expected {
        ensure_dims((header.frames, header.grid_h, header.grid_w) == (t, gh, gw), || {
            format!(
                "file holds T={} {}x{} grids, expected T={t} {gh}x{gw}",
                header.frames, header.grid_w, header.grid_h
            )
        })?;
    }
    let payload = &bytes[STCF_HEADER_LEN..];
    if payload.len() < header.payload_len() {
        return Err(Error::Corruption(format!(
            "payload has {} bytes, header promises {}",
            payload.len(),
            header.payload_len()
        )));
    }
    let per_frame = header.grid_h * header.grid_w * header.channels;
    let values: Vec<f32> = payload[..header.payload_len()]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Corruption("payload contains non-finite values".into()));
    }
    values
        .chunks_exact(per_frame)
        .map(|chunk| FeatureGrid::new(header.grid_h, header.grid_w, header.channels, stride, chunk.to_vec()))
        .collect()
}

/// Loads an STCF feature file.
pub fn load_external(path: &Path, expected: (usize, usize, usize), stride: usize) -> Result<Vec<FeatureGrid>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_stcf(&bytes, Some(expected), stride)
}
