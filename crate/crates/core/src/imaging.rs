//! Frame representation, sRGB <-> CIE Lab conversion and frame-sequence I/O.
//!
//! Frames keep luminance (`L`, 0..=100) and the optional chrominance pair
//! (`a`, `b`, each clamped to -128..=127) as separate planes. Grayscale
//! inputs produce frames without chrominance.

use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, DynamicImage, GrayImage, RgbImage};
use lab::Lab;

use crate::error::{ensure_dims, Error, Result};

pub const L_MAX: f32 = 100.0;
pub const AB_MIN: f32 = -128.0;
pub const AB_MAX: f32 = 127.0;

/// One video frame in Lab, stored as planes in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    l: Vec<f32>,
    ab: Option<(Vec<f32>, Vec<f32>)>,
    index: usize,
}

impl Frame {
    pub fn new(
        width: usize,
        height: usize,
        l: Vec<f32>,
        ab: Option<(Vec<f32>, Vec<f32>)>,
        index: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("frame has zero size".into()));
        }
        let n = width * height;
        ensure_dims(l.len() == n, || {
            format!("luminance plane has {} values, expected {n}", l.len())
        })?;
        if l.iter().any(|v| !(0.0..=L_MAX).contains(v)) {
            return Err(Error::InvalidInput("luminance outside [0, 100]".into()));
        }
        if let Some((a, b)) = &ab {
            ensure_dims(a.len() == n && b.len() == n, || {
                format!("chrominance planes have {}/{} values, expected {n}", a.len(), b.len())
            })?;
            if a.iter().chain(b.iter()).any(|v| !(AB_MIN..=AB_MAX).contains(v)) {
                return Err(Error::InvalidInput("chrominance outside [-128, 127]".into()));
            }
        }
        Ok(Self {
            width,
            height,
            l,
            ab,
            index,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// 1-based position of the frame in its sequence.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn set_index(&mut self, index: usize) {
        self.index = index;
    }

    pub fn l(&self) -> &[f32] {
        &self.l
    }

    pub fn ab(&self) -> Option<(&[f32], &[f32])> {
        self.ab.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()))
    }

    pub fn has_color(&self) -> bool {
        self.ab.is_some()
    }

    /// Copy of this frame with the chrominance planes dropped.
    pub fn to_gray(&self) -> Frame {
        Frame {
            ab: None,
            ..self.clone()
        }
    }

    /// Replaces chrominance, clamping into the valid range.
    pub fn with_ab(&self, a: Vec<f32>, b: Vec<f32>) -> Result<Frame> {
        let n = self.width * self.height;
        ensure_dims(a.len() == n && b.len() == n, || {
            format!("chrominance planes have {}/{} values, expected {n}", a.len(), b.len())
        })?;
        let clamp = |v: Vec<f32>| -> Vec<f32> {
            v.into_iter().map(|x| x.clamp(AB_MIN, AB_MAX)).collect()
        };
        Ok(Frame {
            ab: Some((clamp(a), clamp(b))),
            ..self.clone()
        })
    }
}

/// Ordered frames sharing one size, indexed 1..=N.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    frames: Vec<Frame>,
    pub fps: Option<f64>,
}

impl VideoSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidInput("empty sequence".into()))?;
        let dims = first.dims();
        for (k, f) in frames.iter().enumerate() {
            if f.dims() != dims {
                return Err(Error::InconsistentSequence(format!(
                    "frame {} is {}x{}, expected {}x{}",
                    k + 1,
                    f.width,
                    f.height,
                    dims.0,
                    dims.1
                )));
            }
            if f.index != k + 1 {
                return Err(Error::InconsistentSequence(format!(
                    "frame at position {} carries index {}",
                    k + 1,
                    f.index
                )));
            }
        }
        Ok(Self { frames, fps: None })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame by 1-based index.
    pub fn frame(&self, index: usize) -> Option<&Frame> {
        index.checked_sub(1).and_then(|k| self.frames.get(k))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }
}

/// Converts an 8-bit sRGB raster to Lab (D65).
pub fn rgb_to_lab(rgb: &RgbImage, index: usize) -> Result<Frame> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput("zero-sized raster".into()));
    }
    let n = w * h;
    let mut l = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for px in rgb.pixels() {
        let lab = Lab::from_rgb(&px.0);
        l.push(lab.l.clamp(0.0, L_MAX));
        a.push(lab.a.clamp(AB_MIN, AB_MAX));
        b.push(lab.b.clamp(AB_MIN, AB_MAX));
    }
    Frame::new(w, h, l, Some((a, b)), index)
}

/// Luminance-only frame from an 8-bit gray raster.
pub fn gray_to_frame(gray: &GrayImage, index: usize) -> Result<Frame> {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput("zero-sized raster".into()));
    }
    let lut: Vec<f32> = (0..=255u8)
        .map(|v| Lab::from_rgb(&[v, v, v]).l.clamp(0.0, L_MAX))
        .collect();
    let l = gray.pixels().map(|p| lut[p.0[0] as usize]).collect();
    Frame::new(w, h, l, None, index)
}

/// Converts a Lab frame back to 8-bit sRGB; out-of-gamut values are clamped.
pub fn lab_to_rgb(frame: &Frame) -> Result<RgbImage> {
    let (a, b) = frame
        .ab()
        .ok_or_else(|| Error::InvalidInput("frame has no chrominance planes".into()))?;
    let mut out = RgbImage::new(frame.width as u32, frame.height as u32);
    for (k, px) in out.pixels_mut().enumerate() {
        px.0 = Lab {
            l: frame.l[k],
            a: a[k],
            b: b[k],
        }
        .to_rgb();
    }
    Ok(out)
}

/// Renders luminance as an 8-bit gray raster.
pub fn luminance_to_gray(frame: &Frame) -> GrayImage {
    let mut out = GrayImage::new(frame.width as u32, frame.height as u32);
    for (k, px) in out.pixels_mut().enumerate() {
        px.0 = [Lab {
            l: frame.l[k],
            a: 0.0,
            b: 0.0,
        }
        .to_rgb()[0]];
    }
    out
}

/// Frame filename template such as `frame_%05d.png`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePattern {
    prefix: String,
    suffix: String,
    width: usize,
}

impl FramePattern {
    pub fn parse(template: &str) -> Result<Self> {
        let start = template
            .find('%')
            .ok_or_else(|| Error::InvalidParameter(format!("no %d field in template {template:?}")))?;
        let rest = &template[start + 1..];
        let end = rest
            .find('d')
            .ok_or_else(|| Error::InvalidParameter(format!("no %d field in template {template:?}")))?;
        let spec = &rest[..end];
        let width = if spec.is_empty() {
            0
        } else {
            spec.trim_start_matches('0')
                .parse::<usize>()
                .map_err(|_| Error::InvalidParameter(format!("bad field width in {template:?}")))?
        };
        let suffix = &rest[end + 1..];
        if suffix.contains('%') {
            return Err(Error::InvalidParameter(format!(
                "template {template:?} has more than one field"
            )));
        }
        Ok(Self {
            prefix: template[..start].to_string(),
            suffix: suffix.to_string(),
            width,
        })
    }

    pub fn format(&self, index: usize) -> String {
        format!("{}{:0w$}{}", self.prefix, index, self.suffix, w = self.width)
    }

    /// Parses the index out of a filename, if it matches.
    pub fn matches(&self, name: &str) -> Option<usize> {
        let digits = name.strip_prefix(&self.prefix)?.strip_suffix(&self.suffix)?;
        if digits.is_empty() || !digits.bytes().all(|c| c.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok()
    }
}

impl Default for FramePattern {
    fn default() -> Self {
        Self::parse("frame_%05d.png").expect("valid default template")
    }
}

/// Files in `dir` matching `pattern`, sorted by their parsed index.
pub fn list_frames(dir: &Path, pattern: &FramePattern) -> Result<Vec<(usize, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(idx) = name.to_str().and_then(|s| pattern.matches(s)) {
            found.push((idx, entry.path()));
        }
    }
    if found.is_empty() {
        return Err(Error::NotFound(format!(
            "no frames matching {}{{index}}{} in {}",
            pattern.prefix,
            pattern.suffix,
            dir.display()
        )));
    }
    found.sort();
    Ok(found)
}

pub(crate) fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::image(path, e))
}

/// Converts a decoded image to a frame; single-channel images are treated as
/// grayscale and yield no chrominance.
pub fn image_to_frame(img: &DynamicImage, index: usize, resize: Option<(u32, u32)>) -> Result<Frame> {
    let gray = img.color().channel_count() <= 2;
    if gray {
        let mut g = img.to_luma8();
        if let Some((w, h)) = resize.filter(|&d| d != g.dimensions()) {
            g = imageops::resize(&g, w, h, imageops::FilterType::Triangle);
        }
        gray_to_frame(&g, index)
    } else {
        let mut rgb = img.to_rgb8();
        if let Some((w, h)) = resize.filter(|&d| d != rgb.dimensions()) {
            rgb = imageops::resize(&rgb, w, h, imageops::FilterType::Triangle);
        }
        rgb_to_lab(&rgb, index)
    }
}

pub fn load_frame(path: &Path, index: usize, resize: Option<(u32, u32)>) -> Result<Frame> {
    image_to_frame(&open_image(path)?, index, resize)
}

/// Loads every frame in `dir` matching `pattern`, renumbered 1..=N in index order.
pub fn load_sequence(dir: &Path, pattern: &FramePattern) -> Result<VideoSequence> {
    load_sequence_resized(dir, pattern, None)
}

pub fn load_sequence_resized(
    dir: &Path,
    pattern: &FramePattern,
    resize: Option<(u32, u32)>,
) -> Result<VideoSequence> {
    let files = list_frames(dir, pattern)?;
    let mut frames = Vec::with_capacity(files.len());
    for (k, (_, path)) in files.iter().enumerate() {
        let frame = load_frame(path, k + 1, resize)?;
        if let Some(first) = frames.first() {
            let first: &Frame = first;
            if first.dims() != frame.dims() {
                return Err(Error::InconsistentSequence(format!(
                    "{} is {}x{}, first frame is {}x{}",
                    path.display(),
                    frame.width,
                    frame.height,
                    first.width,
                    first.height
                )));
            }
        }
        frames.push(frame);
    }
    VideoSequence::new(frames)
}

/// Writes each frame as PNG: RGB when it has chrominance, gray otherwise.
pub fn save_sequence(seq: &VideoSequence, dir: &Path, pattern: &FramePattern) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(seq.len());
    for frame in seq.frames() {
        let path = dir.join(pattern.format(frame.index()));
        save_frame(frame, &path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn save_frame(frame: &Frame, path: &Path) -> Result<()> {
    let res = if frame.has_color() {
        lab_to_rgb(frame)?.save(path)
    } else {
        luminance_to_gray(frame).save(path)
    };
    res.map_err(|e| Error::image(path, e))
}
