//! Pipeline settings and their `key = value` text form.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::correspondence::DEFAULT_TEMPERATURE;
use crate::dense_tracking::{DenseParams, DEFAULT_BINARIZE_THRESHOLD, DEFAULT_RADIUS};
use crate::error::{Error, Result};
use crate::features::{FeatureSource, DEFAULT_SCALES, DEFAULT_STRIDE};
use crate::instance_tracking::{DEFAULT_IOU_THRESHOLD, DEFAULT_OCCUPANCY_THRESHOLD};
use crate::refine::{Refiner, RefinerKind, DEFAULT_BLEND_FLOOR};
use crate::warp::DEFAULT_FALLBACK_CONFIDENCE;

pub const DEFAULT_RESIZE: (u32, u32) = (384, 216);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    #[default]
    None,
    Inst,
    Dense,
    InstDense,
}

impl MaskMode {
    pub fn uses_instances(self) -> bool {
        matches!(self, MaskMode::Inst | MaskMode::InstDense)
    }

    pub fn uses_dense(self) -> bool {
        matches!(self, MaskMode::Dense | MaskMode::InstDense)
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MaskMode::None),
            "inst" => Ok(MaskMode::Inst),
            "dense" => Ok(MaskMode::Dense),
            "inst+dense" => Ok(MaskMode::InstDense),
            _ => Err(Error::Configuration(format!(
                "unknown mask mode `{s}` (expected none, inst, dense or inst+dense)"
            ))),
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::None => "none",
            MaskMode::Inst => "inst",
            MaskMode::Dense => "dense",
            MaskMode::InstDense => "inst+dense",
        })
    }
}

impl FromStr for RefinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(RefinerKind::Identity),
            "temporal-blend" => Ok(RefinerKind::TemporalBlend),
            _ => Err(Error::Configuration(format!(
                "unknown refiner `{s}` (expected identity or temporal-blend)"
            ))),
        }
    }
}

impl fmt::Display for RefinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefinerKind::Identity => "identity",
            RefinerKind::TemporalBlend => "temporal-blend",
        })
    }
}

/// A reference frame given as `INDEX=PATH`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceSpec {
    pub index: usize,
    pub path: PathBuf,
}

impl FromStr for ReferenceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (idx, path) = s
            .split_once('=')
            .ok_or_else(|| Error::Configuration(format!("reference `{s}` is not INDEX=PATH")))?;
        let index = idx
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&i| i >= 1)
            .ok_or_else(|| Error::Configuration(format!("reference index `{idx}` is not a positive integer")))?;
        if path.trim().is_empty() {
            return Err(Error::Configuration(format!("reference `{s}` has an empty path")));
        }
        Ok(Self {
            index,
            path: PathBuf::from(path.trim()),
        })
    }
}

impl fmt::Display for ReferenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.index, self.path.display())
    }
}

/// Feature selection as written on the command line: `builtin` or `stcf:PATH`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum FeatureChoice {
    #[default]
    Builtin,
    Stcf(PathBuf),
}

impl FromStr for FeatureChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "builtin" {
            Ok(FeatureChoice::Builtin)
        } else if let Some(p) = s.strip_prefix("stcf:").filter(|p| !p.is_empty()) {
            Ok(FeatureChoice::Stcf(PathBuf::from(p)))
        } else {
            Err(Error::Configuration(format!("unknown feature source `{s}` (expected builtin or stcf:PATH)")))
        }
    }
}

impl fmt::Display for FeatureChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureChoice::Builtin => f.write_str("builtin"),
            FeatureChoice::Stcf(p) => write!(f, "stcf:{}", p.display()),
        }
    }
}

/// Parses `WxH` or `none`.
pub fn parse_resize(s: &str) -> Result<Option<(u32, u32)>> {
    if s == "none" {
        return Ok(None);
    }
    let bad = || Error::Configuration(format!("resize `{s}` is not WIDTHxHEIGHT or none"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    let w: u32 = w.parse().map_err(|_| bad())?;
    let h: u32 = h.parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok(Some((w, h)))
}

fn parse_scales(s: &str) -> Result<Vec<usize>> {
    let scales = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().ok().filter(|&v| v > 0))
        .collect::<Option<Vec<_>>>()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| Error::Configuration(format!("scales `{s}` are not a comma-separated list of positive integers")))?;
    Ok(scales)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stride: usize,
    pub scales: Vec<usize>,
    pub temperature: f64,
    pub radius: usize,
    pub threshold: f64,
    pub iou_threshold: f64,
    pub occupancy_threshold: f64,
    pub mode: MaskMode,
    pub refiner: RefinerKind,
    pub blend_floor: f64,
    pub fallback_confidence: f64,
    pub features: FeatureChoice,
    pub resize: Option<(u32, u32)>,
    pub references: Vec<ReferenceSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
            scales: DEFAULT_SCALES.to_vec(),
            temperature: DEFAULT_TEMPERATURE,
            radius: DEFAULT_RADIUS,
            threshold: DEFAULT_BINARIZE_THRESHOLD,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            occupancy_threshold: DEFAULT_OCCUPANCY_THRESHOLD,
            mode: MaskMode::None,
            refiner: RefinerKind::TemporalBlend,
            blend_floor: DEFAULT_BLEND_FLOOR,
            fallback_confidence: DEFAULT_FALLBACK_CONFIDENCE,
            features: FeatureChoice::Builtin,
            resize: Some(DEFAULT_RESIZE),
            references: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn dense_params(&self) -> DenseParams {
        DenseParams {
            radius: self.radius,
            threshold: self.threshold,
            temperature: self.temperature,
        }
    }

    pub fn refiner(&self) -> Result<Refiner> {
        Refiner::new(self.refiner, self.blend_floor)
    }

    pub fn feature_source(&self) -> FeatureSource {
        match &self.features {
            FeatureChoice::Builtin => FeatureSource::Builtin {
                stride: self.stride,
                scales: self.scales.clone(),
            },
            FeatureChoice::Stcf(p) => FeatureSource::External { path: p.clone() },
        }
    }

    /// Checks ranges that do not depend on the input sequence.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Configuration(m));
        if self.stride == 0 {
            return bad("stride must be >= 1".into());
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return bad("scales must be a non-empty list of positive sizes".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if self.radius == 0 {
            return bad("radius must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return bad(format!("threshold must lie in [0, 1), got {}", self.threshold));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return bad(format!("iou-threshold must lie in (0, 1), got {}", self.iou_threshold));
        }
        if !(0.0..=1.0).contains(&self.occupancy_threshold) {
            return bad(format!("occupancy-threshold must lie in [0, 1], got {}", self.occupancy_threshold));
        }
        if !(0.0..=1.0).contains(&self.blend_floor) {
            return bad(format!("blend-floor must lie in [0, 1], got {}", self.blend_floor));
        }
        if !(0.0..=1.0).contains(&self.fallback_confidence) {
            return bad(format!("fallback-confidence must lie in [0, 1], got {}", self.fallback_confidence));
        }
        Ok(())
    }

    /// Applies one `key = value` setting. `ref` appends a reference.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::Configuration(format!("`{key}` expects a number, got `{v}`")))
        };
        let int = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| Error::Configuration(format!("`{key}` expects a non-negative integer, got `{v}`")))
        };
        match key {
            "stride" => self.stride = int(value)?,
            "scales" => self.scales = parse_scales(value)?,
            "temperature" => self.temperature = num(value)?,
            "radius" => self.radius = int(value)?,
            "threshold" => self.threshold = num(value)?,
            "iou-threshold" => self.iou_threshold = num(value)?,
            "occupancy-threshold" => self.occupancy_threshold = num(value)?,
            "mode" => self.mode = value.parse()?,
            "refiner" => self.refiner = value.parse()?,
            "blend-floor" => self.blend_floor = num(value)?,
            "fallback-confidence" => self.fallback_confidence = num(value)?,
            "features" => self.features = value.parse()?,
            "resize" => self.resize = parse_resize(value)?,
            "ref" => self.references.push(value.parse()?),
            _ => return Err(Error::Configuration(format!("unknown setting `{key}`"))),
        }
        Ok(())
    }

    /// Reads settings from `key = value` lines; `#` starts a comment.
    pub fn parse_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Configuration(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Configuration(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.parse_text(&text)?;
        Ok(cfg)
    }

    /// Canonical `key = value` listing, one setting per line.
    pub fn to_text(&self) -> String {
        let scales: Vec<String> = self.scales.iter().map(|s| s.to_string()).collect();
        let resize = self.resize.map_or("none".to_string(), |(w, h)| format!("{w}x{h}"));
        let mut out = format!(
            "stride = {}\nscales = {}\ntemperature = {}\nradius = {}\nthreshold = {}\n\
             iou-threshold = {}\noccupancy-threshold = {}\nmode = {}\nrefiner = {}\n\
             blend-floor = {}\nfallback-confidence = {}\nfeatures = {}\nresize = {}\n",
            self.stride,
            scales.join(","),
            self.temperature,
            self.radius,
            self.threshold,
            self.iou_threshold,
            self.occupancy_threshold,
            self.mode,
            self.refiner,
            self.blend_floor,
            self.fallback_confidence,
            self.features,
            resize,
        );
        for r in &self.references {
            out.push_str(&format!("ref = {r}\n"));
        }
        out
    }
}
