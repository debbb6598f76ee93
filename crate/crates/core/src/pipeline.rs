//! End-to-end colorization: features, correspondence masks, restricted
//! warp and refinement over a whole sequence.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::config::{MaskMode, PipelineConfig};
use crate::correspondence::NormalizedGrid;
use crate::dense_tracking::DenseTracker;
use crate::error::{ensure_dims, Error, Result};
use crate::features::{extract_builtin, grid_dims, load_external, FeatureGrid, FeatureSource};
use crate::imaging::{Frame, VideoSequence};
use crate::instance_tracking::{build_instance_mask, track_instances, InstanceLabelMap};
use crate::mask::{MaskOrigin, TrackMask};
use crate::warp::{upsample_chroma, warp_masked, ChromaGrid, WarpReference, WarpResult};

pub use crate::fixture::{generate_fixture, Fixture, FixtureSpec};

/// Progress sink receiving `(stage, done, total)`.
pub type Progress<'a> = &'a (dyn Fn(&str, usize, usize) + Sync);

/// A colored reference frame placed at a 1-based sequence index.
#[derive(Debug, Clone)]
pub struct ColorReference {
    pub index: usize,
    pub frame: Frame,
}

#[derive(Debug, Clone)]
pub struct Colorization {
    pub sequence: VideoSequence,
    /// Grid-resolution warp result per frame, before refinement.
    pub warps: Vec<WarpResult>,
    /// Grid-resolution chrominance per frame after refinement.
    pub refined: Vec<ChromaGrid>,
}

/// Per row: the intersection when non-empty, else the dense row, else the
/// instance row.
pub fn combine_masks(inst: &TrackMask, dense: &TrackMask) -> Result<TrackMask> {
    inst.same_dims(dense)?;
    let mut out = TrackMask::empty(inst.n_target(), inst.n_ref(), MaskOrigin::Combined);
    let mut both = vec![0u64; inst.n_ref().div_ceil(64)];
    for i in 0..inst.n_target() {
        for ((w, a), b) in both.iter_mut().zip(inst.row_words(i)).zip(dense.row_words(i)) {
            *w = a & b;
        }
        let row = if both.iter().any(|&w| w != 0) {
            &both[..]
        } else if !dense.row_is_empty(i) {
            dense.row_words(i)
        } else {
            inst.row_words(i)
        };
        out.copy_row_from(i, row);
    }
    Ok(out)
}

fn count_progress<'a>(progress: Option<Progress<'a>>, stage: &'a str, total: usize) -> impl Fn() + Sync + 'a {
    let done = AtomicUsize::new(0);
    move || {
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        if let Some(p) = progress {
            p(stage, k, total);
        }
    }
}

/// Built-in feature grids for every frame of `seq`, in frame order.
pub fn sequence_features(
    seq: &VideoSequence,
    stride: usize,
    scales: &[usize],
    progress: Option<Progress<'_>>,
) -> Result<Vec<FeatureGrid>> {
    let tick = count_progress(progress, "features", seq.len());
    seq.frames()
        .par_iter()
        .map(|f| {
            let g = extract_builtin(f, stride, scales);
            tick();
            g
        })
        .collect()
}

/// Sequence features from the configured source.
pub fn load_features(
    seq: &VideoSequence,
    config: &PipelineConfig,
    progress: Option<Progress<'_>>,
) -> Result<Vec<FeatureGrid>> {
    match config.feature_source() {
        FeatureSource::External { path } => {
            let (w, h) = seq.dims();
            let (gh, gw) = grid_dims(w, h, config.stride);
            load_external(&path, (seq.len(), gh, gw), config.stride)
        }
        FeatureSource::Builtin { stride, scales } => sequence_features(seq, stride, &scales, progress),
    }
}

/// Builds the per-reference masks of each target frame for a mask mode.
pub struct MaskBuilder {
    mode: MaskMode,
    references: Vec<usize>,
    dense: Option<DenseTracker>,
    labels: Option<Vec<InstanceLabelMap>>,
    occupancy_threshold: f64,
}

impl MaskBuilder {
    /// `grids` are the normalized sequence features; `labels`, when the
    /// mode needs them, are the raw per-frame instance maps.
    pub fn new(
        config: &PipelineConfig,
        grids: Arc<Vec<NormalizedGrid>>,
        references: Vec<usize>,
        labels: Option<&[InstanceLabelMap]>,
    ) -> Result<Self> {
        let mode = config.mode;
        let n = grids.len();
        let labels = if mode.uses_instances() {
            let maps = labels.ok_or_else(|| {
                Error::Configuration(format!("mask mode {mode} needs instance label maps"))
            })?;
            ensure_dims(maps.len() == n, || format!("{} label maps for {n} frames", maps.len()))?;
            if let Some(g) = grids.first() {
                for m in maps {
                    ensure_dims(m.grid_h() == g.grid_h() && m.grid_w() == g.grid_w(), || {
                        format!(
                            "label map grid is {}x{}, feature grid is {}x{}",
                            m.grid_w(),
                            m.grid_h(),
                            g.grid_w(),
                            g.grid_h()
                        )
                    })?;
                }
            }
            Some(track_instances(maps, config.iou_threshold)?)
        } else {
            None
        };
        let dense = if mode.uses_dense() {
            Some(DenseTracker::new(grids, config.dense_params())?)
        } else {
            None
        };
        Ok(Self {
            mode,
            references,
            dense,
            labels,
            occupancy_threshold: config.occupancy_threshold,
        })
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    /// One mask per reference for target frame `t`; `None` in mode none.
    pub fn masks(&self, t: usize) -> Result<Option<Vec<TrackMask>>> {
        if self.mode == MaskMode::None {
            return Ok(None);
        }
        self.references
            .iter()
            .map(|&r| {
                let inst = match &self.labels {
                    Some(maps) => Some(build_instance_mask(&maps[t - 1], &maps[r - 1], self.occupancy_threshold)?),
                    None => None,
                };
                let dense = match &self.dense {
                    Some(tracker) => Some(tracker.mask(t, r)?),
                    None => None,
                };
                match (inst, dense) {
                    (Some(i), Some(d)) => combine_masks(&i, &d),
                    (Some(m), None) | (None, Some(m)) => Ok(m),
                    (None, None) => unreachable!("mode {} builds some mask", self.mode),
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

fn check_references(seq: &VideoSequence, refs: &[ColorReference]) -> Result<()> {
    if refs.is_empty() {
        return Err(Error::Configuration("at least one reference frame is required".into()));
    }
    for r in refs {
        if r.index == 0 || r.index > seq.len() {
            return Err(Error::Configuration(format!(
                "reference index {} outside a {}-frame sequence",
                r.index,
                seq.len()
            )));
        }
        if !r.frame.has_color() {
            return Err(Error::InvalidInput(format!("reference at frame {} has no color", r.index)));
        }
        ensure_dims(r.frame.dims() == seq.dims(), || {
            format!(
                "reference at frame {} is {:?}, sequence is {:?}",
                r.index,
                r.frame.dims(),
                seq.dims()
            )
        })?;
    }
    Ok(())
}

/// Colorizes `seq` from the given references.
pub fn colorize(
    seq: &VideoSequence,
    refs: &[ColorReference],
    labels: Option<&[InstanceLabelMap]>,
    config: &PipelineConfig,
    progress: Option<Progress<'_>>,
) -> Result<Colorization> {
    config.validate()?;
    check_references(seq, refs)?;
    let features = load_features(seq, config, progress)?;
    let grids: Arc<Vec<NormalizedGrid>> = Arc::new(features.par_iter().map(NormalizedGrid::new).collect());
    let masks = MaskBuilder::new(config, grids.clone(), refs.iter().map(|r| r.index).collect(), labels)?;
    colorize_with_masks(seq, refs, &features, config, &|t| masks.masks(t), progress)
}

/// Colorization given precomputed sequence features and a mask source
/// mapping a target frame index to one mask per reference.
pub fn colorize_with_masks(
    seq: &VideoSequence,
    refs: &[ColorReference],
    features: &[FeatureGrid],
    config: &PipelineConfig,
    masks: &(dyn Fn(usize) -> Result<Option<Vec<TrackMask>>> + Sync),
    progress: Option<Progress<'_>>,
) -> Result<Colorization> {
    config.validate()?;
    check_references(seq, refs)?;
    ensure_dims(features.len() == seq.len(), || {
        format!("{} feature grids for {} frames", features.len(), seq.len())
    })?;
    let stride = features.first().map_or(config.stride, FeatureGrid::stride);
    let grids: Vec<NormalizedGrid> = features.par_iter().map(NormalizedGrid::new).collect();
    // Reference features come from the reference image itself when built in,
    // from the sequence grid at the reference index otherwise.
    let ref_grids: Vec<NormalizedGrid> = refs
        .iter()
        .map(|r| match config.feature_source() {
            FeatureSource::Builtin { stride, scales } => {
                extract_builtin(&r.frame, stride, &scales).map(|g| NormalizedGrid::new(&g))
            }
            FeatureSource::External { .. } => Ok(grids[r.index - 1].clone()),
        })
        .collect::<Result<_>>()?;
    let ref_ab: Vec<ChromaGrid> = refs
        .iter()
        .map(|r| ChromaGrid::from_frame(&r.frame, stride))
        .collect::<Result<_>>()?;
    let warp_refs: Vec<WarpReference<'_>> = ref_grids
        .iter()
        .zip(&ref_ab)
        .map(|(features, ab)| WarpReference { features, ab })
        .collect();

    let n = seq.len();
    let tick = count_progress(progress, "warp", n);
    let warps: Vec<WarpResult> = (1..=n)
        .into_par_iter()
        .map(|t| {
            let m = masks(t)?;
            let w = warp_masked(
                &grids[t - 1],
                &warp_refs,
                m.as_deref(),
                config.temperature,
                config.fallback_confidence,
            )?;
            tick();
            Ok(w)
        })
        .collect::<Result<_>>()?;

    let refiner = config.refiner()?;
    let (width, height) = seq.dims();
    let mut frames = Vec::with_capacity(n);
    let mut refined_all: Vec<ChromaGrid> = Vec::with_capacity(n);
    for (k, (frame, warp)) in seq.frames().iter().zip(&warps).enumerate() {
        let prev_l = k.checked_sub(1).map(|p| seq.frames()[p].l());
        let refined = refiner.refine_frame(prev_l, frame.l(), refined_all.last(), warp)?;
        let (a, b) = upsample_chroma(&refined, width, height)?;
        frames.push(frame.to_gray().with_ab(a, b)?);
        refined_all.push(refined);
        if let Some(p) = progress {
            p("refine", k + 1, n);
        }
    }
    Ok(Colorization {
        sequence: VideoSequence::new(frames)?,
        warps,
        refined: refined_all,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlendWeighting {
    Mean,
    Linear,
}

/// Per-frame weights of references at `ref_indices` for frame `t`.
pub fn blend_weights(t: usize, ref_indices: &[usize], weighting: BlendWeighting) -> Vec<f64> {
    let k = ref_indices.len();
    let dist: Vec<f64> = ref_indices.iter().map(|&r| t.abs_diff(r) as f64).collect();
    let total: f64 = dist.iter().sum();
    if weighting == BlendWeighting::Mean || total == 0.0 {
        return vec![1.0 / k as f64; k];
    }
    let raw: Vec<f64> = dist.iter().map(|d| 1.0 - d / total).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

/// Blends single-reference colorizations frame by frame.
pub fn blend_baseline(outputs: &[(usize, &VideoSequence)], weighting: BlendWeighting) -> Result<VideoSequence> {
    if outputs.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "blending needs at least two single-reference outputs, got {}",
            outputs.len()
        )));
    }
    let first = outputs[0].1;
    for (_, s) in outputs {
        ensure_dims(s.len() == first.len() && s.dims() == first.dims(), || {
            "blended sequences differ in length or size".into()
        })?;
    }
    let indices: Vec<usize> = outputs.iter().map(|o| o.0).collect();
    let frames = (0..first.len())
        .map(|k| {
            let weights = blend_weights(k + 1, &indices, weighting);
            let base = &first.frames()[k];
            let mut a = vec![0f32; base.l().len()];
            let mut b = vec![0f32; base.l().len()];
            for ((_, s), &w) in outputs.iter().zip(&weights) {
                let frame = &s.frames()[k];
                let (fa, fb) = frame
                    .ab()
                    .ok_or_else(|| Error::InvalidInput(format!("frame {} of a blended output has no color", k + 1)))?;
                for p in 0..a.len() {
                    a[p] += (w * fa[p] as f64) as f32;
                    b[p] += (w * fb[p] as f64) as f32;
                }
            }
            base.to_gray().with_ab(a, b)
        })
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames)
}
