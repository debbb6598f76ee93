//! Dense mask propagation from each target cell toward a reference frame.
//!
//! Every target cell starts as a one-cell candidate set. Each step pushes
//! the set through the windowed affinity between consecutive frames, sums
//! the weight landing on each next-frame cell, and keeps the cells whose
//! mass exceeds the binarize threshold. When no cell clears the threshold
//! the single heaviest cell is kept (lowest index on ties), so candidate
//! sets never become empty. The candidate set reached at the reference
//! frame becomes that target cell's row of the dense mask.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use image::GrayImage;

use rayon::prelude::*;

use crate::correspondence::{windowed_affinity_normalized, AffinityRows, NormalizedGrid, WindowedAffinity};
use crate::error::{Error, Result};
use crate::features::FeatureGrid;
use crate::mask::{MaskOrigin, TrackMask};

pub const DEFAULT_RADIUS: usize = 9;
pub const DEFAULT_BINARIZE_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseParams {
    /// Window radius in grid cells.
    pub radius: usize,
    pub threshold: f64,
    pub temperature: f64,
}

impl Default for DenseParams {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            threshold: DEFAULT_BINARIZE_THRESHOLD,
            temperature: crate::correspondence::DEFAULT_TEMPERATURE,
        }
    }
}

impl DenseParams {
    fn validate(&self) -> Result<()> {
        if self.radius == 0 {
            return Err(Error::InvalidParameter("window radius must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::InvalidParameter("temperature must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::InvalidParameter(format!(
                "binarize threshold must lie in [0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Candidate set of one origin cell at some frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseState {
    origin: usize,
    cells: usize,
    frame: usize,
    ref_frame: usize,
    candidates: Vec<usize>,
}

impl DenseState {
    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn ref_frame(&self) -> usize {
        self.ref_frame
    }

    /// -1, 0 or +1: the step toward the reference frame.
    pub fn direction(&self) -> isize {
        (self.ref_frame as isize - self.frame as isize).signum()
    }

    pub fn is_terminal(&self) -> bool {
        self.frame == self.ref_frame
    }

    /// Candidate cells, ascending.
    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }
}

pub fn init_state(origin: usize, cells: usize, frame: usize, ref_frame: usize) -> Result<DenseState> {
    if origin >= cells {
        return Err(Error::Index(format!("origin cell {origin} outside a {cells}-cell grid")));
    }
    Ok(DenseState {
        origin,
        cells,
        frame,
        ref_frame,
        candidates: vec![origin],
    })
}

/// Scratch buffer for repeated propagation steps.
#[derive(Debug)]
pub struct StepScratch {
    mass: Vec<f64>,
    touched: Vec<usize>,
}

impl StepScratch {
    pub fn new(cells: usize) -> Self {
        Self {
            mass: vec![0.0; cells],
            touched: Vec::new(),
        }
    }
}

/// One binarized propagation step of `candidates` through `aff`.
pub fn step_candidates(
    candidates: &[usize],
    aff: &dyn AffinityRows,
    threshold: f64,
    scratch: &mut StepScratch,
) -> Vec<usize> {
    let StepScratch { mass, touched } = scratch;
    for &i in candidates {
        aff.for_each_in_row(i, &mut |j, w| {
            if mass[j] == 0.0 {
                touched.push(j);
            }
            mass[j] += w;
        });
    }
    touched.sort_unstable();
    touched.dedup();
    let mut next: Vec<usize> = touched.iter().copied().filter(|&j| mass[j] > threshold).collect();
    if next.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        for &j in touched.iter() {
            if best.is_none_or(|(_, m)| mass[j] > m) {
                best = Some((j, mass[j]));
            }
        }
        // All-zero rows leave nothing touched; stay in place.
        next.push(best.map_or(candidates[0], |(j, _)| j));
    }
    for &j in touched.iter() {
        mass[j] = 0.0;
    }
    touched.clear();
    next
}

/// Advances `state` by one frame through the windowed affinity between the
/// state's frame and the next frame toward the reference.
pub fn propagate_step(state: &DenseState, aff: &dyn AffinityRows, threshold: f64) -> Result<DenseState> {
    if state.is_terminal() {
        return Err(Error::InvalidInput("state already reached the reference frame".into()));
    }
    if aff.n_target() != state.cells || aff.n_ref() != state.cells {
        return Err(Error::Dimension(format!(
            "affinity is {}x{}, state has {} cells",
            aff.n_target(),
            aff.n_ref(),
            state.cells
        )));
    }
    let mut scratch = StepScratch::new(state.cells);
    let candidates = step_candidates(&state.candidates, aff, threshold, &mut scratch);
    Ok(DenseState {
        frame: (state.frame as isize + state.direction()) as usize,
        candidates,
        ..state.clone()
    })
}

/// Propagates every cell of `frames[0]` to the last frame. `frames` lists
/// `(frame index, grid)` in propagation order; indices must step by exactly
/// one toward the last entry.
pub fn build_dense_mask(frames: &[(usize, &FeatureGrid)], params: &DenseParams) -> Result<TrackMask> {
    params.validate()?;
    let (first, last) = match (frames.first(), frames.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => return Err(Error::InvalidInput("no frames to track through".into())),
    };
    let dir = (last as isize - first as isize).signum();
    for (k, w) in frames.windows(2).enumerate() {
        if w[1].0 as isize - w[0].0 as isize != dir || dir == 0 {
            return Err(Error::InvalidInput(format!(
                "frame coverage has a gap between positions {k} and {}: indices {} -> {}",
                k + 1,
                w[0].0,
                w[1].0
            )));
        }
        if !w[0].1.same_shape(w[1].1) {
            return Err(Error::Dimension("feature grids along the track differ in shape".into()));
        }
    }
    let grids: Vec<NormalizedGrid> = frames.iter().map(|(_, g)| NormalizedGrid::new(g)).collect();
    let affs = grids
        .windows(2)
        .map(|w| windowed_affinity_normalized(&w[0], &w[1], params.radius, params.temperature))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&WindowedAffinity> = affs.iter().collect();
    Ok(propagate_all(grids[0].cells(), &refs, params.threshold))
}

/// Runs all origins in lockstep; origins sharing a candidate set share its
/// propagation.
pub(crate) fn propagate_all(cells: usize, steps: &[&WindowedAffinity], threshold: f64) -> TrackMask {
    let mut slot: Vec<usize> = (0..cells).collect();
    let mut sets: Vec<Vec<usize>> = (0..cells).map(|i| vec![i]).collect();
    for aff in steps {
        let next: Vec<Vec<usize>> = sets
            .par_iter()
            .map_init(
                || StepScratch::new(cells),
                |scratch, set| step_candidates(set, *aff, threshold, scratch),
            )
            .collect();
        // Deduplicate so identical sets are propagated once next step.
        let mut index: HashMap<&[usize], usize> = HashMap::with_capacity(next.len());
        let mut remap = Vec::with_capacity(next.len());
        let mut unique: Vec<Vec<usize>> = Vec::new();
        for set in &next {
            let id = *index.entry(set.as_slice()).or_insert_with(|| {
                unique.push(set.clone());
                unique.len() - 1
            });
            remap.push(id);
        }
        for s in slot.iter_mut() {
            *s = remap[*s];
        }
        sets = unique;
    }
    let mut mask = TrackMask::empty(cells, cells, MaskOrigin::Dense);
    for (i, &s) in slot.iter().enumerate() {
        mask.set_row(i, sets[s].iter().copied());
    }
    mask
}

/// Dense tracker over one sequence's feature grids with a write-once cache
/// of windowed affinities per consecutive frame pair and direction.
#[derive(Debug)]
pub struct DenseTracker {
    params: DenseParams,
    grids: Arc<Vec<NormalizedGrid>>,
    forward: Vec<OnceLock<WindowedAffinity>>,
    backward: Vec<OnceLock<WindowedAffinity>>,
}

impl DenseTracker {
    /// `grids[k]` holds frame `k + 1`.
    pub fn new(grids: Arc<Vec<NormalizedGrid>>, params: DenseParams) -> Result<Self> {
        params.validate()?;
        if let Some(first) = grids.first() {
            for g in grids.iter() {
                first.check_compatible(g)?;
            }
        }
        let pairs = grids.len().saturating_sub(1);
        Ok(Self {
            params,
            grids,
            forward: (0..pairs).map(|_| OnceLock::new()).collect(),
            backward: (0..pairs).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn params(&self) -> &DenseParams {
        &self.params
    }

    pub fn frames(&self) -> usize {
        self.grids.len()
    }

    /// Affinity from frame `from` to the adjacent frame `to` (1-based).
    pub fn pair_affinity(&self, from: usize, to: usize) -> Result<&WindowedAffinity> {
        let n = self.grids.len();
        if from == 0 || to == 0 || from > n || to > n || from.abs_diff(to) != 1 {
            return Err(Error::Index(format!("no adjacent frame pair {from} -> {to} in {n} frames")));
        }
        let (cell, k) = if to > from {
            (&self.forward, from - 1)
        } else {
            (&self.backward, to - 1)
        };
        if let Some(a) = cell[k].get() {
            return Ok(a);
        }
        // Built outside the cell: the row computation is itself parallel, and
        // a worker blocked in `get_or_init` could steal a task waiting on the
        // same cell. Concurrent builders produce identical values.
        let a = windowed_affinity_normalized(
            &self.grids[from - 1],
            &self.grids[to - 1],
            self.params.radius,
            self.params.temperature,
        )?;
        Ok(cell[k].get_or_init(|| a))
    }

    /// Dense mask from target frame `target` to reference frame `reference`.
    pub fn mask(&self, target: usize, reference: usize) -> Result<TrackMask> {
        let n = self.grids.len();
        if target == 0 || reference == 0 || target > n || reference > n {
            return Err(Error::Index(format!(
                "frames {target} -> {reference} outside a {n}-frame sequence"
            )));
        }
        let cells = self.grids[0].cells();
        if target == reference {
            return Ok(TrackMask::identity(cells, MaskOrigin::Dense));
        }
        let path: Vec<usize> = if reference > target {
            (target..=reference).collect()
        } else {
            (reference..=target).rev().collect()
        };
        let steps = path
            .windows(2)
            .map(|w| self.pair_affinity(w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(propagate_all(cells, &steps, self.params.threshold))
    }

    /// Bytes currently held by cached affinities.
    pub fn cache_bytes(&self) -> usize {
        self.forward
            .iter()
            .chain(&self.backward)
            .filter_map(|c| c.get())
            .map(WindowedAffinity::heap_bytes)
            .sum()
    }
}

/// Writes one PNG per origin cell with the cell's candidates on the
/// reference grid drawn white, each cell `scale` pixels square.
pub fn dump_masks(
    mask: &TrackMask,
    grid_h: usize,
    grid_w: usize,
    origins: &[usize],
    scale: u32,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if mask.n_ref() != grid_h * grid_w {
        return Err(Error::Dimension(format!(
            "mask has {} reference cells, grid is {grid_w}x{grid_h}",
            mask.n_ref()
        )));
    }
    let scale = scale.max(1);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    origins
        .iter()
        .map(|&i| {
            if i >= mask.n_target() {
                return Err(Error::Index(format!("origin cell {i} outside a {}-cell grid", mask.n_target())));
            }
            let img = GrayImage::from_fn(grid_w as u32 * scale, grid_h as u32 * scale, |x, y| {
                let j = (y / scale) as usize * grid_w + (x / scale) as usize;
                image::Luma([if mask.get(i, j) { 255 } else { 0 }])
            });
            let path = dir.join(format!("cell_{i:06}.png"));
            img.save(&path).map_err(|e| Error::image(&path, e))?;
            Ok(path)
        })
        .collect()
}
