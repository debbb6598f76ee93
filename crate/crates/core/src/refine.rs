//! Deterministic stand-ins for the learned refinement stage.
//!
//! A refiner receives the previous and current luminance, the previous
//! refined chrominance and the current warp result, and returns the refined
//! chrominance of the current frame at grid resolution.

use crate::error::{ensure_dims, Error, Result};
use crate::warp::{ChromaGrid, WarpResult};

pub const DEFAULT_BLEND_FLOOR: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefinerKind {
    Identity,
    TemporalBlend,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refiner {
    kind: RefinerKind,
    blend_floor: f64,
}

impl Default for Refiner {
    fn default() -> Self {
        Self {
            kind: RefinerKind::TemporalBlend,
            blend_floor: DEFAULT_BLEND_FLOOR,
        }
    }
}

impl Refiner {
    pub fn new(kind: RefinerKind, blend_floor: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&blend_floor) {
            return Err(Error::InvalidParameter(format!(
                "blend floor must lie in [0, 1], got {blend_floor}"
            )));
        }
        Ok(Self { kind, blend_floor })
    }

    pub fn identity() -> Self {
        Self {
            kind: RefinerKind::Identity,
            blend_floor: DEFAULT_BLEND_FLOOR,
        }
    }

    pub fn kind(&self) -> RefinerKind {
        self.kind
    }

    pub fn blend_floor(&self) -> f64 {
        self.blend_floor
    }

    /// Refined chrominance for the current frame. `prev_ab` is `None` for
    /// the first frame, in which case the warp is returned as is.
    pub fn refine_frame(
        &self,
        prev_l: Option<&[f32]>,
        cur_l: &[f32],
        prev_ab: Option<&ChromaGrid>,
        warp: &WarpResult,
    ) -> Result<ChromaGrid> {
        if let Some(p) = prev_l {
            ensure_dims(p.len() == cur_l.len(), || {
                format!("luminance planes hold {} and {} pixels", p.len(), cur_l.len())
            })?;
        }
        let w = &warp.ab_grid;
        ensure_dims(warp.confidence.len() == w.cells(), || "confidence and ab grids differ in size".into())?;
        let prev = match (self.kind, prev_ab) {
            (RefinerKind::Identity, _) | (_, None) => return Ok(w.clone()),
            (RefinerKind::TemporalBlend, Some(p)) => p,
        };
        ensure_dims(prev.grid_h() == w.grid_h() && prev.grid_w() == w.grid_w(), || {
            format!(
                "previous chrominance is {}x{}, warp is {}x{}",
                prev.grid_h(),
                prev.grid_w(),
                w.grid_h(),
                w.grid_w()
            )
        })?;
        let ab = (0..w.cells())
            .map(|i| {
                let lambda = self.blend_floor.max(warp.confidence[i]);
                let ([wa, wb], [pa, pb]) = (w.get(i), prev.get(i));
                [lambda * wa + (1.0 - lambda) * pa, lambda * wb + (1.0 - lambda) * pb]
            })
            .collect();
        ChromaGrid::new(w.grid_h(), w.grid_w(), ab)
    }
}
