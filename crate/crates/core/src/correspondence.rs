//! Correlation and affinity between feature grids.
//!
//! Correlation is the cosine similarity of mean-centered feature vectors.
//! Affinity is a softmax of correlation over reference cells, either per
//! reference (`per-row`) or jointly over a stack of references
//! (`per-stack`). Restriction zeroes entries outside a [`TrackMask`] and
//! renormalizes each row; a row with no surviving entry keeps its
//! unrestricted values and is flagged.

use rayon::prelude::*;

use crate::error::{ensure_dims, Error, Result};
use crate::features::FeatureGrid;
use crate::mask::TrackMask;

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Feature grid with every cell vector mean-centered and scaled to unit
/// length. Cells whose centered vector has zero norm become all-zero, so
/// their cosine with anything is 0.
#[derive(Debug, Clone)]
pub struct NormalizedGrid {
    grid_h: usize,
    grid_w: usize,
    channels: usize,
    data: Vec<f64>,
}

impl NormalizedGrid {
    pub fn new(grid: &FeatureGrid) -> Self {
        let (n, c) = (grid.cells(), grid.channels());
        let mut mean = vec![0.0f64; c];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(grid.cell(i)) {
                *m += v as f64;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut data = Vec::with_capacity(n * c);
        for i in 0..n {
            let start = data.len();
            data.extend(grid.cell(i).iter().zip(&mean).map(|(&v, m)| v as f64 - m));
            let norm = data[start..].iter().map(|x| x * x).sum::<f64>().sqrt();
            // Centered vectors this small are numerically constant cells.
            if norm > 1e-12 {
                data[start..].iter_mut().for_each(|x| *x /= norm);
            } else {
                data[start..].fill(0.0);
            }
        }
        Self {
            grid_h: grid.grid_h(),
            grid_w: grid.grid_w(),
            channels: c,
            data,
        }
    }

    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
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

    #[inline]
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// Correlation between cell `i` of `self` and cell `j` of `other`.
    #[inline]
    pub fn cosine(&self, i: usize, other: &NormalizedGrid, j: usize) -> f64 {
        dot(self.vector(i), other.vector(j))
    }

    pub fn same_shape(&self, other: &NormalizedGrid) -> bool {
        self.grid_h == other.grid_h && self.grid_w == other.grid_w && self.channels == other.channels
    }

    pub(crate) fn check_compatible(&self, other: &NormalizedGrid) -> Result<()> {
        ensure_dims(self.same_shape(other), || {
            format!(
                "grids are {}x{}x{} and {}x{}x{}",
                self.grid_h, self.grid_w, self.channels, other.grid_h, other.grid_w, other.channels
            )
        })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `n_target x n_ref` cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    n_target: usize,
    n_ref: usize,
    values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn from_values(n_target: usize, n_ref: usize, values: Vec<f64>) -> Result<Self> {
        ensure_dims(values.len() == n_target * n_ref, || {
            format!("{} values for a {n_target}x{n_ref} matrix", values.len())
        })?;
        Ok(Self {
            n_target,
            n_ref,
            values,
        })
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    pub fn n_ref(&self) -> usize {
        self.n_ref
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_ref + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_ref..(i + 1) * self.n_ref]
    }
}

pub fn correlation(target: &FeatureGrid, reference: &FeatureGrid) -> Result<CorrelationMatrix> {
    ensure_dims(target.same_shape(reference), || {
        format!(
            "target grid {}x{}x{} vs reference grid {}x{}x{}",
            target.grid_h(),
            target.grid_w(),
            target.channels(),
            reference.grid_h(),
            reference.grid_w(),
            reference.channels()
        )
    })?;
    Ok(correlation_normalized(&NormalizedGrid::new(target), &NormalizedGrid::new(reference)))
}

pub fn correlation_normalized(target: &NormalizedGrid, reference: &NormalizedGrid) -> CorrelationMatrix {
    let (nt, nr) = (target.cells(), reference.cells());
    let mut values = Vec::with_capacity(nt * nr);
    for i in 0..nt {
        values.extend((0..nr).map(|j| target.cosine(i, reference, j)));
    }
    CorrelationMatrix {
        n_target: nt,
        n_ref: nr,
        values,
    }
}

/// Stack of correlation matrices against several references.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedCorrelation {
    mats: Vec<CorrelationMatrix>,
}

impl StackedCorrelation {
    pub fn new(mats: Vec<CorrelationMatrix>) -> Result<Self> {
        if let Some(first) = mats.first() {
            for m in &mats {
                ensure_dims(m.n_target == first.n_target && m.n_ref == first.n_ref, || {
                    "stacked correlation matrices differ in shape".into()
                })?;
            }
        }
        Ok(Self { mats })
    }

    pub fn n_refs(&self) -> usize {
        self.mats.len()
    }

    pub fn matrices(&self) -> &[CorrelationMatrix] {
        &self.mats
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    PerRow,
    PerStack,
}

/// Non-negative weights laid out `[reference][target][ref cell]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n_stack: usize,
    n_target: usize,
    n_ref: usize,
    values: Vec<f64>,
    normalization: Normalization,
}

impl AffinityMatrix {
    pub fn from_values(n_target: usize, n_ref: usize, values: Vec<f64>) -> Result<Self> {
        Self::stacked_from_values(1, n_target, n_ref, values)
    }

    pub fn stacked_from_values(n_stack: usize, n_target: usize, n_ref: usize, values: Vec<f64>) -> Result<Self> {
        ensure_dims(values.len() == n_stack * n_target * n_ref, || {
            format!("{} values for a {n_stack}x{n_target}x{n_ref} stack", values.len())
        })?;
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("affinity weights must be finite and non-negative".into()));
        }
        Ok(Self {
            n_stack,
            n_target,
            n_ref,
            values,
            normalization: if n_stack == 1 {
                Normalization::PerRow
            } else {
                Normalization::PerStack
            },
        })
    }

    pub fn n_stack(&self) -> usize {
        self.n_stack
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    pub fn n_ref(&self) -> usize {
        self.n_ref
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    #[inline]
    fn offset(&self, r: usize, i: usize) -> usize {
        (r * self.n_target + i) * self.n_ref
    }

    pub fn get(&self, r: usize, i: usize, j: usize) -> f64 {
        self.values[self.offset(r, i) + j]
    }

    /// Row `i` of stack layer `r`.
    pub fn row(&self, r: usize, i: usize) -> &[f64] {
        let o = self.offset(r, i);
        &self.values[o..o + self.n_ref]
    }

    fn row_mut(&mut self, r: usize, i: usize) -> &mut [f64] {
        let o = self.offset(r, i);
        &mut self.values[o..o + self.n_ref]
    }

    /// Total weight of target row `i` across all stack layers.
    pub fn row_sum(&self, i: usize) -> f64 {
        (0..self.n_stack).map(|r| self.row(r, i).iter().sum::<f64>()).sum()
    }
}

/// Iteration over the non-zero entries of a single-layer row-stochastic matrix.
pub trait AffinityRows {
    fn n_target(&self) -> usize;
    fn n_ref(&self) -> usize;
    fn for_each_in_row(&self, i: usize, f: &mut dyn FnMut(usize, f64));
}

impl AffinityRows for AffinityMatrix {
    fn n_target(&self) -> usize {
        self.n_target
    }

    fn n_ref(&self) -> usize {
        self.n_ref
    }

    fn for_each_in_row(&self, i: usize, f: &mut dyn FnMut(usize, f64)) {
        for r in 0..self.n_stack {
            for (j, &v) in self.row(r, i).iter().enumerate() {
                if v != 0.0 {
                    f(j, v);
                }
            }
        }
    }
}

pub(crate) fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("temperature must be > 0, got {temperature}")))
    }
}

/// In-place softmax over several row segments treated as one row.
pub(crate) fn softmax_segments(segments: &mut [&mut [f64]], temperature: f64) {
    let max = segments
        .iter()
        .flat_map(|s| s.iter())
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if max == f64::NEG_INFINITY {
        return;
    }
    let mut total = 0.0;
    for s in segments.iter_mut() {
        for v in s.iter_mut() {
            *v = ((*v - max) / temperature).exp();
            total += *v;
        }
    }
    for s in segments.iter_mut() {
        for v in s.iter_mut() {
            *v /= total;
        }
    }
}

/// Row-wise softmax of `corr / temperature`.
pub fn affinity(corr: &CorrelationMatrix, temperature: f64) -> Result<AffinityMatrix> {
    check_temperature(temperature)?;
    let mut values = corr.values.clone();
    for row in values.chunks_exact_mut(corr.n_ref.max(1)) {
        softmax_segments(&mut [row], temperature);
    }
    AffinityMatrix::from_values(corr.n_target, corr.n_ref, values)
}

/// Softmax of each target row jointly over all (reference, cell) pairs.
pub fn stacked_affinity(corrs: &StackedCorrelation, temperature: f64) -> Result<AffinityMatrix> {
    check_temperature(temperature)?;
    let first = corrs
        .mats
        .first()
        .ok_or_else(|| Error::InvalidParameter("stacked affinity needs at least one reference".into()))?;
    let (k, nt, nr) = (corrs.mats.len(), first.n_target, first.n_ref);
    let mut values: Vec<f64> = corrs.mats.iter().flat_map(|m| m.values.iter().copied()).collect();
    let mut layers: Vec<&mut [f64]> = values.chunks_mut(nt * nr).collect();
    for i in 0..nt {
        let mut segs: Vec<&mut [f64]> = layers
            .iter_mut()
            .map(|layer| &mut layer[i * nr..(i + 1) * nr])
            .collect();
        softmax_segments(&mut segs, temperature);
    }
    let mut aff = AffinityMatrix::stacked_from_values(k, nt, nr, values)?;
    aff.normalization = Normalization::PerStack;
    Ok(aff)
}

/// Affinity after masking, plus which target rows fell back to the
/// unrestricted weights because their mask row was empty.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedAffinity {
    pub affinity: AffinityMatrix,
    pub fallback: Vec<bool>,
}

/// Zeroes entries outside `masks` (one per stack layer) and renormalizes rows.
pub fn restrict(aff: &AffinityMatrix, masks: &[TrackMask]) -> Result<RestrictedAffinity> {
    ensure_dims(masks.len() == aff.n_stack, || {
        format!("{} masks for a {}-layer affinity", masks.len(), aff.n_stack)
    })?;
    for m in masks {
        ensure_dims(m.n_target() == aff.n_target && m.n_ref() == aff.n_ref, || {
            format!(
                "mask is {}x{}, affinity is {}x{}",
                m.n_target(),
                m.n_ref(),
                aff.n_target,
                aff.n_ref
            )
        })?;
    }
    let mut out = aff.clone();
    let mut fallback = vec![false; aff.n_target];
    for (i, fb) in fallback.iter_mut().enumerate() {
        if masks.iter().all(|m| m.row_is_empty(i)) {
            *fb = true;
            continue;
        }
        let mut total = 0.0;
        for (r, m) in masks.iter().enumerate() {
            for (j, v) in out.row_mut(r, i).iter_mut().enumerate() {
                if !m.get(i, j) {
                    *v = 0.0;
                }
                total += *v;
            }
        }
        if total > 0.0 {
            for r in 0..aff.n_stack {
                out.row_mut(r, i).iter_mut().for_each(|v| *v /= total);
            }
        } else {
            // Every allowed entry underflowed to zero: nothing to renormalize.
            *fb = true;
            for r in 0..aff.n_stack {
                let src = aff.row(r, i).to_vec();
                out.row_mut(r, i).copy_from_slice(&src);
            }
        }
    }
    Ok(RestrictedAffinity {
        affinity: out,
        fallback,
    })
}

/// Square neighborhood of cells within Chebyshev distance `< radius`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub grid_h: usize,
    pub grid_w: usize,
    pub radius: usize,
}

impl Window {
    pub fn span(&self) -> usize {
        2 * self.radius - 1
    }

    /// Whether cells `i` and `j` lie within the window of each other.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        let (ri, ci) = (i / self.grid_w, i % self.grid_w);
        let (rj, cj) = (j / self.grid_w, j % self.grid_w);
        ri.abs_diff(rj) < self.radius && ci.abs_diff(cj) < self.radius
    }

    /// Cells in the window around `i`, ascending.
    pub fn cells(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c) = (i / self.grid_w, i % self.grid_w);
        let reach = self.radius - 1;
        let r0 = r.saturating_sub(reach);
        let r1 = (r + reach).min(self.grid_h - 1);
        let c0 = c.saturating_sub(reach);
        let c1 = (c + reach).min(self.grid_w - 1);
        (r0..=r1).flat_map(move |rr| (c0..=c1).map(move |cc| rr * self.grid_w + cc))
    }
}

/// Sparse row-stochastic affinity with each row supported on a window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedAffinity {
    window: Window,
    /// Row `i` holds the weights of `window.cells(i)` at `offsets[i]..offsets[i + 1]`.
    offsets: Vec<usize>,
    weights: Vec<f64>,
}

impl WindowedAffinity {
    pub fn window(&self) -> Window {
        self.window
    }

    pub fn cells(&self) -> usize {
        self.window.grid_h * self.window.grid_w
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.window.cells(i).zip(self.weights[a..b].iter().copied())
    }

    pub fn to_dense(&self) -> AffinityMatrix {
        let n = self.cells();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for (j, w) in self.row(i) {
                values[i * n + j] = w;
            }
        }
        AffinityMatrix::from_values(n, n, values).expect("valid weights")
    }

    /// Bytes held by the sparse rows.
    pub fn heap_bytes(&self) -> usize {
        self.offsets.len() * std::mem::size_of::<usize>() + self.weights.len() * 8
    }
}

impl AffinityRows for WindowedAffinity {
    fn n_target(&self) -> usize {
        self.cells()
    }

    fn n_ref(&self) -> usize {
        self.cells()
    }

    fn for_each_in_row(&self, i: usize, f: &mut dyn FnMut(usize, f64)) {
        for (j, w) in self.row(i) {
            f(j, w);
        }
    }
}

/// Affinity from `current` to `next` restricted to a window of `radius`
/// cells around each target cell, rows renormalized over the window.
pub fn windowed_affinity(
    current: &FeatureGrid,
    next: &FeatureGrid,
    radius: usize,
    temperature: f64,
) -> Result<WindowedAffinity> {
    ensure_dims(current.same_shape(next), || "windowed affinity needs equally shaped grids".into())?;
    windowed_affinity_normalized(&NormalizedGrid::new(current), &NormalizedGrid::new(next), radius, temperature)
}

pub fn windowed_affinity_normalized(
    current: &NormalizedGrid,
    next: &NormalizedGrid,
    radius: usize,
    temperature: f64,
) -> Result<WindowedAffinity> {
    current.check_compatible(next)?;
    check_temperature(temperature)?;
    if radius == 0 {
        return Err(Error::InvalidParameter("window radius must be >= 1".into()));
    }
    let window = Window {
        grid_h: current.grid_h,
        grid_w: current.grid_w,
        radius,
    };
    let n = current.cells();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row: Vec<f64> = window.cells(i).map(|j| current.cosine(i, next, j)).collect();
            softmax_segments(&mut [&mut row], temperature);
            row
        })
        .collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut weights = Vec::with_capacity(rows.iter().map(Vec::len).sum());
    offsets.push(0);
    for row in rows {
        weights.extend(row);
        offsets.push(weights.len());
    }
    Ok(WindowedAffinity {
        window,
        offsets,
        weights,
    })
}
