//! Transfer of reference chrominance to a target frame through affinities.

use rayon::prelude::*;

use crate::correspondence::{check_temperature, softmax_segments, AffinityMatrix, NormalizedGrid, RestrictedAffinity};
use crate::error::{ensure_dims, Error, Result};
use crate::features::grid_dims;
use crate::imaging::Frame;
use crate::mask::TrackMask;

/// Confidence multiplier for rows that fell back to unrestricted weights.
pub const DEFAULT_FALLBACK_CONFIDENCE: f64 = 0.5;

/// Chrominance sampled on the feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaGrid {
    grid_h: usize,
    grid_w: usize,
    ab: Vec<[f64; 2]>,
}

impl ChromaGrid {
    pub fn new(grid_h: usize, grid_w: usize, ab: Vec<[f64; 2]>) -> Result<Self> {
        ensure_dims(ab.len() == grid_h * grid_w, || {
            format!("{} ab pairs for a {grid_h}x{grid_w} grid", ab.len())
        })?;
        Ok(Self { grid_h, grid_w, ab })
    }

    pub fn constant(grid_h: usize, grid_w: usize, ab: [f64; 2]) -> Self {
        Self {
            grid_h,
            grid_w,
            ab: vec![ab; grid_h * grid_w],
        }
    }

    /// Area average of a colored frame's ab over each `stride x stride` cell.
    pub fn from_frame(frame: &Frame, stride: usize) -> Result<Self> {
        let (a, b) = frame
            .ab()
            .ok_or_else(|| Error::InvalidInput(format!("frame {} carries no chrominance", frame.index())))?;
        if stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        let (w, h) = frame.dims();
        let (gh, gw) = grid_dims(w, h, stride);
        let mut ab = Vec::with_capacity(gh * gw);
        for gy in 0..gh {
            for gx in 0..gw {
                let (mut sa, mut sb, mut n) = (0.0, 0.0, 0.0);
                for y in gy * stride..((gy + 1) * stride).min(h) {
                    for x in gx * stride..((gx + 1) * stride).min(w) {
                        sa += a[y * w + x] as f64;
                        sb += b[y * w + x] as f64;
                        n += 1.0;
                    }
                }
                ab.push([sa / n, sb / n]);
            }
        }
        Ok(Self {
            grid_h: gh,
            grid_w: gw,
            ab,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn cells(&self) -> usize {
        self.ab.len()
    }

    pub fn get(&self, i: usize) -> [f64; 2] {
        self.ab[i]
    }

    pub fn values(&self) -> &[[f64; 2]] {
        &self.ab
    }
}

/// Chrominance and confidence at pixel resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FullChroma {
    pub width: usize,
    pub height: usize,
    pub a: Vec<f32>,
    pub b: Vec<f32>,
    pub confidence: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub ab_grid: ChromaGrid,
    /// Per-cell confidence in `[0, 1]`.
    pub confidence: Vec<f64>,
    /// Cells whose mask row was empty and used unrestricted weights.
    pub fallback: Vec<bool>,
    pub ab_full: Option<FullChroma>,
}

impl WarpResult {
    pub fn fallback_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.fallback.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i)
    }

    pub fn with_full(mut self, width: usize, height: usize) -> Result<Self> {
        self.ab_full = Some(upsample_ab(&self, width, height)?);
        Ok(self)
    }
}

fn check_refs(aff: &AffinityMatrix, refs: &[ChromaGrid]) -> Result<()> {
    ensure_dims(refs.len() == aff.n_stack(), || {
        format!("{} references for a {}-layer affinity", refs.len(), aff.n_stack())
    })?;
    for r in refs {
        ensure_dims(r.cells() == aff.n_ref(), || {
            format!("reference has {} cells, affinity expects {}", r.cells(), aff.n_ref())
        })?;
    }
    Ok(())
}

/// Weighted sum of reference colors over every layer of `aff`.
pub fn warp_multi(aff: &AffinityMatrix, refs: &[ChromaGrid]) -> Result<WarpResult> {
    check_refs(aff, refs)?;
    let grid = refs
        .first()
        .ok_or_else(|| Error::InvalidParameter("warp needs at least one reference".into()))?;
    let (ab, confidence): (Vec<[f64; 2]>, Vec<f64>) = (0..aff.n_target())
        .into_par_iter()
        .map(|i| {
            let (mut wa, mut wb, mut best) = (0.0, 0.0, 0.0f64);
            for (r, reference) in refs.iter().enumerate() {
                for (j, &w) in aff.row(r, i).iter().enumerate() {
                    let [a, b] = reference.ab[j];
                    wa += w * a;
                    wb += w * b;
                    best = best.max(w);
                }
            }
            ([wa, wb], best.min(1.0))
        })
        .unzip();
    // Target and reference grids share a shape whenever n_target == n_ref.
    let (gh, gw) = if aff.n_target() == grid.cells() {
        (grid.grid_h, grid.grid_w)
    } else {
        (1, aff.n_target())
    };
    Ok(WarpResult {
        ab_grid: ChromaGrid { grid_h: gh, grid_w: gw, ab },
        fallback: vec![false; confidence.len()],
        confidence,
        ab_full: None,
    })
}

pub fn warp_single(aff: &AffinityMatrix, reference: &ChromaGrid) -> Result<WarpResult> {
    ensure_dims(aff.n_stack() == 1, || {
        format!("single-reference warp given a {}-layer affinity", aff.n_stack())
    })?;
    warp_multi(aff, std::slice::from_ref(reference))
}

/// Warp through a restricted affinity; fallback rows carry the restrict()
/// flags and have their confidence scaled by `fallback_confidence`.
pub fn warp_restricted(
    restricted: &RestrictedAffinity,
    refs: &[ChromaGrid],
    fallback_confidence: f64,
) -> Result<WarpResult> {
    check_fallback_confidence(fallback_confidence)?;
    let mut out = warp_multi(&restricted.affinity, refs)?;
    for (i, &f) in restricted.fallback.iter().enumerate() {
        if f {
            out.confidence[i] *= fallback_confidence;
        }
    }
    out.fallback = restricted.fallback.clone();
    Ok(out)
}

fn check_fallback_confidence(v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("fallback confidence must lie in [0, 1], got {v}")))
    }
}

/// One reference for [`warp_masked`].
#[derive(Debug, Clone, Copy)]
pub struct WarpReference<'a> {
    pub features: &'a NormalizedGrid,
    pub ab: &'a ChromaGrid,
}

/// Row-by-row restricted multi-reference warp that never materializes a
/// full affinity matrix. Equivalent to `stacked_affinity` followed by
/// `restrict` and `warp_restricted`, except that the softmax is evaluated
/// over the surviving entries only. `masks`, when given, holds one mask
/// per reference; `None` leaves every row unrestricted.
pub fn warp_masked(
    target: &NormalizedGrid,
    refs: &[WarpReference<'_>],
    masks: Option<&[TrackMask]>,
    temperature: f64,
    fallback_confidence: f64,
) -> Result<WarpResult> {
    check_temperature(temperature)?;
    check_fallback_confidence(fallback_confidence)?;
    if refs.is_empty() {
        return Err(Error::InvalidParameter("warp needs at least one reference".into()));
    }
    let n = target.cells();
    for r in refs {
        target.check_compatible(r.features)?;
        ensure_dims(r.ab.cells() == n, || {
            format!("reference chrominance has {} cells, grid has {n}", r.ab.cells())
        })?;
    }
    if let Some(ms) = masks {
        ensure_dims(ms.len() == refs.len(), || format!("{} masks for {} references", ms.len(), refs.len()))?;
        for m in ms {
            ensure_dims(m.n_target() == n && m.n_ref() == n, || {
                format!("mask is {}x{}, grid has {n} cells", m.n_target(), m.n_ref())
            })?;
        }
    }
    let rows: Vec<([f64; 2], f64, bool)> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |buf: &mut Vec<(usize, usize, f64)>, i| {
            buf.clear();
            let restricted = masks.is_some_and(|ms| ms.iter().any(|m| !m.row_is_empty(i)));
            for (r, reference) in refs.iter().enumerate() {
                match masks {
                    Some(ms) if restricted => {
                        buf.extend(ms[r].row_iter(i).map(|j| (r, j, target.cosine(i, reference.features, j))))
                    }
                    _ => buf.extend((0..n).map(|j| (r, j, target.cosine(i, reference.features, j)))),
                }
            }
            let mut w: Vec<f64> = buf.iter().map(|e| e.2).collect();
            softmax_segments(&mut [&mut w], temperature);
            let (mut wa, mut wb, mut best) = (0.0, 0.0, 0.0f64);
            for (&(r, j, _), &wt) in buf.iter().zip(&w) {
                let [a, b] = refs[r].ab.ab[j];
                wa += wt * a;
                wb += wt * b;
                best = best.max(wt);
            }
            let fallback = masks.is_some() && !restricted;
            let conf = if fallback { best * fallback_confidence } else { best };
            ([wa, wb], conf.min(1.0), fallback)
        })
        .collect();
    let mut ab = Vec::with_capacity(n);
    let mut confidence = Vec::with_capacity(n);
    let mut fallback = Vec::with_capacity(n);
    for (v, c, f) in rows {
        ab.push(v);
        confidence.push(c);
        fallback.push(f);
    }
    Ok(WarpResult {
        ab_grid: ChromaGrid {
            grid_h: target.grid_h(),
            grid_w: target.grid_w(),
            ab,
        },
        confidence,
        fallback,
        ab_full: None,
    })
}

/// Sample positions and weights along one axis for grid-to-pixel
/// upsampling with cell centers at `(k + 0.5) * stride`.
fn axis_taps(pixels: usize, cells: usize, stride: usize) -> Vec<(usize, usize, f64)> {
    (0..pixels)
        .map(|x| {
            let u = ((x as f64 + 0.5) / stride as f64 - 0.5).clamp(0.0, (cells - 1) as f64);
            let k0 = u.floor() as usize;
            let k1 = (k0 + 1).min(cells - 1);
            (k0, k1, u - k0 as f64)
        })
        .collect()
}

/// Bilinear upsampling of a grid-resolution field to `width x height`.
pub fn upsample_field(values: &[f64], grid_h: usize, grid_w: usize, width: usize, height: usize) -> Result<Vec<f32>> {
    ensure_dims(values.len() == grid_h * grid_w && grid_h > 0 && grid_w > 0, || {
        format!("{} values for a {grid_h}x{grid_w} grid", values.len())
    })?;
    let stride = width.div_ceil(grid_w);
    ensure_dims(stride > 0 && grid_dims(width, height, stride) == (grid_h, grid_w), || {
        format!("a {grid_h}x{grid_w} grid does not tile {width}x{height}")
    })?;
    let xs = axis_taps(width, grid_w, stride);
    let ys = axis_taps(height, grid_h, stride);
    let mut out = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = values[y0 * grid_w + x0] * (1.0 - fx) + values[y0 * grid_w + x1] * fx;
            let bottom = values[y1 * grid_w + x0] * (1.0 - fx) + values[y1 * grid_w + x1] * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    Ok(out)
}

pub fn upsample_chroma(grid: &ChromaGrid, width: usize, height: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    let a: Vec<f64> = grid.ab.iter().map(|v| v[0]).collect();
    let b: Vec<f64> = grid.ab.iter().map(|v| v[1]).collect();
    Ok((
        upsample_field(&a, grid.grid_h, grid.grid_w, width, height)?,
        upsample_field(&b, grid.grid_h, grid.grid_w, width, height)?,
    ))
}

/// Bilinear upsampling of warped ab and confidence to pixel resolution.
pub fn upsample_ab(warp: &WarpResult, width: usize, height: usize) -> Result<FullChroma> {
    let g = &warp.ab_grid;
    let (a, b) = upsample_chroma(g, width, height)?;
    let confidence = upsample_field(&warp.confidence, g.grid_h, g.grid_w, width, height)?;
    Ok(FullChroma {
        width,
        height,
        a,
        b,
        confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::{restrict, stacked_affinity, correlation, StackedCorrelation};
    use crate::features::FeatureGrid;
    use crate::mask::MaskOrigin;

    fn refs(n: usize) -> ChromaGrid {
        ChromaGrid::new(1, n, (0..n).map(|j| [j as f64 * 3.0 - 4.0, 10.0 - j as f64]).collect()).unwrap()
    }

    #[test]
    fn one_hot_row_copies_reference() {
        let aff = AffinityMatrix::from_values(2, 3, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let out = warp_single(&aff, &refs(3)).unwrap();
        assert_eq!(out.ab_grid.get(0), refs(3).get(2));
        assert_eq!(out.ab_grid.get(1), refs(3).get(0));
        assert_eq!(out.confidence, vec![1.0, 1.0]);
    }

    #[test]
    fn uniform_row_averages() {
        let aff = AffinityMatrix::from_values(1, 3, vec![1.0 / 3.0; 3]).unwrap();
        let out = warp_single(&aff, &refs(3)).unwrap();
        let [a, b] = out.ab_grid.get(0);
        assert!((a - (-4.0 + -1.0 + 2.0) / 3.0).abs() < 1e-12);
        assert!((b - 9.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_reference_rejected() {
        let aff = AffinityMatrix::from_values(1, 3, vec![1.0 / 3.0; 3]).unwrap();
        assert!(matches!(warp_single(&aff, &refs(4)), Err(Error::Dimension(_))));
        assert!(matches!(warp_multi(&aff, &[refs(3), refs(3)]), Err(Error::Dimension(_))));
    }

    #[test]
    fn duplicated_reference_matches_single() {
        let single = AffinityMatrix::from_values(1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        let double = AffinityMatrix::stacked_from_values(2, 1, 3, vec![0.1, 0.25, 0.15, 0.1, 0.25, 0.15]).unwrap();
        let a = warp_single(&single, &refs(3)).unwrap();
        let b = warp_multi(&double, &[refs(3), refs(3)]).unwrap();
        for (x, y) in a.ab_grid.values().iter().zip(b.ab_grid.values()) {
            assert!((x[0] - y[0]).abs() < 1e-9 && (x[1] - y[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn stride_one_upsampling_is_identity() {
        let g = ChromaGrid::new(2, 3, (0..6).map(|k| [k as f64, -(k as f64)]).collect()).unwrap();
        let (a, b) = upsample_chroma(&g, 3, 2).unwrap();
        assert_eq!(a, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(b, vec![0.0, -1.0, -2.0, -3.0, -4.0, -5.0]);
    }

    #[test]
    fn constant_grid_upsamples_to_constant() {
        let g = ChromaGrid::constant(3, 4, [12.5, -7.0]);
        let (a, b) = upsample_chroma(&g, 16, 11).unwrap();
        assert!(a.iter().all(|&v| v == 12.5) && b.iter().all(|&v| v == -7.0));
    }

    #[test]
    fn two_by_two_doubling_matches_hand_values() {
        // Cell centers fall between pixels 0|1 and 2|3; inner pixels mix 3:1.
        let v = [0.0, 4.0, 8.0, 12.0];
        let out = upsample_field(&v, 2, 2, 4, 4).unwrap();
        let expect_row = |top: f64, bottom: f64, fy: f64| -> Vec<f32> {
            let l = top * (1.0 - fy) + bottom * fy;
            vec![l, l + 1.0, l + 3.0, l + 4.0].into_iter().map(|x| x as f32).collect()
        };
        let mut expect = Vec::new();
        for fy in [0.0, 0.25, 0.75, 1.0] {
            expect.extend(expect_row(0.0, 8.0, fy));
        }
        assert_eq!(out, expect);
    }

    #[test]
    fn fused_warp_matches_composition() {
        let mk = |seed: u32| {
            let data: Vec<f32> = (0..9 * 3).map(|k| (((k as u32).wrapping_mul(2654435761) ^ seed) % 97) as f32 / 10.0).collect();
            FeatureGrid::new(3, 3, 3, 1, data).unwrap()
        };
        let (t, r0, r1) = (mk(1), mk(2), mk(3));
        let ab0 = ChromaGrid::new(3, 3, (0..9).map(|k| [k as f64, 1.0]).collect()).unwrap();
        let ab1 = ChromaGrid::new(3, 3, (0..9).map(|k| [-(k as f64), 5.0]).collect()).unwrap();
        let m0 = TrackMask::from_fn(9, 9, MaskOrigin::Manual, |i, j| (i + j) % 3 == 0 && i != 4);
        let m1 = TrackMask::from_fn(9, 9, MaskOrigin::Manual, |i, j| j == 8 - i && i != 4);
        let stacked = StackedCorrelation::new(vec![correlation(&t, &r0).unwrap(), correlation(&t, &r1).unwrap()]).unwrap();
        let aff = stacked_affinity(&stacked, 0.5).unwrap();
        let restricted = restrict(&aff, &[m0.clone(), m1.clone()]).unwrap();
        let slow = warp_restricted(&restricted, &[ab0.clone(), ab1.clone()], 0.5).unwrap();
        let (nt, n0, n1) = (NormalizedGrid::new(&t), NormalizedGrid::new(&r0), NormalizedGrid::new(&r1));
        let refs = [
            WarpReference { features: &n0, ab: &ab0 },
            WarpReference { features: &n1, ab: &ab1 },
        ];
        let fast = warp_masked(&nt, &refs, Some(&[m0, m1]), 0.5, 0.5).unwrap();
        assert_eq!(fast.fallback, slow.fallback);
        assert!(fast.fallback[4]);
        for i in 0..9 {
            let (x, y) = (fast.ab_grid.get(i), slow.ab_grid.get(i));
            assert!((x[0] - y[0]).abs() < 1e-9 && (x[1] - y[1]).abs() < 1e-9, "cell {i}");
            assert!((fast.confidence[i] - slow.confidence[i]).abs() < 1e-9);
        }
    }
}
