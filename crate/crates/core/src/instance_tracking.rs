//! Instance restriction masks from externally supplied instance label maps.
//!
//! Per-frame instance ids are made consistent over time by greedy IoU
//! matching between adjacent frames. A target cell labelled with object `k`
//! may then only draw color from reference cells where object `k` occupies
//! at least `occupancy_threshold` of the cell; background cells may only
//! draw from reference background.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use image::imageops;

use crate::error::{ensure_dims, Error, Result};
use crate::imaging::{list_frames, open_image, FramePattern};
use crate::mask::{MaskOrigin, TrackMask};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;
pub const DEFAULT_OCCUPANCY_THRESHOLD: f64 = 0.5;

static NEXT_ID_SPACE: AtomicU64 = AtomicU64::new(1);

/// Per-cell instance ids at grid resolution; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLabelMap {
    grid_h: usize,
    grid_w: usize,
    labels: Vec<u32>,
    /// Fraction of each cell covered by each object, when known.
    occupancy: Option<Vec<Vec<(u32, f32)>>>,
    id_space: Option<u64>,
}

impl InstanceLabelMap {
    pub fn new(grid_h: usize, grid_w: usize, labels: Vec<u32>) -> Result<Self> {
        ensure_dims(labels.len() == grid_h * grid_w, || {
            format!("{} labels for a {grid_w}x{grid_h} grid", labels.len())
        })?;
        Ok(Self {
            grid_h,
            grid_w,
            labels,
            occupancy: None,
            id_space: None,
        })
    }

    /// Attaches soft occupancy: per cell, `(object id, covered fraction)`.
    pub fn with_occupancy(mut self, occupancy: Vec<Vec<(u32, f32)>>) -> Result<Self> {
        ensure_dims(occupancy.len() == self.labels.len(), || {
            format!("{} occupancy cells for {} labels", occupancy.len(), self.labels.len())
        })?;
        for cell in &occupancy {
            if cell.iter().any(|&(id, f)| id == 0 || !(0.0..=1.0).contains(&f)) {
                return Err(Error::InvalidInput(
                    "occupancy entries need a non-zero id and a fraction in [0, 1]".into(),
                ));
            }
            if cell.iter().map(|&(_, f)| f as f64).sum::<f64>() > 1.0 + 1e-6 {
                return Err(Error::InvalidInput("cell occupancy sums above 1".into()));
            }
        }
        self.occupancy = Some(occupancy);
        Ok(self)
    }

    /// Downsamples a pixel label image to the grid: majority vote per cell
    /// (ties to the lowest id) and occupancy as the covered pixel fraction.
    pub fn from_pixel_labels(width: usize, height: usize, pixels: &[u16], stride: usize) -> Result<Self> {
        ensure_dims(pixels.len() == width * height, || {
            format!("{} label pixels for a {width}x{height} image", pixels.len())
        })?;
        if stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        let (gh, gw) = (height.div_ceil(stride), width.div_ceil(stride));
        let mut labels = Vec::with_capacity(gh * gw);
        let mut occupancy = Vec::with_capacity(gh * gw);
        for gy in 0..gh {
            for gx in 0..gw {
                let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
                let mut total = 0usize;
                for y in gy * stride..((gy + 1) * stride).min(height) {
                    for x in gx * stride..((gx + 1) * stride).min(width) {
                        *counts.entry(pixels[y * width + x] as u32).or_default() += 1;
                        total += 1;
                    }
                }
                // BTreeMap iterates ids ascending, so `>` keeps the lowest id on ties.
                let mut best = (0u32, 0usize);
                for (&id, &c) in &counts {
                    if c > best.1 {
                        best = (id, c);
                    }
                }
                labels.push(best.0);
                occupancy.push(
                    counts
                        .iter()
                        .filter(|(&id, _)| id != 0)
                        .map(|(&id, &c)| (id, c as f32 / total as f32))
                        .collect(),
                );
            }
        }
        Self::new(gh, gw, labels)?.with_occupancy(occupancy)
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn id_space(&self) -> Option<u64> {
        self.id_space
    }

    /// Declares that ids in this map belong to the given id space.
    pub fn with_id_space(mut self, tag: u64) -> Self {
        self.id_space = Some(tag);
        self
    }

    /// Occupancy of object `id` in cell `j`.
    pub fn occupancy_of(&self, id: u32, j: usize) -> f64 {
        match &self.occupancy {
            Some(occ) => occ[j]
                .iter()
                .find(|&&(k, _)| k == id)
                .map_or(0.0, |&(_, f)| f as f64),
            None => f64::from(u8::from(self.labels[j] == id)),
        }
    }

    fn object_ids(&self) -> BTreeSet<u32> {
        let mut ids: BTreeSet<u32> = self.labels.iter().copied().filter(|&k| k != 0).collect();
        if let Some(occ) = &self.occupancy {
            ids.extend(occ.iter().flatten().map(|&(k, _)| k));
        }
        ids
    }

    fn renamed(&self, map: &BTreeMap<u32, u32>, tag: u64) -> Self {
        let rename = |k: u32| if k == 0 { 0 } else { map[&k] };
        Self {
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            labels: self.labels.iter().map(|&k| rename(k)).collect(),
            occupancy: self.occupancy.as_ref().map(|occ| {
                occ.iter()
                    .map(|cell| cell.iter().map(|&(k, f)| (rename(k), f)).collect())
                    .collect()
            }),
            id_space: Some(tag),
        }
    }
}

fn iou_pairs(prev: &InstanceLabelMap, cur: &InstanceLabelMap) -> Vec<(f64, u32, u32)> {
    let mut area_prev: BTreeMap<u32, usize> = BTreeMap::new();
    let mut area_cur: BTreeMap<u32, usize> = BTreeMap::new();
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&p, &c) in prev.labels.iter().zip(&cur.labels) {
        if p != 0 {
            *area_prev.entry(p).or_default() += 1;
        }
        if c != 0 {
            *area_cur.entry(c).or_default() += 1;
        }
        if p != 0 && c != 0 {
            *inter.entry((p, c)).or_default() += 1;
        }
    }
    let mut pairs: Vec<(f64, u32, u32)> = inter
        .into_iter()
        .map(|((p, c), n)| {
            let union = area_prev[&p] + area_cur[&c] - n;
            (n as f64 / union as f64, p, c)
        })
        .collect();
    // Descending IoU; ties to lower earlier id, then lower later id.
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    pairs
}

/// Renames instance ids so the same object keeps one id across frames.
pub fn track_instances(maps: &[InstanceLabelMap], iou_threshold: f64) -> Result<Vec<InstanceLabelMap>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidInput("no label maps to track".into()))?;
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "IoU threshold must lie in (0, 1), got {iou_threshold}"
        )));
    }
    for m in maps {
        ensure_dims(m.grid_h == first.grid_h && m.grid_w == first.grid_w, || {
            format!(
                "label map is {}x{}, first is {}x{}",
                m.grid_w, m.grid_h, first.grid_w, first.grid_h
            )
        })?;
    }
    let tag = NEXT_ID_SPACE.fetch_add(1, Ordering::Relaxed);

    let first_ids = first.object_ids();
    let mut next_id = first_ids.iter().max().map_or(1, |m| m + 1);
    let identity: BTreeMap<u32, u32> = first_ids.iter().map(|&k| (k, k)).collect();
    let mut out = vec![first.renamed(&identity, tag)];

    for cur in &maps[1..] {
        let prev = out.last().unwrap();
        let mut assigned: BTreeMap<u32, u32> = BTreeMap::new();
        let mut used_prev = BTreeSet::new();
        for (iou, p, c) in iou_pairs(prev, cur) {
            if iou < iou_threshold {
                break;
            }
            if used_prev.contains(&p) || assigned.contains_key(&c) {
                continue;
            }
            used_prev.insert(p);
            assigned.insert(c, p);
        }
        for c in cur.object_ids() {
            assigned.entry(c).or_insert_with(|| {
                let id = next_id;
                next_id += 1;
                id
            });
        }
        out.push(cur.renamed(&assigned, tag));
    }
    Ok(out)
}

/// Instance restriction between a target and a reference frame.
pub fn build_instance_mask(
    target: &InstanceLabelMap,
    reference: &InstanceLabelMap,
    occupancy_threshold: f64,
) -> Result<TrackMask> {
    ensure_dims(
        target.grid_h == reference.grid_h && target.grid_w == reference.grid_w,
        || "target and reference label maps differ in size".into(),
    )?;
    match (target.id_space, reference.id_space) {
        (Some(a), Some(b)) if a == b => {}
        _ => {
            return Err(Error::InvalidInput(
                "label maps do not share an id space; run track_instances over the sequence first".into(),
            ))
        }
    }
    let n = target.labels.len();
    let mut mask = TrackMask::empty(n, n, MaskOrigin::Instance);
    let mut rows: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for i in 0..n {
        let k = target.labels[i];
        let words = rows.entry(k).or_insert_with(|| {
            let mut scratch = TrackMask::empty(1, n, MaskOrigin::Instance);
            for j in 0..n {
                let allowed = if k == 0 {
                    reference.labels[j] == 0
                } else {
                    reference.occupancy_of(k, j) >= occupancy_threshold
                };
                if allowed {
                    scratch.set(0, j, true);
                }
            }
            scratch.row_words(0).to_vec()
        });
        mask.copy_row_from(i, words);
    }
    Ok(mask)
}

/// Loads 16-bit instance label PNGs and downsamples them to the grid.
pub fn load_label_maps(
    dir: &Path,
    pattern: &FramePattern,
    stride: usize,
    resize: Option<(u32, u32)>,
) -> Result<Vec<InstanceLabelMap>> {
    list_frames(dir, pattern)?
        .into_iter()
        .map(|(_, path)| {
            let mut img = open_image(&path)?.to_luma16();
            if let Some((w, h)) = resize.filter(|&d| d != img.dimensions()) {
                img = imageops::resize(&img, w, h, imageops::FilterType::Nearest);
            }
            InstanceLabelMap::from_pixel_labels(img.width() as usize, img.height() as usize, img.as_raw(), stride)
        })
        .collect()
}
