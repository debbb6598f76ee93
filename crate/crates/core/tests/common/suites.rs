//! Randomized comparisons of the library against the oracles. Each runner
//! returns the number of cases checked and the worst deviation found.

use std::sync::Arc;

use chromaflow::correspondence::{
    affinity, correlation, restrict, stacked_affinity, NormalizedGrid, StackedCorrelation,
};
use chromaflow::dense_tracking::{build_dense_mask, DenseParams, DenseTracker};
use chromaflow::features::FeatureGrid;
use chromaflow::mask::{MaskOrigin, TrackMask};
use chromaflow::warp::{warp_masked, warp_restricted, ChromaGrid, WarpReference};
use rand::Rng;

use super::{random_ab, random_grid, rng};

#[derive(Debug, Clone, Copy)]
pub struct SuiteResult {
    pub cases: usize,
    pub max_error: f64,
}

impl SuiteResult {
    fn new() -> Self {
        Self { cases: 0, max_error: 0.0 }
    }

    fn record(&mut self, err: f64) {
        self.max_error = self.max_error.max(err);
    }
}

fn dims(r: &mut impl Rng) -> (usize, usize, usize) {
    (r.gen_range(1..=8), r.gen_range(1..=8), r.gen_range(1..=12))
}

fn temperature(r: &mut impl Rng) -> f64 {
    [1.0, 0.5, 0.2, 0.1][r.gen_range(0..4)]
}

pub fn correlation_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut r = rng(seed);
    let mut res = SuiteResult::new();
    for _ in 0..cases {
        let (h, w, c) = dims(&mut r);
        let (t, f) = (random_grid(&mut r, h, w, c), random_grid(&mut r, h, w, c));
        let got = correlation(&t, &f).unwrap();
        let want = super::correlation(&t, &f);
        for i in 0..t.cells() {
            for j in 0..f.cells() {
                res.record((got.get(i, j) - want[i][j]).abs());
            }
        }
        res.cases += 1;
    }
    res
}

pub fn affinity_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut r = rng(seed);
    let mut res = SuiteResult::new();
    for _ in 0..cases {
        let (h, w, c) = dims(&mut r);
        let (t, f) = (random_grid(&mut r, h, w, c), random_grid(&mut r, h, w, c));
        let temp = temperature(&mut r);
        let got = affinity(&correlation(&t, &f).unwrap(), temp).unwrap();
        let want = super::stacked_affinity(&[super::correlation(&t, &f)], temp);
        for i in 0..t.cells() {
            for j in 0..f.cells() {
                res.record((got.get(0, i, j) - want[0][i][j]).abs());
            }
        }
        res.cases += 1;
    }
    res
}

fn random_mask(r: &mut impl Rng, n: usize, density: f64, empty_rows: f64) -> (TrackMask, Vec<Vec<bool>>) {
    let dense: Vec<Vec<bool>> = (0..n)
        .map(|_| {
            let empty = r.gen_bool(empty_rows);
            (0..n).map(|_| !empty && r.gen_bool(density)).collect()
        })
        .collect();
    let mask = TrackMask::from_fn(n, n, MaskOrigin::Manual, |i, j| dense[i][j]);
    (mask, dense)
}

/// Restricted multi-reference warp through both the matrix path and the
/// fused row-wise path; `max_refs` is 1 for the single-reference suite.
fn warp_suite(cases: usize, seed: u64, min_refs: usize, max_refs: usize) -> SuiteResult {
    let mut r = rng(seed);
    let mut res = SuiteResult::new();
    for _ in 0..cases {
        let (h, w, c) = dims(&mut r);
        let n = h * w;
        let k = r.gen_range(min_refs..=max_refs);
        let temp = temperature(&mut r);
        let target = random_grid(&mut r, h, w, c);
        let refs: Vec<FeatureGrid> = (0..k).map(|_| random_grid(&mut r, h, w, c)).collect();
        let abs: Vec<Vec<[f64; 2]>> = (0..k).map(|_| random_ab(&mut r, n)).collect();
        let density = r.gen_range(0.05..0.6);
        let masks: Vec<(TrackMask, Vec<Vec<bool>>)> = (0..k).map(|_| random_mask(&mut r, n, density, 0.15)).collect();

        let corrs: Vec<Vec<Vec<f64>>> = refs.iter().map(|g| super::correlation(&target, g)).collect();
        let oracle_aff = super::stacked_affinity(&corrs, temp);
        let dense_masks: Vec<Vec<Vec<bool>>> = masks.iter().map(|m| m.1.clone()).collect();
        let (oracle_restricted, oracle_fallback) = super::restrict(&oracle_aff, &dense_masks);
        let want = super::warp(&oracle_restricted, &abs);

        let stacked = StackedCorrelation::new(refs.iter().map(|g| correlation(&target, g).unwrap()).collect()).unwrap();
        let aff = stacked_affinity(&stacked, temp).unwrap();
        let track: Vec<TrackMask> = masks.iter().map(|m| m.0.clone()).collect();
        let restricted = restrict(&aff, &track).unwrap();
        let grids: Vec<ChromaGrid> = abs.iter().map(|a| ChromaGrid::new(h, w, a.clone()).unwrap()).collect();
        let slow = warp_restricted(&restricted, &grids, 0.5).unwrap();

        let nt = NormalizedGrid::new(&target);
        let nrefs: Vec<NormalizedGrid> = refs.iter().map(NormalizedGrid::new).collect();
        let wrefs: Vec<WarpReference<'_>> = nrefs
            .iter()
            .zip(&grids)
            .map(|(features, ab)| WarpReference { features, ab })
            .collect();
        let fast = warp_masked(&nt, &wrefs, Some(&track), temp, 0.5).unwrap();

        for i in 0..n {
            for out in [&slow, &fast] {
                let got = out.ab_grid.get(i);
                res.record((got[0] - want[i][0]).abs().max((got[1] - want[i][1]).abs()));
                if out.fallback[i] != oracle_fallback[i] {
                    res.record(f64::INFINITY);
                }
            }
            for (rr, layer) in oracle_restricted.iter().enumerate() {
                for (j, &v) in layer[i].iter().enumerate() {
                    res.record((restricted.affinity.get(rr, i, j) - v).abs());
                }
            }
        }
        res.cases += 1;
    }
    res
}

pub fn restricted_warp_suite(cases: usize, seed: u64) -> SuiteResult {
    warp_suite(cases, seed, 1, 1)
}

pub fn stacked_warp_suite(cases: usize, seed: u64) -> SuiteResult {
    warp_suite(cases, seed, 2, 2)
}

/// Dense propagation; `max_error` counts mismatching mask bits.
pub fn dense_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut r = rng(seed);
    let mut res = SuiteResult::new();
    for _ in 0..cases {
        let (h, w) = (r.gen_range(2..=8), r.gen_range(2..=8));
        let c = r.gen_range(2..=10);
        let frames = r.gen_range(2..=5);
        let radius = r.gen_range(1..=4);
        let threshold = [0.2, 0.1, 0.3, 0.05][r.gen_range(0..4)];
        let temp = temperature(&mut r);
        let grids: Vec<FeatureGrid> = (0..frames).map(|_| random_grid(&mut r, h, w, c)).collect();
        let params = DenseParams { radius, threshold, temperature: temp };

        let want = super::dense_mask(&grids, radius, threshold, temp);
        let indexed: Vec<(usize, &FeatureGrid)> = grids.iter().enumerate().map(|(k, g)| (k + 1, g)).collect();
        let got = build_dense_mask(&indexed, &params).unwrap();
        // Same relation through the cached tracker, both directions.
        let normalized = Arc::new(grids.iter().map(NormalizedGrid::new).collect::<Vec<_>>());
        let tracker = DenseTracker::new(normalized, params).unwrap();
        let cached = tracker.mask(1, frames).unwrap();
        let mut reversed_grids = grids.clone();
        reversed_grids.reverse();
        let want_back = super::dense_mask(&reversed_grids, radius, threshold, temp);
        let back = tracker.mask(frames, 1).unwrap();

        let n = h * w;
        let mut wrong = 0usize;
        for i in 0..n {
            for j in 0..n {
                wrong += usize::from(got.get(i, j) != want[i][j]);
                wrong += usize::from(cached.get(i, j) != want[i][j]);
                wrong += usize::from(back.get(i, j) != want_back[i][j]);
            }
        }
        res.record(wrong as f64);
        res.cases += 1;
    }
    res
}

/// Worst deviation of a row (or joint stacked row) sum from 1 across plain,
/// stacked, restricted and windowed affinities.
pub fn normalization_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut r = rng(seed);
    let mut res = SuiteResult::new();
    for case in 0..cases {
        let (h, w, c) = dims(&mut r);
        let n = h * w;
        let temp = temperature(&mut r);
        let target = random_grid(&mut r, h, w, c);
        match case % 4 {
            0 => {
                let f = random_grid(&mut r, h, w, c);
                let a = affinity(&correlation(&target, &f).unwrap(), temp).unwrap();
                (0..n).for_each(|i| res.record((a.row_sum(i) - 1.0).abs()));
            }
            1 => {
                let k = r.gen_range(2..=3);
                let mats = (0..k)
                    .map(|_| correlation(&target, &random_grid(&mut r, h, w, c)).unwrap())
                    .collect();
                let a = stacked_affinity(&StackedCorrelation::new(mats).unwrap(), temp).unwrap();
                (0..n).for_each(|i| res.record((a.row_sum(i) - 1.0).abs()));
            }
            2 => {
                let k = r.gen_range(1..=2);
                let mats = (0..k)
                    .map(|_| correlation(&target, &random_grid(&mut r, h, w, c)).unwrap())
                    .collect();
                let a = stacked_affinity(&StackedCorrelation::new(mats).unwrap(), temp).unwrap();
                let density = r.gen_range(0.02..0.5);
                let masks: Vec<TrackMask> = (0..k).map(|_| random_mask(&mut r, n, density, 0.2).0).collect();
                let ra = restrict(&a, &masks).unwrap();
                (0..n).for_each(|i| res.record((ra.affinity.row_sum(i) - 1.0).abs()));
            }
            _ => {
                let f = random_grid(&mut r, h, w, c);
                let radius = r.gen_range(1..=5);
                let wa = chromaflow::correspondence::windowed_affinity(&target, &f, radius, temp).unwrap();
                for i in 0..n {
                    res.record((wa.row(i).map(|(_, v)| v).sum::<f64>() - 1.0).abs());
                }
            }
        }
        res.cases += 1;
    }
    res
}
