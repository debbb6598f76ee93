//! End-to-end experiments on the generated fixtures shared by the pipeline
//! and acceptance tests.

use std::sync::Arc;

use chromaflow::config::{MaskMode, PipelineConfig};
use chromaflow::correspondence::{windowed_affinity, NormalizedGrid};
use chromaflow::fixture::FIXTURE_CELL;
use chromaflow::instance_tracking::InstanceLabelMap;
use chromaflow::mask::TrackMask;
use chromaflow::pipeline::{
    colorize, colorize_with_masks, generate_fixture, sequence_features, ColorReference, Colorization, Fixture,
    FixtureSpec, MaskBuilder,
};
use chromaflow::warp::ChromaGrid;
use rand::Rng;

use super::rng;

pub fn two_objects() -> Fixture {
    generate_fixture(&FixtureSpec::named("two-objects").unwrap()).unwrap()
}

pub fn label_maps(f: &Fixture) -> Vec<InstanceLabelMap> {
    f.labels
        .iter()
        .map(|l| InstanceLabelMap::from_pixel_labels(f.spec.width, f.spec.height, l, FIXTURE_CELL).unwrap())
        .collect()
}

pub fn first_reference(f: &Fixture) -> Vec<ColorReference> {
    vec![ColorReference { index: 1, frame: f.color.frames()[0].clone() }]
}

pub fn truth_grids(f: &Fixture) -> Vec<ChromaGrid> {
    f.color
        .frames()
        .iter()
        .map(|fr| ChromaGrid::from_frame(fr, FIXTURE_CELL).unwrap())
        .collect()
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectError {
    pub within: usize,
    pub total: usize,
    pub mean: f64,
}

impl ObjectError {
    pub fn fraction(&self) -> f64 {
        self.within as f64 / self.total as f64
    }
}

/// ab error over grid cells labeled as an object, `within` counting cells
/// with error below `tol`.
pub fn object_cell_error(f: &Fixture, grids: &[ChromaGrid], tol: f64) -> ObjectError {
    let maps = label_maps(f);
    let truth = truth_grids(f);
    let (mut within, mut total, mut sum) = (0, 0, 0.0);
    for ((g, gt), m) in grids.iter().zip(&truth).zip(&maps) {
        for i in 0..g.cells() {
            if m.labels()[i] == 0 {
                continue;
            }
            let e = dist(g.get(i), gt.get(i));
            total += 1;
            sum += e;
            within += usize::from(e < tol);
        }
    }
    ObjectError { within, total, mean: sum / total as f64 }
}

/// Same statistic over object pixels of the full-resolution output.
pub fn object_pixel_error(f: &Fixture, out: &Colorization, tol: f64) -> ObjectError {
    let (mut within, mut total, mut sum) = (0, 0, 0.0);
    for ((pred, gt), lab) in out.sequence.frames().iter().zip(f.color.frames()).zip(&f.labels) {
        let (pa, pb) = pred.ab().unwrap();
        let (ga, gb) = gt.ab().unwrap();
        for p in 0..lab.len() {
            if lab[p] == 0 {
                continue;
            }
            let e = dist([pa[p] as f64, pb[p] as f64], [ga[p] as f64, gb[p] as f64]);
            total += 1;
            sum += e;
            within += usize::from(e < tol);
        }
    }
    ObjectError { within, total, mean: sum / total as f64 }
}

pub fn run_mode(f: &Fixture, mode: MaskMode) -> Colorization {
    let cfg = PipelineConfig { mode, ..Default::default() };
    let labels = label_maps(f);
    colorize(&f.gray, &first_reference(f), Some(&labels), &cfg, None).unwrap()
}

/// Moves a `fraction` of the set bits of `m` to uniformly random columns of
/// the same row.
pub fn corrupt_mask(m: &TrackMask, fraction: f64, seed: u64) -> TrackMask {
    let mut r = rng(seed);
    let mut out = m.clone();
    for i in 0..m.n_target() {
        for j in m.row_iter(i) {
            if r.gen_bool(fraction) {
                out.set(i, j, false);
                let k = r.gen_range(0..m.n_ref());
                out.set(i, k, true);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct Degradation {
    pub clean: f64,
    pub corrupted: f64,
}

impl Degradation {
    pub fn delta(&self) -> f64 {
        self.corrupted - self.clean
    }
}

/// Dense-mode colorization with clean and corrupted masks.
pub fn mask_corruption(f: &Fixture, fraction: f64, seed: u64) -> Degradation {
    let cfg = PipelineConfig { mode: MaskMode::Dense, ..Default::default() };
    let refs = first_reference(f);
    let features = sequence_features(&f.gray, cfg.stride, &cfg.scales, None).unwrap();
    let grids = Arc::new(features.iter().map(NormalizedGrid::new).collect::<Vec<_>>());
    let builder = MaskBuilder::new(&cfg, grids, vec![1], None).unwrap();
    let clean = colorize_with_masks(&f.gray, &refs, &features, &cfg, &|t| builder.masks(t), None).unwrap();
    let corrupt = |t: usize| {
        builder.masks(t).map(|ms| {
            ms.map(|v| v.iter().map(|m| corrupt_mask(m, fraction, seed ^ (t as u64) << 8)).collect())
        })
    };
    let bad = colorize_with_masks(&f.gray, &refs, &features, &cfg, &corrupt, None).unwrap();
    Degradation {
        clean: object_cell_error(f, &clean.refined, 2.0).mean,
        corrupted: object_cell_error(f, &bad.refined, 2.0).mean,
    }
}

/// Frame-chained propagation baseline: each cell copies the color of its
/// best match in the previous frame within the tracking window. When
/// `corrupt_at` is set, a `fraction` of that frame's cells get random colors
/// before propagation continues.
pub fn chained_propagation(f: &Fixture, corrupt_at: Option<usize>, fraction: f64, seed: u64) -> Vec<ChromaGrid> {
    let cfg = PipelineConfig::default();
    let features = sequence_features(&f.gray, cfg.stride, &cfg.scales, None).unwrap();
    let mut r = rng(seed);
    let first = truth_grids(f).swap_remove(0);
    let (gh, gw) = (first.grid_h(), first.grid_w());
    let mut out = vec![first];
    for t in 1..features.len() {
        let aff = windowed_affinity(&features[t], &features[t - 1], cfg.radius, cfg.temperature).unwrap();
        let prev = out.last().unwrap();
        let mut ab: Vec<[f64; 2]> = (0..gh * gw)
            .map(|i| {
                let mut best = (usize::MAX, f64::NEG_INFINITY);
                for (j, w) in aff.row(i) {
                    if w > best.1 {
                        best = (j, w);
                    }
                }
                prev.get(best.0)
            })
            .collect();
        if corrupt_at == Some(t + 1) {
            for v in ab.iter_mut() {
                if r.gen_bool(fraction) {
                    *v = [r.gen_range(-100.0..100.0), r.gen_range(-100.0..100.0)];
                }
            }
        }
        out.push(ChromaGrid::new(gh, gw, ab).unwrap());
    }
    out
}

pub fn propagation_corruption(f: &Fixture, fraction: f64, seed: u64) -> Degradation {
    Degradation {
        clean: object_cell_error(f, &chained_propagation(f, None, fraction, seed), 2.0).mean,
        corrupted: object_cell_error(f, &chained_propagation(f, Some(5), fraction, seed), 2.0).mean,
    }
}

pub const DEFAULTS_SNAPSHOT: &str = "\
stride = 4
scales = 2,4,8
temperature = 1
radius = 9
threshold = 0.2
iou-threshold = 0.3
occupancy-threshold = 0.5
mode = none
refiner = temporal-blend
blend-floor = 0.25
fallback-confidence = 0.5
features = builtin
resize = 384x216
";

pub fn perf_fixture() -> Fixture {
    let spec = FixtureSpec {
        width: 384,
        height: 216,
        ..FixtureSpec::named("translating-squares").unwrap()
    };
    generate_fixture(&spec).unwrap()
}

/// Dense-mode colorization of `f` from its first frame inside a pool of
/// `threads` workers.
pub fn timed_dense_run(f: &Fixture, threads: usize) -> (Colorization, std::time::Duration) {
    let cfg = PipelineConfig { mode: MaskMode::Dense, ..Default::default() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let t0 = std::time::Instant::now();
    let out = pool.install(|| colorize(&f.gray, &first_reference(f), None, &cfg, None)).unwrap();
    (out, t0.elapsed())
}

/// Peak resident set of this process in bytes, where the platform reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

pub fn bit_identical(a: &Colorization, b: &Colorization) -> bool {
    let grids = a.refined.iter().zip(&b.refined).all(|(x, y)| {
        x.values()
            .iter()
            .zip(y.values())
            .all(|(p, q)| p[0].to_bits() == q[0].to_bits() && p[1].to_bits() == q[1].to_bits())
    });
    let frames = a.sequence.frames().iter().zip(b.sequence.frames()).all(|(x, y)| {
        let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        let ((xa, xb), (ya, yb)) = (x.ab().unwrap(), y.ab().unwrap());
        bits(x.l()) == bits(y.l()) && bits(xa) == bits(ya) && bits(xb) == bits(yb)
    });
    a.refined.len() == b.refined.len() && grids && frames
}
