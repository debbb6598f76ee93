//! Straightforward reference implementations used as test oracles, and
//! random instance generators.
#![allow(dead_code, clippy::needless_range_loop)]

use chromaflow::features::FeatureGrid;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureGrid {
    let data = (0..h * w * c).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
    FeatureGrid::new(h, w, c, 1, data).unwrap()
}

pub fn random_ab(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)])
        .collect()
}

/// Dense `n_target x n_ref` mean-centered cosine similarities.
pub fn correlation(t: &FeatureGrid, r: &FeatureGrid) -> Vec<Vec<f64>> {
    let center = |g: &FeatureGrid| -> Vec<Vec<f64>> {
        let c = g.channels();
        let n = g.cells();
        let mut mean = vec![0.0; c];
        for i in 0..n {
            for k in 0..c {
                mean[k] += g.cell(i)[k] as f64 / n as f64;
            }
        }
        (0..n)
            .map(|i| (0..c).map(|k| g.cell(i)[k] as f64 - mean[k]).collect())
            .collect()
    };
    let (a, b) = (center(t), center(r));
    let norm = |v: &Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    a.iter()
        .map(|u| {
            b.iter()
                .map(|v| {
                    let (nu, nv) = (norm(u), norm(v));
                    if nu <= 1e-12 || nv <= 1e-12 {
                        0.0
                    } else {
                        u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>() / (nu * nv)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn softmax(row: &[f64], temperature: f64) -> Vec<f64> {
    let e: Vec<f64> = row.iter().map(|x| (x / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `[reference][target][cell]` weights, softmax per target row jointly over
/// every reference.
pub fn stacked_affinity(corrs: &[Vec<Vec<f64>>], temperature: f64) -> Vec<Vec<Vec<f64>>> {
    let nt = corrs[0].len();
    let nr = corrs[0][0].len();
    let mut out = vec![vec![vec![0.0; nr]; nt]; corrs.len()];
    for i in 0..nt {
        let joint: Vec<f64> = corrs.iter().flat_map(|c| c[i].iter().copied()).collect();
        let w = softmax(&joint, temperature);
        for (r, layer) in out.iter_mut().enumerate() {
            layer[i].copy_from_slice(&w[r * nr..(r + 1) * nr]);
        }
    }
    out
}

/// Masked and renormalized weights plus fallback flags.
pub fn restrict(aff: &[Vec<Vec<f64>>], masks: &[Vec<Vec<bool>>]) -> (Vec<Vec<Vec<f64>>>, Vec<bool>) {
    let mut out = aff.to_vec();
    let nt = aff[0].len();
    let mut fallback = vec![false; nt];
    for i in 0..nt {
        let any = masks.iter().any(|m| m[i].iter().any(|&b| b));
        if !any {
            fallback[i] = true;
            continue;
        }
        let mut total = 0.0;
        for (r, m) in masks.iter().enumerate() {
            for (j, &keep) in m[i].iter().enumerate() {
                if !keep {
                    out[r][i][j] = 0.0;
                }
                total += out[r][i][j];
            }
        }
        for layer in out.iter_mut() {
            for v in layer[i].iter_mut() {
                *v /= total;
            }
        }
    }
    (out, fallback)
}

pub fn warp(aff: &[Vec<Vec<f64>>], refs: &[Vec<[f64; 2]>]) -> Vec<[f64; 2]> {
    let nt = aff[0].len();
    (0..nt)
        .map(|i| {
            let mut acc = [0.0, 0.0];
            for (r, layer) in aff.iter().enumerate() {
                for (j, &w) in layer[i].iter().enumerate() {
                    acc[0] += w * refs[r][j][0];
                    acc[1] += w * refs[r][j][1];
                }
            }
            acc
        })
        .collect()
}

/// Window-restricted affinity between consecutive grids as a dense matrix.
pub fn windowed(cur: &FeatureGrid, next: &FeatureGrid, radius: usize, temperature: f64) -> Vec<Vec<f64>> {
    let corr = correlation(cur, next);
    let w = cur.grid_w();
    let n = cur.cells();
    (0..n)
        .map(|i| {
            let inside = |j: usize| {
                let (ri, ci) = ((i / w) as isize, (i % w) as isize);
                let (rj, cj) = ((j / w) as isize, (j % w) as isize);
                (ri - rj).abs() < radius as isize && (ci - cj).abs() < radius as isize
            };
            let js: Vec<usize> = (0..n).filter(|&j| inside(j)).collect();
            let vals: Vec<f64> = js.iter().map(|&j| corr[i][j]).collect();
            let sm = softmax(&vals, temperature);
            let mut row = vec![0.0; n];
            for (k, &j) in js.iter().enumerate() {
                row[j] = sm[k];
            }
            row
        })
        .collect()
}

/// Per-origin binarized propagation through `grids[0] -> grids[last]`.
pub fn dense_mask(grids: &[FeatureGrid], radius: usize, threshold: f64, temperature: f64) -> Vec<Vec<bool>> {
    let n = grids[0].cells();
    let steps: Vec<Vec<Vec<f64>>> = grids
        .windows(2)
        .map(|p| windowed(&p[0], &p[1], radius, temperature))
        .collect();
    (0..n)
        .map(|origin| {
            let mut cand = vec![false; n];
            cand[origin] = true;
            for a in &steps {
                let mut mass = vec![0.0; n];
                for i in 0..n {
                    if cand[i] {
                        for j in 0..n {
                            mass[j] += a[i][j];
                        }
                    }
                }
                let mut next: Vec<bool> = mass.iter().map(|&m| m > threshold).collect();
                if !next.iter().any(|&b| b) {
                    let mut best = 0;
                    for j in 1..n {
                        if mass[j] > mass[best] {
                            best = j;
                        }
                    }
                    next[best] = true;
                }
                cand = next;
            }
            cand
        })
        .collect()
}
pub mod claims;
pub mod suites;
