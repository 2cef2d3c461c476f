//! Seeded k-means with k-means++ initialisation.

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct Clustering {
    /// One centroid per row.
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index drawn with probability proportional to `weights`.
fn draw(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return 0;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if acc > target {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn nearest(row: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(row, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn single_run(data: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Clustering {
    let (n, d) = data.dim();
    let mut centroids = Array2::zeros((k, d));
    let first = draw(&vec![1.0; n], rng);
    centroids.row_mut(0).assign(&data.row(first));
    let mut dist: Vec<f64> = data.rows().into_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for c in 1..k {
        let pick = draw(&dist, rng);
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, r) in data.rows().into_iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(r, centroids.row(c)));
        }
    }
    let mut assignment = vec![usize::MAX; n];
    let mut inertia = f64::INFINITY;
    for _ in 0..300 {
        let nearest_all: Vec<(usize, f64)> =
            (0..n).into_par_iter().map(|i| nearest(data.row(i), &centroids)).collect();
        let changed = nearest_all.iter().zip(&assignment).any(|(a, b)| a.0 != *b);
        for (slot, a) in assignment.iter_mut().zip(&nearest_all) {
            *slot = a.0;
        }
        inertia = nearest_all.iter().map(|a| a.1).sum();
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            let mut row = sums.row_mut(c);
            row += &data.row(i);
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // re-seed an empty cluster at the worst-fitted point
                let (far, _) = nearest_all
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, a)| if a.1 > b.1 { (i, a.1) } else { b });
                centroids.row_mut(c).assign(&data.row(far));
            }
        }
    }
    Clustering { centroids, assignment, inertia }
}

/// Clusters the rows of `data` into `k` groups, keeping the best of
/// `restarts` independently seeded runs.
pub fn kmeans(data: ArrayView2<f64>, k: usize, seed: u64, restarts: usize) -> Result<Clustering> {
    let n = data.nrows();
    if k == 0 || n < k {
        return Err(Error::input(format!("cannot form {k} clusters from {n} points")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("k-means input contains non-finite values"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let run = single_run(data, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}
