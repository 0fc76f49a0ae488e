//! Conventional comparators: minibatch k-means and a plain (unconstrained)
//! Gaussian mixture fit.

use crate::batch::{PixelBatch, PosteriorField};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::mixture::{fit_constrained_em, MixtureParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Centroid movement below this ends the k-means run early.
const KMEANS_MOVEMENT_TOL: f64 = 1e-6;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(row: &[f64], centroids: &[f64], k: usize, d: usize) -> usize {
    let mut best = 0;
    let mut best_dist = squared_distance(row, &centroids[0..d]);
    for c in 1..k {
        let dist = squared_distance(row, &centroids[c * d..(c + 1) * d]);
        if dist < best_dist {
            best_dist = dist;
            best = c;
        }
    }
    best
}

/// Seeded k-means++ initialization from batch rows, as used by
/// [`minibatch_kmeans`] with the same seed.
pub fn kmeans_plus_plus_init(batch: &PixelBatch, k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kmeans_plus_plus(batch, k, &mut rng)
}

fn kmeans_plus_plus(batch: &PixelBatch, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = batch.n_samples();
    let d = batch.dim();
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(batch.row(first));

    let mut dist = vec![0.0; n];
    for chosen in 1..k {
        let mut total = 0.0;
        for i in 0..n {
            let mut best = f64::INFINITY;
            for c in 0..chosen {
                best = best.min(squared_distance(batch.row(i), &centroids[c * d..(c + 1) * d]));
            }
            dist[i] = best;
            total += best;
        }
        let idx = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut picked = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    picked = i;
                    break;
                }
            }
            picked
        } else {
            rng.gen_range(0..n)
        };
        centroids.extend_from_slice(batch.row(idx));
    }
    centroids
}

/// Minibatch k-means. Each epoch draws a seeded pixel subset, assigns it to
/// the nearest centroids, and applies per-sample updates with per-centroid
/// learning rates 1/count (counts accumulate across epochs). Stops when the
/// largest centroid movement in an epoch drops below 1e-6 or the epoch
/// budget is exhausted. Final labels assign every row to its nearest
/// centroid, ties to the lowest index.
pub fn minibatch_kmeans(
    batch: &PixelBatch,
    k: usize,
    config: &RunConfig,
) -> Result<(Vec<f64>, Vec<u32>)> {
    let n = batch.n_samples();
    let d = batch.dim();
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    if n < k {
        return Err(Error::InvalidInput(format!("need at least k={k} samples, got {n}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = kmeans_plus_plus(batch, k, &mut rng);
    let mut counts = vec![0u64; k];
    let take = config.batch_size.min(n);

    let mut previous = centroids.clone();
    for _ in 0..config.epochs {
        let indices = rand::seq::index::sample(&mut rng, n, take).into_vec();
        // Assignments are cached against the centroids at epoch start.
        let assigned: Vec<usize> = indices
            .iter()
            .map(|&i| nearest_centroid(batch.row(i), &centroids, k, d))
            .collect();
        for (&i, &c) in indices.iter().zip(&assigned) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            let centroid = &mut centroids[c * d..(c + 1) * d];
            for (cv, &xv) in centroid.iter_mut().zip(batch.row(i)) {
                *cv += eta * (xv - *cv);
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            movement = movement
                .max(squared_distance(&previous[c * d..(c + 1) * d], &centroids[c * d..(c + 1) * d]).sqrt());
        }
        previous.copy_from_slice(&centroids);
        if movement < KMEANS_MOVEMENT_TOL {
            break;
        }
    }

    let labels = (0..n)
        .map(|i| nearest_centroid(batch.row(i), &centroids, k, d) as u32)
        .collect();
    Ok((centroids, labels))
}

/// Plain GMM baseline: the constrained fit with the penalty weight forced
/// to zero.
pub fn fit_gmm(
    batch: &PixelBatch,
    k: usize,
    config: &RunConfig,
) -> Result<(MixtureParams, PosteriorField)> {
    let mut cfg = config.clone();
    cfg.k = k;
    cfg.lambda = 0.0;
    let (params, posterior, _) = fit_constrained_em(batch, &cfg)?;
    Ok((params, posterior))
}
