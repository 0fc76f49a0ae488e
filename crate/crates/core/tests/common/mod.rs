//! Shared fixtures and independent reference implementations used by the
//! integration suites. Everything here recomputes results from first
//! principles (direct densities, explicit inverses, exhaustive counting)
//! so it never shares a code path with the library internals it checks.

#![allow(dead_code)]

use cgmm::batch::PixelBatch;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Plain (unconstrained) EM over nested vectors with direct density
/// evaluation and adjugate-based inversion. Dimensions up to 3.
pub struct PlainEm {
    pub k: usize,
    pub dim: usize,
    pub alpha: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<Vec<f64>>>,
    pub gamma_floor: f64,
    pub covariance_floor: f64,
    pub last_gamma: Vec<Vec<f64>>,
}

impl PlainEm {
    pub fn from_params(params: &cgmm::MixtureParams, gamma_floor: f64, covariance_floor: f64) -> PlainEm {
        let k = params.k();
        let dim = params.dim();
        let mu = (0..k).map(|c| params.mean(c).to_vec()).collect();
        let sigma = (0..k)
            .map(|c| {
                (0..dim)
                    .map(|r| params.covariance(c)[r * dim..(r + 1) * dim].to_vec())
                    .collect()
            })
            .collect();
        PlainEm {
            k,
            dim,
            alpha: params.weights().to_vec(),
            mu,
            sigma,
            gamma_floor,
            covariance_floor,
            last_gamma: Vec::new(),
        }
    }

    fn determinant(m: &[Vec<f64>]) -> f64 {
        match m.len() {
            1 => m[0][0],
            2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
            3 => {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
            n => panic!("oracle supports dim <= 3, got {n}"),
        }
    }

    fn inverse(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let det = Self::determinant(m);
        match m.len() {
            1 => vec![vec![1.0 / det]],
            2 => vec![
                vec![m[1][1] / det, -m[0][1] / det],
                vec![-m[1][0] / det, m[0][0] / det],
            ],
            3 => {
                let adj = |r1: usize, c1: usize, r2: usize, c2: usize| {
                    m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]
                };
                let cof = vec![
                    vec![adj(1, 1, 2, 2), -adj(0, 1, 2, 2), adj(0, 1, 1, 2)],
                    vec![-adj(1, 0, 2, 2), adj(0, 0, 2, 2), -adj(0, 0, 1, 2)],
                    vec![adj(1, 0, 2, 1), -adj(0, 0, 2, 1), adj(0, 0, 1, 1)],
                ];
                (0..3)
                    .map(|r| (0..3).map(|c| cof[r][c] / det).collect())
                    .collect()
            }
            n => panic!("oracle supports dim <= 3, got {n}"),
        }
    }

    fn density(&self, x: &[f64], comp: usize) -> f64 {
        let d = self.dim;
        let det = Self::determinant(&self.sigma[comp]);
        let inv = Self::inverse(&self.sigma[comp]);
        let mut q = 0.0;
        for r in 0..d {
            for c in 0..d {
                q += (x[r] - self.mu[comp][r]) * inv[r][c] * (x[c] - self.mu[comp][c]);
            }
        }
        (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) * det.sqrt())
    }

    pub fn e_step(&self, batch: &PixelBatch) -> Vec<Vec<f64>> {
        let mut gamma = Vec::with_capacity(batch.n_samples());
        for i in 0..batch.n_samples() {
            let x = batch.row(i);
            let weighted: Vec<f64> =
                (0..self.k).map(|c| self.alpha[c] * self.density(x, c)).collect();
            let total: f64 = weighted.iter().sum();
            let mut row: Vec<f64> = if total > 0.0 {
                weighted.iter().map(|w| (w / total).max(self.gamma_floor)).collect()
            } else {
                vec![1.0 / self.k as f64; self.k]
            };
            let s: f64 = row.iter().sum();
            for g in &mut row {
                *g /= s;
            }
            gamma.push(row);
        }
        gamma
    }

    /// One full iteration mirroring the Bayes E-step followed by the
    /// standard unconstrained M-step.
    pub fn step(&mut self, batch: &PixelBatch) {
        let gamma = self.e_step(batch);
        let n = batch.n_samples();
        for comp in 0..self.k {
            let col: f64 = (0..n).map(|i| gamma[i][comp]).sum();
            self.alpha[comp] = col / n as f64;
            let mut mean = vec![0.0; self.dim];
            for (i, g) in gamma.iter().enumerate() {
                for c in 0..self.dim {
                    mean[c] += g[comp] * batch.row(i)[c];
                }
            }
            for m in &mut mean {
                *m /= col;
            }
            // The library clamps means into the unit cube; mirror that.
            for m in &mut mean {
                *m = m.clamp(0.0, 1.0);
            }
            let mut cov = vec![vec![0.0; self.dim]; self.dim];
            for (i, g) in gamma.iter().enumerate() {
                let x = batch.row(i);
                for r in 0..self.dim {
                    for c in 0..self.dim {
                        cov[r][c] += g[comp] * (x[r] - mean[r]) * (x[c] - mean[c]);
                    }
                }
            }
            for r in 0..self.dim {
                for c in 0..self.dim {
                    cov[r][c] /= col;
                }
                cov[r][r] += self.covariance_floor;
            }
            self.mu[comp] = mean;
            self.sigma[comp] = cov;
        }
        self.last_gamma = gamma;
    }

    /// Incomplete-data log-likelihood by direct density summation.
    pub fn log_likelihood(&self, batch: &PixelBatch) -> f64 {
        let mut total = 0.0;
        for i in 0..batch.n_samples() {
            let x = batch.row(i);
            let s: f64 = (0..self.k).map(|c| self.alpha[c] * self.density(x, c)).sum();
            total += s.ln();
        }
        total
    }
}

/// Uniform random batch in the unit cube.
pub fn random_batch(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> PixelBatch {
    let samples: Vec<f64> = (0..n * dim).map(|_| rng.gen::<f64>()).collect();
    PixelBatch::new(n, dim, samples).unwrap()
}

/// Random responsibilities: positive rows normalized to the simplex.
pub fn random_gamma(n: usize, k: usize, rng: &mut ChaCha8Rng) -> cgmm::PosteriorField {
    let mut gamma = vec![0.0; n * k];
    for i in 0..n {
        let row = &mut gamma[i * k..(i + 1) * k];
        let mut sum = 0.0;
        for g in row.iter_mut() {
            *g = rng.gen::<f64>().max(1e-6);
            sum += *g;
        }
        for g in row.iter_mut() {
            *g /= sum;
        }
    }
    cgmm::PosteriorField::new(n, k, gamma).unwrap()
}

/// Random mixture with diagonal-dominant SPD covariances.
pub fn random_mixture(k: usize, dim: usize, rng: &mut ChaCha8Rng) -> cgmm::MixtureParams {
    let mut weights: Vec<f64> = (0..k).map(|_| rng.gen::<f64>().max(0.05)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    // Exact simplex normalization for the constructor's 1e-12 check.
    let correction: f64 = 1.0 - weights.iter().sum::<f64>();
    weights[0] += correction;
    let means: Vec<f64> = (0..k * dim).map(|_| rng.gen::<f64>()).collect();
    let mut covs = vec![0.0; k * dim * dim];
    for comp in 0..k {
        for r in 0..dim {
            for c in 0..r {
                let v = rng.gen_range(-0.005..0.005);
                covs[comp * dim * dim + r * dim + c] = v;
                covs[comp * dim * dim + c * dim + r] = v;
            }
            covs[comp * dim * dim + r * dim + r] = rng.gen_range(0.02..0.3);
        }
    }
    cgmm::MixtureParams::new(k, dim, weights, means, covs).unwrap()
}
