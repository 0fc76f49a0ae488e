//! Flat pixel batches, observed minibatch moments, and responsibility fields.

use crate::error::{Error, Result};

/// N samples of dimension D, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelBatch {
    n_samples: usize,
    dim: usize,
    samples: Vec<f64>,
}

impl PixelBatch {
    pub fn new(n_samples: usize, dim: usize, samples: Vec<f64>) -> Result<Self> {
        if n_samples == 0 || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "batch must be non-empty, got {n_samples}x{dim}"
            )));
        }
        if samples.len() != n_samples * dim {
            return Err(Error::DimensionMismatch(format!(
                "batch data length {} does not match {n_samples}x{dim}",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("batch contains a non-finite value".into()));
        }
        Ok(PixelBatch { n_samples, dim, samples })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut samples = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch("ragged rows".into()));
            }
            samples.extend_from_slice(row);
        }
        PixelBatch::new(n, d, samples)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    /// New batch holding the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Result<PixelBatch> {
        let mut samples = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            samples.extend_from_slice(self.row(i));
        }
        PixelBatch::new(indices.len(), self.dim, samples)
    }

    /// Concatenates several batches of equal dimension.
    pub fn concat(batches: &[PixelBatch]) -> Result<PixelBatch> {
        let dim = batches
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot concat zero batches".into()))?
            .dim;
        let mut samples = Vec::new();
        let mut n = 0;
        for b in batches {
            if b.dim != dim {
                return Err(Error::DimensionMismatch("batch dims differ".into()));
            }
            samples.extend_from_slice(&b.samples);
            n += b.n_samples;
        }
        PixelBatch::new(n, dim, samples)
    }
}

/// Observed per-channel mean and population variance of one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Per-channel moments over exactly the given batch. The variance is the
/// population (1/N) variance, floored at `variance_floor`.
pub fn compute_batch_stats(batch: &PixelBatch, variance_floor: f64) -> BatchStats {
    let n = batch.n_samples();
    let d = batch.dim();
    let inv_n = 1.0 / n as f64;
    let mut mean = vec![0.0; d];
    for i in 0..n {
        let row = batch.row(i);
        for c in 0..d {
            mean[c] += row[c];
        }
    }
    for m in &mut mean {
        *m *= inv_n;
    }
    let mut variance = vec![0.0; d];
    for i in 0..n {
        let row = batch.row(i);
        for c in 0..d {
            let diff = row[c] - mean[c];
            variance[c] += diff * diff;
        }
    }
    for v in &mut variance {
        *v = (*v * inv_n).max(variance_floor);
    }
    BatchStats { mean, variance }
}

/// N x K responsibilities; each row lives on the K-simplex with entries
/// at least the floor it was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorField {
    n_samples: usize,
    k: usize,
    gamma: Vec<f64>,
}

impl PosteriorField {
    /// Wraps raw responsibilities. Rows must already sum to 1 within 1e-9.
    pub fn new(n_samples: usize, k: usize, gamma: Vec<f64>) -> Result<Self> {
        if gamma.len() != n_samples * k {
            return Err(Error::DimensionMismatch(format!(
                "gamma length {} does not match {n_samples}x{k}",
                gamma.len()
            )));
        }
        for i in 0..n_samples {
            let row = &gamma[i * k..(i + 1) * k];
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "responsibility row {i} sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|&g| !(g > 0.0) || g > 1.0) {
                return Err(Error::InvalidInput(format!(
                    "responsibility row {i} has an entry outside (0, 1]"
                )));
            }
        }
        Ok(PosteriorField { n_samples, k, gamma })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.gamma[i * self.k..(i + 1) * self.k]
    }

    /// Per-row argmax; ties break to the lowest class index.
    pub fn argmax_labels(&self) -> Vec<u32> {
        (0..self.n_samples)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0usize;
                for k in 1..self.k {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best as u32
            })
            .collect()
    }
}

/// Row-wise softmax with max-subtraction, then clamped to at least
/// `gamma_floor` and renormalized so every row sums to 1.
pub fn softmax_rows(logits: &[f64], n: usize, k: usize, gamma_floor: f64) -> PosteriorField {
    assert_eq!(logits.len(), n * k, "logit shape mismatch");
    let mut gamma = vec![0.0; n * k];
    for i in 0..n {
        let row = &logits[i * k..(i + 1) * k];
        let out = &mut gamma[i * k..(i + 1) * k];
        softmax_row_into(row, out, gamma_floor);
    }
    PosteriorField { n_samples: n, k, gamma }
}

pub(crate) fn softmax_row_into(logits: &[f64], out: &mut [f64], gamma_floor: f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    let mut floored_sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o / sum).max(gamma_floor);
        floored_sum += *o;
    }
    for o in out.iter_mut() {
        *o /= floored_sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn stats_of_zero_one_pair() {
        let batch = PixelBatch::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let stats = compute_batch_stats(&batch, 1e-6);
        assert_abs_diff_eq!(stats.mean[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(stats.variance[0], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn constant_batch_variance_is_floored() {
        let batch = PixelBatch::from_rows(&[vec![0.3], vec![0.3]]).unwrap();
        let stats = compute_batch_stats(&batch, 1e-6);
        assert_abs_diff_eq!(stats.mean[0], 0.3, epsilon = 1e-15);
        assert_eq!(stats.variance[0], 1e-6);
    }

    #[test]
    fn single_row_stats() {
        let batch = PixelBatch::from_rows(&[vec![0.2, 0.7]]).unwrap();
        let stats = compute_batch_stats(&batch, 1e-6);
        assert_eq!(stats.mean, vec![0.2, 0.7]);
        assert_eq!(stats.variance, vec![1e-6, 1e-6]);
    }

    #[test]
    fn softmax_symmetric_row() {
        let field = softmax_rows(&[0.0, 0.0], 1, 2, 1e-8);
        assert_abs_diff_eq!(field.row(0)[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(field.row(0)[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn softmax_ln3_row() {
        let field = softmax_rows(&[3f64.ln(), 0.0], 1, 2, 1e-8);
        assert_abs_diff_eq!(field.row(0)[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(field.row(0)[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn softmax_extreme_row_is_clamped_not_overflowed() {
        let field = softmax_rows(&[1000.0, 0.0], 1, 2, 1e-8);
        let row = field.row(0);
        assert!(row.iter().all(|v| v.is_finite()));
        assert!(row[1] >= 1e-8 / (1.0 + 1e-8) && row[1] < 2e-8);
        assert_abs_diff_eq!(row[0] + row[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn argmax_ties_break_low() {
        let field = PosteriorField::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(field.argmax_labels(), vec![0]);
    }

    #[test]
    fn select_picks_rows_in_order() {
        let batch = PixelBatch::from_rows(&[vec![0.0], vec![1.0], vec![0.5]]).unwrap();
        let sel = batch.select(&[2, 0]).unwrap();
        assert_eq!(sel.row(0), &[0.5]);
        assert_eq!(sel.row(1), &[0.0]);
    }
}
