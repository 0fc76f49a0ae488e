//! Gaussian-mixture objective with a centralising penalty and the
//! closed-form constrained parameter updates, plus an EM driver that
//! alternates Bayes responsibilities with those updates.

use crate::batch::{compute_batch_stats, softmax_row_into, BatchStats, PixelBatch, PosteriorField};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::linalg::{symmetry_error, Cholesky};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LN_2PI: f64 = 1.8378770664093453;
/// A responsibility column below this total signals posterior collapse.
const RESPONSIBILITY_EPS: f64 = 1e-12;
/// Iteration stops once the objective changes by less than this.
pub const CONVERGENCE_TOL: f64 = 1e-7;
/// Range of the uniformly drawn initial covariance diagonal; data lives in
/// [0, 1] per channel, so this spans plausible within-cluster scales.
const SIGMA_INIT_RANGE: (f64, f64) = (0.05, 0.3);

/// Mixture parameters: weights on the simplex, K x D means, and K stacked
/// D x D symmetric positive-definite covariances (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    k: usize,
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    covariances: Vec<f64>,
}

impl MixtureParams {
    pub fn new(
        k: usize,
        dim: usize,
        weights: Vec<f64>,
        means: Vec<f64>,
        covariances: Vec<f64>,
    ) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::InvalidInput("k and dim must be positive".into()));
        }
        if weights.len() != k || means.len() != k * dim || covariances.len() != k * dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "mixture shapes do not match k={k}, dim={dim}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "weights sum to {sum}, expected 1 within 1e-12"
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidInput("weights must be strictly positive".into()));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("means must be finite".into()));
        }
        for comp in 0..k {
            let cov = &covariances[comp * dim * dim..(comp + 1) * dim * dim];
            if symmetry_error(cov, dim) > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "covariance of component {comp} is not symmetric"
                )));
            }
            if Cholesky::new(cov, dim).is_none() {
                return Err(Error::NotPositiveDefinite { component: comp });
            }
        }
        Ok(MixtureParams { k, dim, weights, means, covariances })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn covariances(&self) -> &[f64] {
        &self.covariances
    }

    pub fn mean(&self, comp: usize) -> &[f64] {
        &self.means[comp * self.dim..(comp + 1) * self.dim]
    }

    pub fn covariance(&self, comp: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.covariances[comp * dd..(comp + 1) * dd]
    }

    fn factorize(&self) -> Result<Vec<Cholesky>> {
        (0..self.k)
            .map(|comp| {
                Cholesky::new(self.covariance(comp), self.dim)
                    .ok_or(Error::NotPositiveDefinite { component: comp })
            })
            .collect()
    }
}

fn check_shapes(batch: &PixelBatch, gamma: &PosteriorField, params: &MixtureParams) -> Result<()> {
    if batch.n_samples() != gamma.n_samples() {
        return Err(Error::DimensionMismatch(format!(
            "batch has {} samples but gamma has {}",
            batch.n_samples(),
            gamma.n_samples()
        )));
    }
    if gamma.k() != params.k() || batch.dim() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "gamma k={} / batch dim={} vs mixture k={} dim={}",
            gamma.k(),
            batch.dim(),
            params.k(),
            params.dim()
        )));
    }
    Ok(())
}

/// Responsibility-weighted mixture lower bound:
///
/// sum_k sum_i gamma_ik [ln a_k - (D/2) ln 2pi - ln gamma_ik
///                       - 1/2 ln|S_k| - 1/2 (x_i - mu_k)^T S_k^{-1} (x_i - mu_k)]
///
/// The constant term is kept so values are comparable to reference EM
/// implementations; it cancels in all optimization deltas.
pub fn gmm_log_likelihood(
    batch: &PixelBatch,
    gamma: &PosteriorField,
    params: &MixtureParams,
) -> Result<f64> {
    check_shapes(batch, gamma, params)?;
    let d = batch.dim();
    let factors = params.factorize()?;
    let mut diff = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut total = 0.0;
    for comp in 0..params.k() {
        let base = params.weights()[comp].ln()
            - 0.5 * d as f64 * LN_2PI
            - 0.5 * factors[comp].log_determinant();
        let mu = params.mean(comp);
        for i in 0..batch.n_samples() {
            let g = gamma.row(i)[comp];
            let row = batch.row(i);
            for c in 0..d {
                diff[c] = row[c] - mu[c];
            }
            let maha = factors[comp].mahalanobis_squared(&diff, &mut scratch);
            total += g * (base - g.ln() - 0.5 * maha);
        }
    }
    Ok(total)
}

/// Centralising penalty: per channel, |mu_kc - mean_c| / variance_c summed
/// over components and channels. Small observed variance makes the pull
/// toward the observed mean strong; large variance makes it negligible.
pub fn centralised_penalty(params: &MixtureParams, stats: &BatchStats) -> f64 {
    assert_eq!(params.dim(), stats.mean.len(), "stats dim mismatch");
    let mut total = 0.0;
    for comp in 0..params.k() {
        let mu = params.mean(comp);
        for c in 0..params.dim() {
            total += (mu[c] - stats.mean[c]).abs() / stats.variance[c];
        }
    }
    total
}

/// Penalized objective: log-likelihood minus lambda times the penalty.
pub fn constrained_objective(
    batch: &PixelBatch,
    gamma: &PosteriorField,
    params: &MixtureParams,
    stats: &BatchStats,
    lambda: f64,
) -> Result<f64> {
    debug_assert!(lambda >= 0.0);
    Ok(gmm_log_likelihood(batch, gamma, params)? - lambda * centralised_penalty(params, stats))
}

/// Weight update: column sums of gamma divided by N.
pub fn m_step_alpha(gamma: &PosteriorField) -> Vec<f64> {
    let n = gamma.n_samples() as f64;
    let mut alpha = vec![0.0; gamma.k()];
    for (comp, a) in alpha.iter_mut().enumerate() {
        let mut sum = 0.0;
        for i in 0..gamma.n_samples() {
            sum += gamma.row(i)[comp];
        }
        *a = sum / n;
    }
    alpha
}

/// Constrained mean update. Per channel the responsibility-weighted mean is
/// corrected by lambda * Sigma_prev[c,c] / sigma_c^2, subtracted when the
/// previous mean iterate sits at or above the observed channel mean and
/// added otherwise, so the correction points from the previous iterate's
/// side toward the observed mean. The step is capped so the result is never
/// farther from the observed mean than the uncorrected weighted mean: it
/// stops at the observed mean instead of crossing it, and it stays put when
/// the branch direction disagrees with the data side. Results are clamped
/// to [0, 1].
pub fn m_step_mu_constrained(
    gamma: &PosteriorField,
    batch: &PixelBatch,
    prev: &MixtureParams,
    stats: &BatchStats,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_shapes(batch, gamma, prev)?;
    assert_eq!(stats.mean.len(), batch.dim(), "stats dim mismatch");
    let k = prev.k();
    let d = prev.dim();
    let n = batch.n_samples();

    let mut col_sums = vec![0.0; k];
    let mut weighted = vec![0.0; k * d];
    for comp in 0..k {
        for i in 0..n {
            let g = gamma.row(i)[comp];
            col_sums[comp] += g;
            let row = batch.row(i);
            for c in 0..d {
                weighted[comp * d + c] += g * row[c];
            }
        }
        if col_sums[comp] < RESPONSIBILITY_EPS {
            return Err(Error::DegenerateResponsibility { component: comp });
        }
    }

    let mut means = vec![0.0; k * d];
    for comp in 0..k {
        let mu_prev = prev.mean(comp);
        let cov_prev = prev.covariance(comp);
        for c in 0..d {
            let wsum = weighted[comp * d + c];
            let col = col_sums[comp];
            let unconstrained = wsum / col;
            let obs = stats.mean[c];
            let new = if lambda == 0.0 {
                unconstrained
            } else {
                let correction = lambda * cov_prev[c * d + c] / stats.variance[c];
                let prev_above = mu_prev[c] >= obs;
                if prev_above != (unconstrained >= obs) {
                    // Branch sign would push the estimate away from the
                    // observed mean; leave the weighted mean untouched.
                    unconstrained
                } else if prev_above {
                    ((wsum - correction) / col).max(obs)
                } else {
                    ((wsum + correction) / col).min(obs)
                }
            };
            means[comp * d + c] = new.clamp(0.0, 1.0);
        }
    }
    Ok(means)
}

/// Covariance update from the new means: responsibility-weighted scatter
/// plus `covariance_floor` on the diagonal.
pub fn m_step_sigma(
    gamma: &PosteriorField,
    batch: &PixelBatch,
    means: &[f64],
    covariance_floor: f64,
) -> Result<Vec<f64>> {
    let k = gamma.k();
    let d = batch.dim();
    let n = batch.n_samples();
    if means.len() != k * d {
        return Err(Error::DimensionMismatch(format!(
            "means length {} does not match {k}x{d}",
            means.len()
        )));
    }
    if gamma.n_samples() != n {
        return Err(Error::DimensionMismatch("gamma/batch row mismatch".into()));
    }

    let mut covs = vec![0.0; k * d * d];
    let mut diff = vec![0.0; d];
    for comp in 0..k {
        let mu = &means[comp * d..(comp + 1) * d];
        let cov = &mut covs[comp * d * d..(comp + 1) * d * d];
        let mut col_sum = 0.0;
        for i in 0..n {
            let g = gamma.row(i)[comp];
            col_sum += g;
            let row = batch.row(i);
            for c in 0..d {
                diff[c] = row[c] - mu[c];
            }
            for a in 0..d {
                let ga = g * diff[a];
                for b in 0..d {
                    cov[a * d + b] += ga * diff[b];
                }
            }
        }
        if col_sum < RESPONSIBILITY_EPS {
            return Err(Error::DegenerateResponsibility { component: comp });
        }
        for v in cov.iter_mut() {
            *v /= col_sum;
        }
        for c in 0..d {
            cov[c * d + c] += covariance_floor;
        }
    }
    Ok(covs)
}

/// Bayes responsibilities: gamma_ik proportional to a_k N(x_i; mu_k, S_k),
/// evaluated in log space, floored at `gamma_floor` and renormalized.
pub fn classical_posterior(
    batch: &PixelBatch,
    params: &MixtureParams,
    gamma_floor: f64,
) -> Result<PosteriorField> {
    let n = batch.n_samples();
    let k = params.k();
    let d = batch.dim();
    if d != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "batch dim {d} vs mixture dim {}",
            params.dim()
        )));
    }
    let factors = params.factorize()?;
    let bases: Vec<f64> = (0..k)
        .map(|comp| {
            params.weights()[comp].ln()
                - 0.5 * d as f64 * LN_2PI
                - 0.5 * factors[comp].log_determinant()
        })
        .collect();

    let mut gamma = vec![0.0; n * k];
    let mut diff = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut log_row = vec![0.0; k];
    for i in 0..n {
        let row = batch.row(i);
        for comp in 0..k {
            let mu = params.mean(comp);
            for c in 0..d {
                diff[c] = row[c] - mu[c];
            }
            let maha = factors[comp].mahalanobis_squared(&diff, &mut scratch);
            log_row[comp] = bases[comp] - 0.5 * maha;
        }
        softmax_row_into(&log_row, &mut gamma[i * k..(i + 1) * k], gamma_floor);
    }
    PosteriorField::new(n, k, gamma)
}

/// Seeded initial parameters: means are K distinct batch rows, covariances
/// are diagonal with entries drawn uniformly from [0.05, 0.3], weights are
/// uniform.
pub fn init_mixture_params(batch: &PixelBatch, k: usize, seed: u64) -> Result<MixtureParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_mixture_params_with_rng(batch, k, &mut rng)
}

pub fn init_mixture_params_with_rng(
    batch: &PixelBatch,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MixtureParams> {
    let n = batch.n_samples();
    let d = batch.dim();
    if n < k {
        return Err(Error::InvalidInput(format!("need at least k={k} samples, got {n}")));
    }
    let indices = rand::seq::index::sample(rng, n, k);
    let mut means = Vec::with_capacity(k * d);
    for idx in indices.iter() {
        means.extend_from_slice(batch.row(idx));
    }
    let diag = Uniform::new_inclusive(SIGMA_INIT_RANGE.0, SIGMA_INIT_RANGE.1);
    let mut covs = vec![0.0; k * d * d];
    for comp in 0..k {
        for c in 0..d {
            covs[comp * d * d + c * d + c] = diag.sample(rng);
        }
    }
    let weights = vec![1.0 / k as f64; k];
    MixtureParams::new(k, d, weights, means, covs)
}

/// One full constrained-EM pass per [`ConstrainedEm::step`]: Bayes
/// responsibilities at the current parameters, then the constrained weight,
/// mean, and covariance updates, then the penalized objective.
pub struct ConstrainedEm<'a> {
    batch: &'a PixelBatch,
    config: RunConfig,
    stats: BatchStats,
    params: MixtureParams,
    posterior: Option<PosteriorField>,
    objective: Option<f64>,
}

impl<'a> ConstrainedEm<'a> {
    pub fn new(batch: &'a PixelBatch, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let params = init_mixture_params(batch, config.k, config.seed)?;
        Self::with_init(batch, config, params)
    }

    /// Starts from explicit parameters instead of the seeded draw.
    pub fn with_init(
        batch: &'a PixelBatch,
        config: &RunConfig,
        params: MixtureParams,
    ) -> Result<Self> {
        if params.dim() != batch.dim() {
            return Err(Error::DimensionMismatch("init params dim mismatch".into()));
        }
        let stats = compute_batch_stats(batch, config.variance_floor);
        Ok(ConstrainedEm {
            batch,
            config: config.clone(),
            stats,
            params,
            posterior: None,
            objective: None,
        })
    }

    pub fn params(&self) -> &MixtureParams {
        &self.params
    }

    /// Responsibilities of the most recent completed iteration.
    pub fn posterior(&self) -> Option<&PosteriorField> {
        self.posterior.as_ref()
    }

    pub fn objective(&self) -> Option<f64> {
        self.objective
    }

    pub fn stats(&self) -> &BatchStats {
        &self.stats
    }

    /// Runs one iteration and returns the penalized objective evaluated
    /// with the fresh responsibilities and updated parameters.
    pub fn step(&mut self) -> Result<f64> {
        let gamma = classical_posterior(self.batch, &self.params, self.config.gamma_floor)?;
        let alpha = m_step_alpha(&gamma);
        let means =
            m_step_mu_constrained(&gamma, self.batch, &self.params, &self.stats, self.config.lambda)?;
        let covs = m_step_sigma(&gamma, self.batch, &means, self.config.covariance_floor)?;
        self.params = MixtureParams::new(self.params.k(), self.params.dim(), alpha, means, covs)?;
        let objective =
            constrained_objective(self.batch, &gamma, &self.params, &self.stats, self.config.lambda)?;
        self.posterior = Some(gamma);
        self.objective = Some(objective);
        Ok(objective)
    }

    /// Iterates until the objective changes by less than [`CONVERGENCE_TOL`]
    /// or the epoch budget runs out; returns the per-iteration objectives.
    pub fn run(&mut self) -> Result<Vec<f64>> {
        let mut trace = Vec::new();
        let mut prev = None;
        for _ in 0..self.config.epochs {
            let obj = self.step()?;
            trace.push(obj);
            if let Some(p) = prev {
                if (obj - p as f64).abs() < CONVERGENCE_TOL {
                    break;
                }
            }
            prev = Some(obj);
        }
        Ok(trace)
    }
}

/// Fits the constrained mixture by closed-form EM. Returns the final
/// parameters, the responsibilities re-evaluated at those parameters, and
/// the objective trace.
pub fn fit_constrained_em(
    batch: &PixelBatch,
    config: &RunConfig,
) -> Result<(MixtureParams, PosteriorField, Vec<f64>)> {
    let mut em = ConstrainedEm::new(batch, config)?;
    let trace = em.run()?;
    let posterior = classical_posterior(batch, em.params(), config.gamma_floor)?;
    Ok((em.params, posterior, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_component(mu: f64, sigma: f64) -> MixtureParams {
        MixtureParams::new(1, 1, vec![1.0], vec![mu], vec![sigma]).unwrap()
    }

    fn uniform_gamma(n: usize, k: usize) -> PosteriorField {
        PosteriorField::new(n, k, vec![1.0 / k as f64; n * k]).unwrap()
    }

    #[test]
    fn likelihood_of_centered_unit_gaussian() {
        let batch = PixelBatch::from_rows(&[vec![0.5]]).unwrap();
        let gamma = PosteriorField::new(1, 1, vec![1.0]).unwrap();
        let params = single_component(0.5, 1.0);
        let ll = gmm_log_likelihood(&batch, &gamma, &params).unwrap();
        assert_abs_diff_eq!(ll, -0.9189385332046727, epsilon = 1e-9);
    }

    #[test]
    fn likelihood_identity_covariance_d3() {
        let batch = PixelBatch::from_rows(&[vec![0.2, 0.4, 0.6]]).unwrap();
        let gamma = PosteriorField::new(1, 1, vec![1.0]).unwrap();
        let mut cov = vec![0.0; 9];
        for c in 0..3 {
            cov[c * 3 + c] = 1.0;
        }
        let params = MixtureParams::new(1, 3, vec![1.0], vec![0.2, 0.4, 0.6], cov).unwrap();
        let ll = gmm_log_likelihood(&batch, &gamma, &params).unwrap();
        assert_abs_diff_eq!(ll, -2.756815599614018, epsilon = 1e-9);
    }

    #[test]
    fn likelihood_with_unit_mahalanobis() {
        let batch = PixelBatch::from_rows(&[vec![1.0]]).unwrap();
        let gamma = PosteriorField::new(1, 1, vec![1.0]).unwrap();
        let params = single_component(0.0, 1.0);
        let ll = gmm_log_likelihood(&batch, &gamma, &params).unwrap();
        assert_abs_diff_eq!(ll, -1.4189385332046727, epsilon = 1e-9);
    }

    #[test]
    fn likelihood_rejects_indefinite_covariance() {
        let params = MixtureParams::new(
            1,
            2,
            vec![1.0],
            vec![0.5, 0.5],
            vec![1.0, 2.0, 2.0, 1.0],
        );
        // Construction itself rejects the indefinite matrix and names it.
        match params {
            Err(Error::NotPositiveDefinite { component }) => assert_eq!(component, 0),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn penalty_zero_at_observed_mean() {
        let params = MixtureParams::new(
            2,
            1,
            vec![0.5, 0.5],
            vec![0.4, 0.4],
            vec![0.1, 0.1],
        )
        .unwrap();
        let stats = BatchStats { mean: vec![0.4], variance: vec![0.04] };
        assert_eq!(centralised_penalty(&params, &stats), 0.0);
    }

    #[test]
    fn penalty_hand_value() {
        let params = single_component(0.6, 0.1);
        let stats = BatchStats { mean: vec![0.4], variance: vec![0.04] };
        assert_abs_diff_eq!(centralised_penalty(&params, &stats), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn penalty_is_linear_in_distance() {
        let stats = BatchStats { mean: vec![0.4], variance: vec![0.04] };
        let near = centralised_penalty(&single_component(0.5, 0.1), &stats);
        let far = centralised_penalty(&single_component(0.6, 0.1), &stats);
        assert_abs_diff_eq!(far, 2.0 * near, epsilon = 1e-12);
    }

    #[test]
    fn objective_reduces_to_likelihood_at_lambda_zero() {
        let batch = PixelBatch::from_rows(&[vec![0.2], vec![0.8]]).unwrap();
        let gamma = uniform_gamma(2, 1);
        let params = single_component(0.4, 0.2);
        let stats = compute_batch_stats(&batch, 1e-6);
        let ll = gmm_log_likelihood(&batch, &gamma, &params).unwrap();
        let obj = constrained_objective(&batch, &gamma, &params, &stats, 0.0).unwrap();
        assert_eq!(ll, obj);
    }

    #[test]
    fn objective_is_likelihood_minus_scaled_penalty() {
        let batch = PixelBatch::from_rows(&[vec![0.2], vec![0.8]]).unwrap();
        let gamma = uniform_gamma(2, 1);
        let params = single_component(0.6, 0.2);
        // Fixed stats give penalty |0.6-0.4|/0.04 = 5.
        let stats = BatchStats { mean: vec![0.4], variance: vec![0.04] };
        let ll = gmm_log_likelihood(&batch, &gamma, &params).unwrap();
        let obj = constrained_objective(&batch, &gamma, &params, &stats, 0.005).unwrap();
        assert_abs_diff_eq!(obj, ll - 0.005 * 5.0, epsilon = 1e-12);
        // Hand case: likelihood -1, penalty 5, lambda 0.005 -> -1.025.
        assert_abs_diff_eq!(-1.0 - 0.005 * 5.0, -1.025, epsilon = 1e-15);
    }

    #[test]
    fn alpha_update_uniform() {
        let gamma = uniform_gamma(4, 2);
        let alpha = m_step_alpha(&gamma);
        assert_eq!(alpha, vec![0.5, 0.5]);
    }

    #[test]
    fn alpha_update_concentrated() {
        let floor = 1e-8;
        let n = 4;
        let mut g = Vec::new();
        for _ in 0..n {
            g.extend_from_slice(&[1.0 - floor, floor]);
        }
        let gamma = PosteriorField::new(n, 2, g).unwrap();
        let alpha = m_step_alpha(&gamma);
        assert!(alpha[0] > 1.0 - 1e-6 && alpha[1] < 1e-6);
        assert_abs_diff_eq!(alpha[0] + alpha[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn alpha_update_hand_value() {
        // Column sums (3, 1) over N = 4 rows.
        let gamma =
            PosteriorField::new(4, 2, vec![0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4]).unwrap();
        let alpha = m_step_alpha(&gamma);
        assert_abs_diff_eq!(alpha[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha[1], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    fn two_point_batch() -> PixelBatch {
        PixelBatch::from_rows(&[vec![0.2], vec![0.4]]).unwrap()
    }

    fn full_gamma_k1() -> PosteriorField {
        PosteriorField::new(2, 1, vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn mu_update_reduces_to_weighted_mean_at_lambda_zero() {
        let batch = two_point_batch();
        let gamma = full_gamma_k1();
        let prev = single_component(0.5, 0.02);
        let stats = BatchStats { mean: vec![0.3], variance: vec![0.01] };
        let mu = m_step_mu_constrained(&gamma, &batch, &prev, &stats, 0.0).unwrap();
        assert_abs_diff_eq!(mu[0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn mu_update_minus_branch() {
        // Previous mean 0.5 sits above the observed mean 0.25, and the
        // weighted mean 0.3 is on the same side, so the correction is
        // subtracted: (0.6 - 0.005 * 0.02/0.01) / 2 = 0.295.
        let batch = two_point_batch();
        let gamma = full_gamma_k1();
        let prev = single_component(0.5, 0.02);
        let stats = BatchStats { mean: vec![0.25], variance: vec![0.01] };
        let mu = m_step_mu_constrained(&gamma, &batch, &prev, &stats, 0.005).unwrap();
        assert_abs_diff_eq!(mu[0], 0.295, epsilon = 1e-12);
    }

    #[test]
    fn mu_update_plus_branch() {
        // Previous mean 0.1 sits below the observed mean 0.35, weighted
        // mean 0.3 also below: (0.6 + 0.005 * 0.02/0.01) / 2 = 0.305.
        let batch = two_point_batch();
        let gamma = full_gamma_k1();
        let prev = single_component(0.1, 0.02);
        let stats = BatchStats { mean: vec![0.35], variance: vec![0.01] };
        let mu = m_step_mu_constrained(&gamma, &batch, &prev, &stats, 0.005).unwrap();
        assert_abs_diff_eq!(mu[0], 0.305, epsilon = 1e-12);
    }

    #[test]
    fn mu_update_stops_at_observed_mean() {
        // Huge correction: the step caps at the observed mean rather than
        // shooting past it.
        let batch = two_point_batch();
        let gamma = full_gamma_k1();
        let prev = single_component(0.5, 0.02);
        let stats = BatchStats { mean: vec![0.25], variance: vec![1e-6] };
        let mu = m_step_mu_constrained(&gamma, &batch, &prev, &stats, 0.005).unwrap();
        assert_eq!(mu, vec![0.25]);
    }

    #[test]
    fn mu_update_keeps_weighted_mean_on_sign_disagreement() {
        // Previous mean above the observed mean, weighted mean below it:
        // subtracting would push away, so nothing moves.
        let batch = two_point_batch();
        let gamma = full_gamma_k1();
        let prev = single_component(0.9, 0.02);
        let stats = BatchStats { mean: vec![0.5], variance: vec![0.01] };
        let mu = m_step_mu_constrained(&gamma, &batch, &prev, &stats, 0.005).unwrap();
        assert_abs_diff_eq!(mu[0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn mu_update_rejects_degenerate_column() {
        let batch = two_point_batch();
        let gamma = PosteriorField::new(2, 2, vec![1.0 - 1e-13, 1e-13, 1.0 - 1e-13, 1e-13]).unwrap();
        let prev = MixtureParams::new(
            2,
            1,
            vec![0.5, 0.5],
            vec![0.2, 0.4],
            vec![0.02, 0.02],
        )
        .unwrap();
        let stats = BatchStats { mean: vec![0.3], variance: vec![0.01] };
        match m_step_mu_constrained(&gamma, &batch, &prev, &stats, 0.005) {
            Err(Error::DegenerateResponsibility { component }) => assert_eq!(component, 1),
            other => panic!("expected DegenerateResponsibility, got {other:?}"),
        }
    }

    #[test]
    fn sigma_update_symmetric_pair() {
        let batch = PixelBatch::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let gamma = full_gamma_k1();
        let covs = m_step_sigma(&gamma, &batch, &[0.0], 1e-6).unwrap();
        assert_abs_diff_eq!(covs[0], 1.0 + 1e-6, epsilon = 1e-15);
    }

    #[test]
    fn sigma_update_single_sample_is_floored() {
        let batch = PixelBatch::from_rows(&[vec![0.4, 0.6]]).unwrap();
        let gamma = PosteriorField::new(1, 1, vec![1.0]).unwrap();
        let covs = m_step_sigma(&gamma, &batch, &[0.4, 0.6], 1e-6).unwrap();
        assert_eq!(covs, vec![1e-6, 0.0, 0.0, 1e-6]);
    }

    #[test]
    fn sigma_update_hand_computed_two_d() {
        let batch = PixelBatch::from_rows(&[vec![0.1, 0.3], vec![0.5, 0.9]]).unwrap();
        let gamma = PosteriorField::new(2, 1, vec![1.0, 1.0]).unwrap();
        // Weighted mean is (0.3, 0.6); diffs (-0.2, -0.3) and (0.2, 0.3).
        // Scatter / 2 = [[0.04, 0.06], [0.06, 0.09]].
        let covs = m_step_sigma(&gamma, &batch, &[0.3, 0.6], 1e-6).unwrap();
        assert_abs_diff_eq!(covs[0], 0.04 + 1e-6, epsilon = 1e-12);
        assert_abs_diff_eq!(covs[1], 0.06, epsilon = 1e-12);
        assert_abs_diff_eq!(covs[2], 0.06, epsilon = 1e-12);
        assert_abs_diff_eq!(covs[3], 0.09 + 1e-6, epsilon = 1e-12);
    }

    #[test]
    fn posterior_symmetric_point() {
        let batch = PixelBatch::from_rows(&[vec![0.5]]).unwrap();
        let params = MixtureParams::new(
            2,
            1,
            vec![0.5, 0.5],
            vec![0.3, 0.7],
            vec![0.05, 0.05],
        )
        .unwrap();
        let post = classical_posterior(&batch, &params, 1e-8).unwrap();
        assert_abs_diff_eq!(post.row(0)[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(post.row(0)[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn posterior_dominated_by_prior_for_identical_components() {
        let eps = 1e-6;
        let params = MixtureParams::new(
            2,
            1,
            vec![1.0 - eps, eps],
            vec![0.5, 0.5],
            vec![0.05, 0.05],
        )
        .unwrap();
        let batch = PixelBatch::from_rows(&[vec![0.1], vec![0.9]]).unwrap();
        let post = classical_posterior(&batch, &params, 1e-8).unwrap();
        for i in 0..2 {
            assert!(post.row(i)[0] > 1.0 - 1e-5);
            assert!(post.row(i)[1] < 1e-5);
        }
    }

    #[test]
    fn posterior_matches_density_ratio_oracle() {
        // Direct density evaluation, no log-space tricks.
        let params = MixtureParams::new(
            3,
            2,
            vec![0.2, 0.5, 0.3],
            vec![0.1, 0.2, 0.5, 0.5, 0.8, 0.3],
            vec![
                0.04, 0.01, 0.01, 0.05, // comp 0
                0.03, 0.0, 0.0, 0.02, // comp 1
                0.06, -0.02, -0.02, 0.04, // comp 2
            ],
        )
        .unwrap();
        let batch = PixelBatch::from_rows(&[
            vec![0.15, 0.25],
            vec![0.5, 0.5],
            vec![0.75, 0.35],
            vec![0.9, 0.1],
        ])
        .unwrap();
        let post = classical_posterior(&batch, &params, 1e-8).unwrap();

        let density = |x: &[f64], mu: &[f64], cov: &[f64]| -> f64 {
            let det = cov[0] * cov[3] - cov[1] * cov[2];
            let inv = [cov[3] / det, -cov[1] / det, -cov[2] / det, cov[0] / det];
            let dx = [x[0] - mu[0], x[1] - mu[1]];
            let q = dx[0] * (inv[0] * dx[0] + inv[1] * dx[1])
                + dx[1] * (inv[2] * dx[0] + inv[3] * dx[1]);
            (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
        };
        for i in 0..batch.n_samples() {
            let x = batch.row(i);
            let dens: Vec<f64> = (0..3)
                .map(|c| params.weights()[c] * density(x, params.mean(c), params.covariance(c)))
                .collect();
            let total: f64 = dens.iter().sum();
            for c in 0..3 {
                assert_abs_diff_eq!(post.row(i)[c], dens[c] / total, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_uses_batch_rows() {
        let batch = PixelBatch::from_rows(&[
            vec![0.1, 0.2],
            vec![0.3, 0.4],
            vec![0.5, 0.6],
            vec![0.7, 0.8],
        ])
        .unwrap();
        let a = init_mixture_params(&batch, 2, 9).unwrap();
        let b = init_mixture_params(&batch, 2, 9).unwrap();
        assert_eq!(a, b);
        for comp in 0..2 {
            let mu = a.mean(comp);
            let found = (0..batch.n_samples()).any(|i| batch.row(i) == mu);
            assert!(found, "mean {mu:?} must be a batch row");
            for c in 0..2 {
                let diag = a.covariance(comp)[c * 2 + c];
                assert!((0.05..=0.3).contains(&diag));
            }
        }
        assert_ne!(a.mean(0), a.mean(1), "sampled rows must be distinct");
    }

    #[test]
    fn em_requires_enough_samples() {
        let batch = PixelBatch::from_rows(&[vec![0.1], vec![0.9]]).unwrap();
        let config = RunConfig::new(3, 1);
        assert!(ConstrainedEm::new(&batch, &config).is_err());
    }
}
