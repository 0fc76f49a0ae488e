//! Compact per-pixel posterior network: a small multilayer perceptron with
//! tanh hidden layers and a softmax head, trained by gradient descent on the
//! negated penalized mixture objective while the mixture parameters follow
//! their closed-form updates.

use crate::batch::{
    compute_batch_stats, softmax_row_into, BatchStats, PixelBatch, PosteriorField,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image::{flatten_image, ImageTensor, SegmentationMask};
use crate::linalg::Cholesky;
use crate::mixture::{
    centralised_penalty, init_mixture_params_with_rng, m_step_alpha, m_step_mu_constrained,
    m_step_sigma, MixtureParams,
};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

const LN_2PI: f64 = 1.8378770664093453;
/// Hidden widths of the default architecture.
pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

/// One dense layer; `weights` is row-major `input_dim x output_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(input_dim: usize, output_dim: usize) -> Layer {
        Layer {
            input_dim,
            output_dim,
            weights: vec![0.0; input_dim * output_dim],
            bias: vec![0.0; output_dim],
        }
    }
}

/// All learnable parameters. Hidden layers use tanh; the final layer feeds
/// the softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<Layer>,
}

impl NetworkParams {
    /// Uniform Xavier-style initialization in
    /// [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))], biases zero.
    pub fn init(input_dim: usize, hidden: &[usize], k: usize, seed: u64) -> NetworkParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(input_dim, hidden, k, &mut rng)
    }

    pub fn init_with_rng(
        input_dim: usize,
        hidden: &[usize],
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> NetworkParams {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(k);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let weights = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            layers.push(Layer { input_dim: fan_in, output_dim: fan_out, weights, bias: vec![0.0; fan_out] });
        }
        NetworkParams { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<NetworkParams> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim != pair[1].input_dim {
                return Err(Error::DimensionMismatch("layer widths do not chain".into()));
            }
        }
        for l in &layers {
            if l.weights.len() != l.input_dim * l.output_dim || l.bias.len() != l.output_dim {
                return Err(Error::DimensionMismatch("layer buffer sizes".into()));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite network parameter".into()));
            }
        }
        Ok(NetworkParams { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    /// Output width K.
    pub fn k(&self) -> usize {
        self.layers.last().unwrap().output_dim
    }

    fn zeros_like(&self) -> Vec<Layer> {
        self.layers
            .iter()
            .map(|l| Layer::zeros(l.input_dim, l.output_dim))
            .collect()
    }

    fn apply_step(&mut self, grads: &[Layer], learning_rate: f64) {
        for (l, g) in self.layers.iter_mut().zip(grads) {
            for (w, gw) in l.weights.iter_mut().zip(&g.weights) {
                *w -= learning_rate * gw;
            }
            for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
                *b -= learning_rate * gb;
            }
        }
    }

    /// Forward pass for one sample; `activations[l]` receives the output of
    /// layer l (post-tanh for hidden layers, raw logits for the last).
    fn forward_sample(&self, x: &[f64], activations: &mut [Vec<f64>]) {
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let (head, tail) = activations.split_at_mut(li);
            let input: &[f64] = if li == 0 { x } else { &head[li - 1] };
            let out = &mut tail[0];
            for (c, o) in out.iter_mut().enumerate() {
                let mut acc = layer.bias[c];
                for (r, &inp) in input.iter().enumerate() {
                    acc += inp * layer.weights[r * layer.output_dim + c];
                }
                *o = if li == last { acc } else { acc.tanh() };
            }
        }
    }

    fn activation_buffers(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| vec![0.0; l.output_dim]).collect()
    }
}

/// Runs the network over every row of the batch and softmaxes the logits
/// into responsibilities.
pub fn forward(params: &NetworkParams, batch: &PixelBatch, gamma_floor: f64) -> Result<PosteriorField> {
    if batch.dim() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "batch dim {} vs network input {}",
            batch.dim(),
            params.input_dim()
        )));
    }
    let n = batch.n_samples();
    let k = params.k();
    let mut acts = params.activation_buffers();
    let mut gamma = vec![0.0; n * k];
    for i in 0..n {
        params.forward_sample(batch.row(i), &mut acts);
        softmax_row_into(acts.last().unwrap(), &mut gamma[i * k..(i + 1) * k], gamma_floor);
    }
    PosteriorField::new(n, k, gamma)
}

/// Negated penalized objective and its exact gradient with respect to the
/// network parameters. The mixture parameters are held constant, so the
/// penalty shifts the loss but contributes nothing to the gradient.
pub fn loss_and_grad(
    params: &NetworkParams,
    batch: &PixelBatch,
    frozen: &MixtureParams,
    stats: &BatchStats,
    lambda: f64,
    gamma_floor: f64,
) -> Result<(f64, Vec<Layer>)> {
    if batch.dim() != params.input_dim() {
        return Err(Error::DimensionMismatch("batch dim vs network input".into()));
    }
    if params.k() != frozen.k() || batch.dim() != frozen.dim() {
        return Err(Error::DimensionMismatch("network/mixture shape mismatch".into()));
    }
    let n = batch.n_samples();
    let k = params.k();
    let d = batch.dim();

    // Per-component constants and factors of the frozen mixture.
    let mut factors = Vec::with_capacity(k);
    let mut bases = Vec::with_capacity(k);
    for comp in 0..k {
        let chol = Cholesky::new(frozen.covariance(comp), d)
            .ok_or(Error::NotPositiveDefinite { component: comp })?;
        bases.push(
            frozen.weights()[comp].ln() - 0.5 * d as f64 * LN_2PI - 0.5 * chol.log_determinant(),
        );
        factors.push(chol);
    }

    let last = params.layers.len() - 1;
    let mut grads = params.zeros_like();
    let mut acts = params.activation_buffers();
    let mut probs = vec![0.0; k];
    let mut clamped = vec![0.0; k];
    let mut gamma = vec![0.0; k];
    let mut q = vec![0.0; k];
    let mut diff = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    // Gradient buffers, one per layer output plus one for the input side.
    let mut deltas: Vec<Vec<f64>> = params.layers.iter().map(|l| vec![0.0; l.output_dim]).collect();
    let mut likelihood = 0.0;

    for i in 0..n {
        let x = batch.row(i);
        params.forward_sample(x, &mut acts);
        let logits = acts[last].clone();

        // softmax -> clamp -> renormalize, keeping the stages for backprop.
        let maxv = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, &l) in probs.iter_mut().zip(&logits) {
            *p = (l - maxv).exp();
            sum += *p;
        }
        for p in probs.iter_mut() {
            *p /= sum;
        }
        let mut clamped_sum = 0.0;
        for (c, &p) in clamped.iter_mut().zip(&probs) {
            *c = p.max(gamma_floor);
            clamped_sum += *c;
        }
        for (g, &c) in gamma.iter_mut().zip(&clamped) {
            *g = c / clamped_sum;
        }

        for comp in 0..k {
            let mu = frozen.mean(comp);
            for c in 0..d {
                diff[c] = x[c] - mu[c];
            }
            let maha = factors[comp].mahalanobis_squared(&diff, &mut scratch);
            q[comp] = bases[comp] - 0.5 * maha;
            likelihood += gamma[comp] * (q[comp] - gamma[comp].ln());
        }

        // d(loss)/d(gamma_k) = ln(gamma_k) + 1 - q_k.
        let g_gamma: Vec<f64> = (0..k).map(|c| gamma[c].ln() + 1.0 - q[c]).collect();
        // Through the renormalization gamma = clamped / sum(clamped).
        let dot: f64 = g_gamma.iter().zip(&gamma).map(|(g, y)| g * y).sum();
        let g_clamped: Vec<f64> = g_gamma.iter().map(|g| (g - dot) / clamped_sum).collect();
        // Through the clamp (zero where the floor is active).
        let g_probs: Vec<f64> = g_clamped
            .iter()
            .zip(&probs)
            .map(|(g, &p)| if p > gamma_floor { *g } else { 0.0 })
            .collect();
        // Through the softmax.
        let dot_p: f64 = g_probs.iter().zip(&probs).map(|(g, p)| g * p).sum();
        for c in 0..k {
            deltas[last][c] = probs[c] * (g_probs[c] - dot_p);
        }

        // Backward through the dense stack.
        for li in (0..params.layers.len()).rev() {
            let layer = &params.layers[li];
            let input: &[f64] = if li == 0 { x } else { &acts[li - 1] };
            {
                let grad = &mut grads[li];
                for (r, &inp) in input.iter().enumerate() {
                    let row = &mut grad.weights[r * layer.output_dim..(r + 1) * layer.output_dim];
                    let drow = &deltas[li];
                    for (w, &dv) in row.iter_mut().zip(drow) {
                        *w += inp * dv;
                    }
                }
                for (b, &dv) in grad.bias.iter_mut().zip(&deltas[li]) {
                    *b += dv;
                }
            }
            if li > 0 {
                let (before, after) = deltas.split_at_mut(li);
                let upstream = &after[0];
                let down = &mut before[li - 1];
                for (r, dr) in down.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    let row = &layer.weights[r * layer.output_dim..(r + 1) * layer.output_dim];
                    for (w, &dv) in row.iter().zip(upstream) {
                        acc += w * dv;
                    }
                    // Hidden activations are tanh; h' = 1 - h^2.
                    let h = acts[li - 1][r];
                    *dr = acc * (1.0 - h * h);
                }
            }
        }
    }

    let loss = -(likelihood - lambda * centralised_penalty(frozen, stats));
    Ok((loss, grads))
}

/// Objective value, learning rate, and wall time of one training epoch.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub objective: f64,
    pub learning_rate: f64,
    pub wall_ms: f64,
}

/// Per-epoch training record. Equality compares the deterministic fields
/// (objective and learning rate); wall times are informational.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
}

impl PartialEq for TrainTrace {
    fn eq(&self, other: &Self) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.objective.to_bits() == b.objective.to_bits()
                    && a.learning_rate.to_bits() == b.learning_rate.to_bits()
            })
    }
}

impl TrainTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.objective).collect()
    }

    /// First epoch (1-based count) after which the objective changed by less
    /// than `tol` for `sustain` consecutive epochs, if that ever happened.
    pub fn epochs_to_convergence(&self, tol: f64, sustain: usize) -> Option<usize> {
        let obj = self.objectives();
        let mut streak = 0;
        for i in 1..obj.len() {
            if (obj[i] - obj[i - 1]).abs() < tol {
                streak += 1;
                if streak >= sustain {
                    return Some(i + 1);
                }
            } else {
                streak = 0;
            }
        }
        None
    }
}

/// Per-epoch image hook, e.g. data augmentation; receives a fresh seed.
pub type EpochTransform<'a> = &'a dyn Fn(&ImageTensor, u64) -> ImageTensor;

/// Trains the posterior network on the pooled pixels of the dataset.
///
/// Each epoch draws one seeded random pixel minibatch, recomputes the
/// observed minibatch moments, produces responsibilities by forward
/// propagation, applies the closed-form constrained mixture updates, and
/// then takes one gradient-descent step on the network against the
/// penalized objective with the mixture held fixed. The learning rate
/// decays multiplicatively per epoch.
pub fn train_dcgn(
    dataset: &[ImageTensor],
    config: &RunConfig,
) -> Result<(NetworkParams, MixtureParams, TrainTrace)> {
    train_dcgn_with(dataset, config, None)
}

pub fn train_dcgn_with(
    dataset: &[ImageTensor],
    config: &RunConfig,
    epoch_transform: Option<EpochTransform<'_>>,
) -> Result<(NetworkParams, MixtureParams, TrainTrace)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset must not be empty".into()));
    }
    let dim = dataset[0].channels();
    if dataset.iter().any(|img| img.channels() != dim) {
        return Err(Error::DimensionMismatch("images have differing channel counts".into()));
    }

    let base_pool = PixelBatch::concat(
        &dataset.iter().map(flatten_image).collect::<Vec<_>>(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mixture = init_mixture_params_with_rng(&base_pool, config.k, &mut rng)?;
    let mut network = NetworkParams::init_with_rng(dim, &DEFAULT_HIDDEN, config.k, &mut rng);

    let mut learning_rate = config.learning_rate;
    let mut trace = TrainTrace::default();
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let pool;
        let epoch_pool: &PixelBatch = match epoch_transform {
            Some(f) => {
                let images: Vec<ImageTensor> = dataset
                    .iter()
                    .map(|img| f(img, rng.gen::<u64>()))
                    .collect();
                pool = PixelBatch::concat(&images.iter().map(flatten_image).collect::<Vec<_>>())?;
                &pool
            }
            None => &base_pool,
        };

        let take = config.batch_size.min(epoch_pool.n_samples());
        let indices = rand::seq::index::sample(&mut rng, epoch_pool.n_samples(), take).into_vec();
        let minibatch = epoch_pool.select(&indices)?;
        let stats = compute_batch_stats(&minibatch, config.variance_floor);

        let gamma = forward(&network, &minibatch, config.gamma_floor)?;
        let alpha = m_step_alpha(&gamma);
        let means = m_step_mu_constrained(&gamma, &minibatch, &mixture, &stats, config.lambda)?;
        let covs = m_step_sigma(&gamma, &minibatch, &means, config.covariance_floor)?;
        mixture = MixtureParams::new(config.k, dim, alpha, means, covs)?;

        let (loss, grads) =
            loss_and_grad(&network, &minibatch, &mixture, &stats, config.lambda, config.gamma_floor)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        network.apply_step(&grads, learning_rate);

        trace.epochs.push(EpochStats {
            objective: -loss,
            learning_rate,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        learning_rate *= config.lr_decay;
    }
    Ok((network, mixture, trace))
}

/// Argmax segmentation of a full image; ties break to the lowest class.
pub fn predict(params: &NetworkParams, img: &ImageTensor, gamma_floor: f64) -> Result<SegmentationMask> {
    let batch = flatten_image(img);
    let posterior = forward(params, &batch, gamma_floor)?;
    SegmentationMask::new(img.width(), img.height(), posterior.argmax_labels(), params.k())
}
