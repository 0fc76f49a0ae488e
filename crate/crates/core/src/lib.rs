//! Unsupervised pixel segmentation built on a Gaussian mixture objective
//! with a centralising constraint that pulls estimated component means
//! toward the observed minibatch mean.
//!
//! The toolkit offers two optimizers for the same penalized objective — a
//! closed-form constrained EM ([`mixture`]) and gradient descent through a
//! compact per-pixel posterior network ([`network`]) — plus conventional
//! baselines ([`baselines`]), the full evaluation stack ([`metrics`]),
//! detectors for degenerate solutions ([`degeneration`]), and a seeded
//! repeated-experiment harness with file I/O and a CLI ([`pipeline`]).

pub mod batch;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod degeneration;
pub mod error;
pub mod image;
pub mod linalg;
pub mod methods;
pub mod metrics;
pub mod mixture;
pub mod network;
pub mod pipeline;

pub use batch::{compute_batch_stats, softmax_rows, BatchStats, PixelBatch, PosteriorField};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use image::{flatten_image, unflatten_batch, ImageTensor, InstanceMask, SegmentationMask};
pub use mixture::{
    centralised_penalty, classical_posterior, constrained_objective, fit_constrained_em,
    gmm_log_likelihood, m_step_alpha, m_step_mu_constrained, m_step_sigma, ConstrainedEm,
    MixtureParams,
};
pub use network::{forward, loss_and_grad, predict, train_dcgn, NetworkParams, TrainTrace};
