//! Uniform access to the fitting methods so the repeated-experiment harness
//! and the degeneration protocol can drive any of them interchangeably.

use crate::batch::PixelBatch;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image::{flatten_image, ImageTensor, SegmentationMask};
use crate::mixture::{classical_posterior, fit_constrained_em, ConstrainedEm, MixtureParams};
use crate::network::{predict, train_dcgn, TrainTrace};
use crate::{baselines, network};

/// Covariance assigned to k-means centroids when stored as a mixture; any
/// shared isotropic value reproduces nearest-centroid labeling.
const KMEANS_SIGMA: f64 = 0.05;
/// Objective-change tolerance and sustain window that define convergence
/// for gradient-descent training.
pub const DCGN_CONVERGENCE_TOL: f64 = 1e-4;
pub const DCGN_CONVERGENCE_SUSTAIN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Posterior network trained against the penalized objective.
    Dcgn,
    /// Closed-form constrained EM.
    ConstrainedEm,
    /// Plain EM (penalty weight zero).
    Gmm,
    /// Minibatch k-means.
    Kmeans,
}

impl Method {
    pub fn parse(name: &str) -> Result<Method> {
        match name {
            "dcgn" => Ok(Method::Dcgn),
            "cgmm-em" => Ok(Method::ConstrainedEm),
            "gmm" => Ok(Method::Gmm),
            "kmeans" => Ok(Method::Kmeans),
            other => Err(Error::InvalidInput(format!(
                "unknown method '{other}' (expected dcgn|cgmm-em|gmm|kmeans)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Dcgn => "dcgn",
            Method::ConstrainedEm => "cgmm-em",
            Method::Gmm => "gmm",
            Method::Kmeans => "kmeans",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One image with its ground-truth semantic mask.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: ImageTensor,
    pub mask: SegmentationMask,
}

/// Result of fitting one method on a dataset.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// One predicted mask per dataset image, in order.
    pub masks: Vec<SegmentationMask>,
    /// Iterations actually run (EM) or epochs to sustained convergence
    /// (gradient descent; the full budget if never converged).
    pub epochs: usize,
    pub checkpoint: Checkpoint,
    /// Present for gradient-descent training only.
    pub trace: Option<TrainTrace>,
}

fn pooled_pixels(dataset: &[LabeledImage]) -> Result<PixelBatch> {
    let batches: Vec<PixelBatch> = dataset.iter().map(|li| flatten_image(&li.image)).collect();
    PixelBatch::concat(&batches)
}

fn mixture_masks(
    dataset: &[LabeledImage],
    params: &MixtureParams,
    gamma_floor: f64,
) -> Result<Vec<SegmentationMask>> {
    dataset
        .iter()
        .map(|li| {
            let batch = flatten_image(&li.image);
            let posterior = classical_posterior(&batch, params, gamma_floor)?;
            SegmentationMask::new(
                li.image.width(),
                li.image.height(),
                posterior.argmax_labels(),
                params.k(),
            )
        })
        .collect()
}

/// Fits `method` on the pooled pixels of the dataset and predicts a mask
/// for every image.
pub fn fit_and_predict(
    method: Method,
    dataset: &[LabeledImage],
    k: usize,
    config: &RunConfig,
) -> Result<FitOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset must not be empty".into()));
    }
    let mut cfg = config.clone();
    cfg.k = k;
    match method {
        Method::Dcgn => {
            let images: Vec<ImageTensor> = dataset.iter().map(|li| li.image.clone()).collect();
            let (net, mixture, trace) = train_dcgn(&images, &cfg)?;
            let masks = dataset
                .iter()
                .map(|li| predict(&net, &li.image, cfg.gamma_floor))
                .collect::<Result<Vec<_>>>()?;
            let epochs = trace
                .epochs_to_convergence(DCGN_CONVERGENCE_TOL, DCGN_CONVERGENCE_SUSTAIN)
                .unwrap_or(trace.epochs.len());
            Ok(FitOutcome {
                masks,
                epochs,
                checkpoint: Checkpoint { network: Some(net), mixture },
                trace: Some(trace),
            })
        }
        Method::ConstrainedEm => {
            let pool = pooled_pixels(dataset)?;
            let (params, _, trace) = fit_constrained_em(&pool, &cfg)?;
            let masks = mixture_masks(dataset, &params, cfg.gamma_floor)?;
            Ok(FitOutcome {
                masks,
                epochs: trace.len(),
                checkpoint: Checkpoint { network: None, mixture: params },
                trace: None,
            })
        }
        Method::Gmm => {
            cfg.lambda = 0.0;
            let pool = pooled_pixels(dataset)?;
            let (params, _, trace) = fit_constrained_em(&pool, &cfg)?;
            let masks = mixture_masks(dataset, &params, cfg.gamma_floor)?;
            Ok(FitOutcome {
                masks,
                epochs: trace.len(),
                checkpoint: Checkpoint { network: None, mixture: params },
                trace: None,
            })
        }
        Method::Kmeans => {
            let pool = pooled_pixels(dataset)?;
            let (centroids, _) = baselines::minibatch_kmeans(&pool, k, &cfg)?;
            let dim = pool.dim();
            let mut covs = vec![0.0; k * dim * dim];
            for comp in 0..k {
                for c in 0..dim {
                    covs[comp * dim * dim + c * dim + c] = KMEANS_SIGMA;
                }
            }
            let params =
                MixtureParams::new(k, dim, vec![1.0 / k as f64; k], centroids.clone(), covs)?;
            // Nearest-centroid labels per image (identical to the argmax of
            // the isotropic equal-weight posterior, including tie order).
            let masks = dataset
                .iter()
                .map(|li| {
                    let batch = flatten_image(&li.image);
                    let labels = (0..batch.n_samples())
                        .map(|i| nearest(batch.row(i), &centroids, k, dim) as u32)
                        .collect();
                    SegmentationMask::new(li.image.width(), li.image.height(), labels, k)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FitOutcome {
                masks,
                epochs: cfg.epochs,
                checkpoint: Checkpoint { network: None, mixture: params },
                trace: None,
            })
        }
    }
}

fn nearest(row: &[f64], centroids: &[f64], k: usize, d: usize) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for c in 0..k {
        let dist: f64 = row
            .iter()
            .zip(&centroids[c * d..(c + 1) * d])
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        if dist < best_dist {
            best_dist = dist;
            best = c;
        }
    }
    best
}

/// Segments one image with a stored model: forward + argmax when a network
/// is present, Bayes responsibilities + argmax otherwise.
pub fn segment_with_checkpoint(
    checkpoint: &Checkpoint,
    img: &ImageTensor,
    gamma_floor: f64,
) -> Result<SegmentationMask> {
    if img.channels() != checkpoint.dim() {
        return Err(Error::DimensionMismatch(format!(
            "image has {} channels but the model expects {}",
            img.channels(),
            checkpoint.dim()
        )));
    }
    match &checkpoint.network {
        Some(net) => network::predict(net, img, gamma_floor),
        None => {
            let batch = flatten_image(img);
            let posterior = classical_posterior(&batch, &checkpoint.mixture, gamma_floor)?;
            SegmentationMask::new(
                img.width(),
                img.height(),
                posterior.argmax_labels(),
                checkpoint.k(),
            )
        }
    }
}

/// Stepwise access used by tests that compare trajectories.
pub fn constrained_em_driver<'a>(
    batch: &'a PixelBatch,
    config: &RunConfig,
) -> Result<ConstrainedEm<'a>> {
    ConstrainedEm::new(batch, config)
}
