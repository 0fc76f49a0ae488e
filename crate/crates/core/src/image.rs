//! Image-shaped containers and the flatten/unflatten bridge to pixel batches.

use crate::batch::PixelBatch;
use crate::error::{Error, Result};

/// A dense image with float intensities in [0, 1], row-major and
/// channel-interleaved (`data[(y * width + x) * channels + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "image data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "image intensity {v} outside [0, 1]"
            )));
        }
        Ok(ImageTensor { width, height, channels, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel vector of the pixel at (x, y).
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }
}

/// Flattens an image to an N x D batch: row i holds the channel vector of
/// pixel i in row-major scan order.
pub fn flatten_image(img: &ImageTensor) -> PixelBatch {
    PixelBatch::new(img.n_pixels(), img.channels(), img.data().to_vec())
        .expect("image data is always a valid batch")
}

/// Inverse of [`flatten_image`] given the original width and height.
pub fn unflatten_batch(batch: &PixelBatch, width: usize, height: usize) -> Result<ImageTensor> {
    if batch.n_samples() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "batch has {} rows, expected {width}x{height} = {}",
            batch.n_samples(),
            width * height
        )));
    }
    ImageTensor::new(width, height, batch.dim(), batch.samples().to_vec())
}

/// Per-pixel semantic class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl SegmentationMask {
    /// `k` bounds the label ids: every label must be < k.
    pub fn new(width: usize, height: usize, labels: Vec<u32>, k: usize) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} labels, expected {width}x{height}",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l as usize >= k) {
            return Err(Error::InvalidInput(format!("label {l} >= k = {k}")));
        }
        Ok(SegmentationMask { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Largest label present plus one (0 for an impossible empty mask).
    pub fn max_label_plus_one(&self) -> usize {
        self.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)
    }

    /// Applies a class permutation: label l becomes perm[l].
    pub fn relabel(&self, perm: &[usize]) -> Result<SegmentationMask> {
        let mut labels = Vec::with_capacity(self.labels.len());
        for &l in &self.labels {
            let l = l as usize;
            if l >= perm.len() {
                return Err(Error::InvalidInput(format!(
                    "label {l} outside permutation of length {}",
                    perm.len()
                )));
            }
            labels.push(perm[l] as u32);
        }
        Ok(SegmentationMask { width: self.width, height: self.height, labels })
    }
}

/// Per-pixel instance ids; 0 is background, every positive id one instance.
/// Ids are canonicalized to the contiguous set {0..M} on construction,
/// preserving the ascending order of the original ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    width: usize,
    height: usize,
    ids: Vec<u32>,
    n_instances: usize,
}

impl InstanceMask {
    pub fn new(width: usize, height: usize, raw_ids: Vec<u32>) -> Result<Self> {
        if raw_ids.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "instance mask has {} ids, expected {width}x{height}",
                raw_ids.len()
            )));
        }
        let mut distinct: Vec<u32> = raw_ids.iter().copied().filter(|&id| id != 0).collect();
        distinct.sort_unstable();
        distinct.dedup();
        let mut remap = std::collections::HashMap::with_capacity(distinct.len());
        for (i, &id) in distinct.iter().enumerate() {
            remap.insert(id, (i + 1) as u32);
        }
        let ids = raw_ids
            .iter()
            .map(|&id| if id == 0 { 0 } else { remap[&id] })
            .collect();
        Ok(InstanceMask { width, height, ids, n_instances: distinct.len() })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn n_instances(&self) -> usize {
        self.n_instances
    }
}
