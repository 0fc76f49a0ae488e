//! Seeded synthetic images with exact ground truth, used by the property
//! harness and the repeated-experiment protocol.

use crate::error::{Error, Result};
use crate::image::{ImageTensor, SegmentationMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionLayout {
    /// Round regions on a background class.
    Blob,
    /// Equal-width vertical bands.
    Stripes,
    /// Nearest-site cells from seeded site positions.
    Voronoi,
}

impl RegionLayout {
    pub fn parse(name: &str) -> Result<RegionLayout> {
        match name {
            "blob" => Ok(RegionLayout::Blob),
            "stripes" => Ok(RegionLayout::Stripes),
            "voronoi" => Ok(RegionLayout::Voronoi),
            other => Err(Error::InvalidInput(format!(
                "unknown layout '{other}' (expected blob|stripes|voronoi)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegionLayout::Blob => "blob",
            RegionLayout::Stripes => "stripes",
            RegionLayout::Voronoi => "voronoi",
        }
    }
}

/// Gaussian color model of one class: RGB mean and per-channel std.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassColor {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub layout: RegionLayout,
    /// Region geometry derives from this seed alone, so the same spec
    /// regenerates identical ground truth under different color seeds.
    pub layout_seed: u64,
    /// One color model per class.
    pub classes: Vec<ClassColor>,
    /// Fraction of pixels redrawn from the outlier color model (labels are
    /// unaffected).
    pub outlier_fraction: f64,
    pub outlier: ClassColor,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("synthetic image must be non-empty".into()));
        }
        if self.k < 2 {
            return Err(Error::InvalidInput("synthetic k must be >= 2".into()));
        }
        if self.classes.len() != self.k {
            return Err(Error::InvalidInput(format!(
                "expected {} class color models, got {}",
                self.k,
                self.classes.len()
            )));
        }
        for cc in self.classes.iter().chain(std::iter::once(&self.outlier)) {
            if cc.mean.iter().any(|m| !(0.0..=1.0).contains(m)) {
                return Err(Error::InvalidInput("class means must lie in [0, 1]".into()));
            }
            if cc.std.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::InvalidInput("class stds must be positive".into()));
            }
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidInput("outlier_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One standard normal draw (Box-Muller).
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn stripe_labels(spec: &SyntheticSpec) -> Vec<u32> {
    let mut labels = Vec::with_capacity(spec.width * spec.height);
    for _y in 0..spec.height {
        for x in 0..spec.width {
            let class = (x * spec.k / spec.width).min(spec.k - 1);
            labels.push(class as u32);
        }
    }
    labels
}

fn voronoi_labels(spec: &SyntheticSpec) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.layout_seed);
    let sites: Vec<(f64, f64)> = (0..spec.k)
        .map(|_| (rng.gen::<f64>() * spec.width as f64, rng.gen::<f64>() * spec.height as f64))
        .collect();
    let mut labels = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, &(sx, sy)) in sites.iter().enumerate() {
                let d = (px - sx) * (px - sx) + (py - sy) * (py - sy);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            labels.push(best as u32);
        }
    }
    labels
}

fn blob_labels(spec: &SyntheticSpec) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.layout_seed);
    let min_dim = spec.width.min(spec.height) as f64;
    // Class 0 is background; classes 1..k get one disk each. Centers are
    // re-drawn a few times to keep disks apart.
    let mut disks: Vec<(f64, f64, f64)> = Vec::new();
    for _ in 1..spec.k {
        let mut placed = (0.0, 0.0, 0.0);
        for _attempt in 0..100 {
            let r = rng.gen_range(0.12..0.22) * min_dim;
            let cx = rng.gen_range(0.2..0.8) * spec.width as f64;
            let cy = rng.gen_range(0.2..0.8) * spec.height as f64;
            placed = (cx, cy, r);
            let ok = disks.iter().all(|&(ox, oy, or)| {
                let d = ((cx - ox) * (cx - ox) + (cy - oy) * (cy - oy)).sqrt();
                d >= 0.9 * (r + or)
            });
            if ok {
                break;
            }
        }
        disks.push(placed);
    }
    let mut labels = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut label = 0u32;
            let mut best = f64::INFINITY;
            for (i, &(cx, cy, r)) in disks.iter().enumerate() {
                let d = ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt();
                if d <= r && d < best {
                    best = d;
                    label = (i + 1) as u32;
                }
            }
            labels.push(label);
        }
    }
    labels
}

/// Renders a synthetic RGB image and its ground-truth mask. Geometry comes
/// from `spec.layout_seed`; colors and outlier positions come from `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(ImageTensor, SegmentationMask)> {
    spec.validate()?;
    let labels = match spec.layout {
        RegionLayout::Stripes => stripe_labels(spec),
        RegionLayout::Voronoi => voronoi_labels(spec),
        RegionLayout::Blob => blob_labels(spec),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(labels.len() * 3);
    for &label in &labels {
        let is_outlier = spec.outlier_fraction > 0.0 && rng.gen::<f64>() < spec.outlier_fraction;
        let model = if is_outlier { &spec.outlier } else { &spec.classes[label as usize] };
        for c in 0..3 {
            let v = model.mean[c] + model.std[c] * standard_normal(&mut rng);
            data.push(v.clamp(0.0, 1.0));
        }
    }
    let img = ImageTensor::new(spec.width, spec.height, 3, data)?;
    let mask = SegmentationMask::new(spec.width, spec.height, labels, spec.k)?;
    Ok((img, mask))
}

/// Two well-separated classes plus a bright third intensity mode as
/// outliers; the stock fixture for stability and redundant-class studies.
pub fn two_class_outlier_spec(outlier_fraction: f64, layout_seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        width: 48,
        height: 48,
        k: 2,
        layout: RegionLayout::Blob,
        layout_seed,
        classes: vec![
            ClassColor { mean: [0.25, 0.3, 0.35], std: [0.035, 0.035, 0.035] },
            ClassColor { mean: [0.6, 0.5, 0.45], std: [0.035, 0.035, 0.035] },
        ],
        outlier_fraction,
        outlier: ClassColor { mean: [0.95, 0.95, 0.9], std: [0.02, 0.02, 0.02] },
    }
}

/// Three clearly separated color blobs; the stock training sanity fixture.
pub fn three_class_spec(width: usize, height: usize, layout_seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        width,
        height,
        k: 3,
        layout: RegionLayout::Stripes,
        layout_seed,
        classes: vec![
            ClassColor { mean: [0.15, 0.2, 0.7], std: [0.03, 0.03, 0.03] },
            ClassColor { mean: [0.2, 0.7, 0.2], std: [0.03, 0.03, 0.03] },
            ClassColor { mean: [0.75, 0.25, 0.2], std: [0.03, 0.03, 0.03] },
        ],
        outlier_fraction: 0.0,
        outlier: ClassColor { mean: [0.5, 0.5, 0.5], std: [0.05, 0.05, 0.05] },
    }
}
