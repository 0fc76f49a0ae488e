//! File formats: PNG images and masks, CSV reports, overlays, and the
//! line-based `key = value` configuration files.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, InstanceMask, SegmentationMask};
use crate::pipeline::synthetic::{ClassColor, RegionLayout, SyntheticSpec};
use crate::pipeline::trials::{MethodSummary, TrialReport, TrialsOutcome};
use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use std::fmt::Write as _;
use std::path::Path;

/// Fixed per-class overlay palette (wraps past 12 classes).
pub const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [145, 30, 180],
    [70, 240, 240],
    [245, 130, 48],
    [240, 50, 230],
    [60, 190, 195],
    [170, 110, 40],
    [128, 128, 128],
    [255, 250, 200],
];

pub fn load_image_png(path: &Path) -> Result<ImageTensor> {
    let img = image::ImageReader::open(path)?.decode()?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().flat_map(|p| p.0).map(|v| v as f64 / 255.0).collect();
    ImageTensor::new(w, h, 3, data)
}

pub fn save_image_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    match img.channels() {
        3 => {
            let buf: Vec<u8> = img.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
            RgbImage::from_raw(w, h, buf)
                .expect("sized buffer")
                .save(path)?;
        }
        1 => {
            let buf: Vec<u8> = img.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
            GrayImage::from_raw(w, h, buf)
                .expect("sized buffer")
                .save(path)?;
        }
        c => {
            return Err(Error::InvalidInput(format!("cannot encode {c}-channel image as PNG")));
        }
    }
    Ok(())
}

/// Semantic masks are 8-bit grayscale PNGs holding raw class indices.
pub fn load_semantic_mask(path: &Path, k: usize) -> Result<SegmentationMask> {
    let img = image::ImageReader::open(path)?.decode()?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels = img.pixels().map(|p| p.0[0] as u32).collect();
    SegmentationMask::new(w, h, labels, k)
}

pub fn save_semantic_mask(mask: &SegmentationMask, path: &Path) -> Result<()> {
    if mask.max_label_plus_one() > 256 {
        return Err(Error::InvalidInput("semantic PNG masks support at most 256 classes".into()));
    }
    let buf: Vec<u8> = mask.labels().iter().map(|&l| l as u8).collect();
    GrayImage::from_raw(mask.width() as u32, mask.height() as u32, buf)
        .expect("sized buffer")
        .save(path)?;
    Ok(())
}

/// Instance masks are 16-bit grayscale PNGs, id 0 meaning background.
pub fn load_instance_mask(path: &Path) -> Result<InstanceMask> {
    let img = image::ImageReader::open(path)?.decode()?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let ids = img.pixels().map(|p| p.0[0] as u32).collect();
    InstanceMask::new(w, h, ids)
}

pub fn save_instance_mask(mask: &InstanceMask, path: &Path) -> Result<()> {
    if mask.ids().iter().any(|&id| id > u16::MAX as u32) {
        return Err(Error::InvalidInput("instance PNG masks support at most 65535 instances".into()));
    }
    let buf: Vec<u16> = mask.ids().iter().map(|&id| id as u16).collect();
    ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(mask.width() as u32, mask.height() as u32, buf)
        .expect("sized buffer")
        .save(path)?;
    Ok(())
}

/// Writes the mask in palette colors, blended onto the image when given.
pub fn save_overlay_png(
    image: Option<&ImageTensor>,
    mask: &SegmentationMask,
    path: &Path,
) -> Result<()> {
    if let Some(img) = image {
        if img.width() != mask.width() || img.height() != mask.height() || img.channels() != 3 {
            return Err(Error::DimensionMismatch("overlay image/mask shape mismatch".into()));
        }
    }
    let mut buf = Vec::with_capacity(mask.n_pixels() * 3);
    for (i, &label) in mask.labels().iter().enumerate() {
        let color = PALETTE[label as usize % PALETTE.len()];
        for c in 0..3 {
            let v = match image {
                Some(img) => {
                    0.5 * img.data()[i * 3 + c] * 255.0 + 0.5 * color[c] as f64
                }
                None => color[c] as f64,
            };
            buf.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    RgbImage::from_raw(mask.width() as u32, mask.height() as u32, buf)
        .expect("sized buffer")
        .save(path)?;
    Ok(())
}

pub const TRIALS_CSV_HEADER: &str = "run_id,seed,method,k,lambda,precision,recall,dice,aji_standard,aji_paper,nmi,mi,collapse,empty_classes,epochs,wall_ms";

fn option_cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Serializes trial rows. The wall_ms column is written as 0 so outputs
/// stay byte-for-byte reproducible; measured times live in the in-memory
/// reports.
pub fn trials_csv(trials: &[TrialReport]) -> String {
    let mut out = String::from(TRIALS_CSV_HEADER);
    out.push('\n');
    for t in trials {
        let empty = t
            .degeneration
            .empty_classes
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join("|");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},0",
            t.run_id,
            t.seed,
            t.method,
            t.k,
            t.lambda,
            t.scores.precision,
            t.scores.recall,
            t.scores.dice,
            option_cell(t.scores.aji_standard),
            option_cell(t.scores.aji_paper),
            t.scores.nmi,
            t.scores.mi,
            t.degeneration.collapse,
            empty,
            t.epochs,
        );
    }
    out
}

pub const SUMMARY_CSV_HEADER: &str =
    "method,k,lambda,runs,mean_dice,std_dice,max_dice,mean_nmi,collapse_count,empty_class_count,unstable";

pub fn summary_csv(outcome: &TrialsOutcome) -> String {
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    for s in &outcome.summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.method,
            s.k,
            s.lambda,
            s.runs,
            s.mean_dice,
            s.std_dice,
            s.max_dice,
            s.mean_nmi,
            s.collapse_count,
            s.empty_class_count,
            s.unstable,
        );
    }
    if !outcome.wilcoxon.is_empty() {
        out.push('\n');
        out.push_str("method_a,method_b,w_statistic,p_two_sided,n_effective,test\n");
        for (a, b, w) in &outcome.wilcoxon {
            let test = match w.method {
                crate::metrics::WilcoxonMethod::Exact => "exact",
                crate::metrics::WilcoxonMethod::NormalApproximation => "normal-approximation",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                a, b, w.statistic, w.p_two_sided, w.n_effective, test
            );
        }
    }
    out
}

/// One parsed row of a trials CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub run_id: String,
    pub seed: u64,
    pub method: String,
    pub k: usize,
    pub lambda: f64,
    pub precision: f64,
    pub recall: f64,
    pub dice: f64,
    pub aji_standard: Option<f64>,
    pub aji_paper: Option<f64>,
    pub nmi: f64,
    pub mi: f64,
    pub collapse: bool,
    pub empty_classes: Vec<u32>,
    pub epochs: usize,
    pub wall_ms: f64,
}

fn parse_field<T: std::str::FromStr>(value: &str, name: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad {name} value '{value}' in trials CSV")))
}

pub fn parse_trials_csv(text: &str) -> Result<Vec<TrialRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRIALS_CSV_HEADER => {}
        other => {
            return Err(Error::InvalidInput(format!(
                "unexpected trials CSV header: {:?}",
                other.unwrap_or_default()
            )))
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 16 {
            return Err(Error::InvalidInput(format!(
                "expected 16 cells, got {} in line '{line}'",
                cells.len()
            )));
        }
        let empty_classes = if cells[13].is_empty() {
            Vec::new()
        } else {
            cells[13]
                .split('|')
                .map(|c| parse_field::<u32>(c, "empty_classes"))
                .collect::<Result<Vec<_>>>()?
        };
        rows.push(TrialRow {
            run_id: cells[0].to_string(),
            seed: parse_field(cells[1], "seed")?,
            method: cells[2].to_string(),
            k: parse_field(cells[3], "k")?,
            lambda: parse_field(cells[4], "lambda")?,
            precision: parse_field(cells[5], "precision")?,
            recall: parse_field(cells[6], "recall")?,
            dice: parse_field(cells[7], "dice")?,
            aji_standard: if cells[8].is_empty() { None } else { Some(parse_field(cells[8], "aji_standard")?) },
            aji_paper: if cells[9].is_empty() { None } else { Some(parse_field(cells[9], "aji_paper")?) },
            nmi: parse_field(cells[10], "nmi")?,
            mi: parse_field(cells[11], "mi")?,
            collapse: parse_field(cells[12], "collapse")?,
            empty_classes,
            epochs: parse_field(cells[14], "epochs")?,
            wall_ms: parse_field(cells[15], "wall_ms")?,
        });
    }
    Ok(rows)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Parses a `key = value` configuration file; `#` starts a comment.
pub fn read_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::InvalidInput(format!(
                "config line {} is not 'key = value': '{raw}'",
                lineno + 1
            )));
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn parse_config_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad value '{value}' for config key '{key}'")))
}

/// Applies `key = value` pairs onto a run configuration. Unknown keys are
/// rejected so typos surface immediately.
pub fn apply_run_config(pairs: &[(String, String)], config: &mut RunConfig) -> Result<()> {
    for (key, value) in pairs {
        match key.as_str() {
            "k" => config.k = parse_config_value(key, value)?,
            "lambda" => config.lambda = parse_config_value(key, value)?,
            "learning_rate" => config.learning_rate = parse_config_value(key, value)?,
            "lr_decay" => config.lr_decay = parse_config_value(key, value)?,
            "epochs" => config.epochs = parse_config_value(key, value)?,
            "batch_size" => config.batch_size = parse_config_value(key, value)?,
            "seed" => config.seed = parse_config_value(key, value)?,
            "gamma_floor" => config.gamma_floor = parse_config_value(key, value)?,
            "covariance_floor" => config.covariance_floor = parse_config_value(key, value)?,
            "variance_floor" => config.variance_floor = parse_config_value(key, value)?,
            other => {
                return Err(Error::InvalidInput(format!("unknown run config key '{other}'")));
            }
        }
    }
    Ok(())
}

fn parse_triple(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidInput(format!(
            "key '{key}' expects three comma-separated values, got '{value}'"
        )));
    }
    Ok([
        parse_config_value(key, parts[0])?,
        parse_config_value(key, parts[1])?,
        parse_config_value(key, parts[2])?,
    ])
}

fn parse_triples(key: &str, value: &str) -> Result<Vec<[f64; 3]>> {
    value.split(';').map(|t| parse_triple(key, t)).collect()
}

/// Applies `key = value` pairs onto a synthetic spec. Class color lists are
/// semicolon-separated RGB triples.
pub fn apply_synthetic_spec(pairs: &[(String, String)], spec: &mut SyntheticSpec) -> Result<()> {
    for (key, value) in pairs {
        match key.as_str() {
            "width" => spec.width = parse_config_value(key, value)?,
            "height" => spec.height = parse_config_value(key, value)?,
            "k" => spec.k = parse_config_value(key, value)?,
            "layout" => spec.layout = RegionLayout::parse(value)?,
            "layout_seed" => spec.layout_seed = parse_config_value(key, value)?,
            "class_means" => {
                let means = parse_triples(key, value)?;
                resize_classes(&mut spec.classes, means.len());
                for (cc, m) in spec.classes.iter_mut().zip(means) {
                    cc.mean = m;
                }
            }
            "class_stds" => {
                let stds = parse_triples(key, value)?;
                resize_classes(&mut spec.classes, stds.len());
                for (cc, s) in spec.classes.iter_mut().zip(stds) {
                    cc.std = s;
                }
            }
            "outlier_fraction" => spec.outlier_fraction = parse_config_value(key, value)?,
            "outlier_mean" => spec.outlier.mean = parse_triple(key, value)?,
            "outlier_std" => spec.outlier.std = parse_triple(key, value)?,
            other => {
                return Err(Error::InvalidInput(format!("unknown synthetic config key '{other}'")));
            }
        }
    }
    Ok(())
}

fn resize_classes(classes: &mut Vec<ClassColor>, len: usize) {
    classes.resize(len, ClassColor { mean: [0.5, 0.5, 0.5], std: [0.05, 0.05, 0.05] });
}

/// Summary rows recomputed from parsed trial rows, grouped by
/// (method, k, lambda) in first-appearance order.
pub fn summarize_trial_rows(rows: &[TrialRow]) -> Result<Vec<MethodSummary>> {
    use crate::degeneration::{assess_instability, INSTABILITY_THRESHOLD};
    use crate::methods::Method;
    use crate::pipeline::trials::mean_and_population_std;

    let mut groups: Vec<((String, usize, u64), Vec<&TrialRow>)> = Vec::new();
    for row in rows {
        let key = (row.method.clone(), row.k, row.lambda.to_bits());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(row),
            None => groups.push((key, vec![row])),
        }
    }
    let mut summaries = Vec::new();
    for ((method, k, lambda_bits), rows) in groups {
        let dice: Vec<f64> = rows.iter().map(|r| r.dice).collect();
        let (mean_dice, std_dice) = mean_and_population_std(&dice);
        summaries.push(MethodSummary {
            method: Method::parse(&method)?,
            k,
            lambda: f64::from_bits(lambda_bits),
            runs: rows.len(),
            mean_dice,
            std_dice,
            max_dice: dice.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_nmi: rows.iter().map(|r| r.nmi).sum::<f64>() / rows.len() as f64,
            collapse_count: rows.iter().filter(|r| r.collapse).count(),
            empty_class_count: rows.iter().filter(|r| !r.empty_classes.is_empty()).count(),
            unstable: if dice.len() >= 2 {
                assess_instability(&dice, INSTABILITY_THRESHOLD)?
            } else {
                false
            },
        });
    }
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degeneration::DegenerationReport;
    use crate::methods::Method;
    use crate::metrics::ScoreSet;

    fn sample_trial(r: usize) -> TrialReport {
        TrialReport {
            run_id: format!("gmm-r{r}"),
            seed: 100 + r as u64,
            method: Method::Gmm,
            k: 2,
            lambda: 0.0,
            scores: ScoreSet {
                precision: 0.9,
                recall: 0.8,
                dice: 0.85,
                aji_standard: None,
                aji_paper: Some(0.5),
                nmi: 0.4,
                mi: 0.3,
            },
            degeneration: DegenerationReport { collapse: r == 1, empty_classes: vec![1] },
            epochs: 17,
            wall_ms: 123.4,
            per_image_dice: vec![0.85],
        }
    }

    #[test]
    fn trials_csv_round_trips() {
        let trials = vec![sample_trial(0), sample_trial(1)];
        let text = trials_csv(&trials);
        assert!(text.starts_with(TRIALS_CSV_HEADER));
        let rows = parse_trials_csv(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].run_id, "gmm-r0");
        assert_eq!(rows[0].aji_standard, None);
        assert_eq!(rows[0].aji_paper, Some(0.5));
        assert_eq!(rows[1].collapse, true);
        assert_eq!(rows[0].empty_classes, vec![1]);
        // Deterministic output: wall_ms is always 0 in the file.
        assert_eq!(rows[0].wall_ms, 0.0);
    }

    #[test]
    fn key_value_parsing() {
        let text = "k = 3\nlambda = 0.005 # best setting\n\n# comment line\nseed=9\n";
        let pairs = read_key_values(text).unwrap();
        assert_eq!(pairs.len(), 3);
        let mut config = RunConfig::new(2, 0);
        apply_run_config(&pairs, &mut config).unwrap();
        assert_eq!(config.k, 3);
        assert_eq!(config.lambda, 0.005);
        assert_eq!(config.seed, 9);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let pairs = read_key_values("kay = 3\n").unwrap();
        let mut config = RunConfig::new(2, 0);
        assert!(apply_run_config(&pairs, &mut config).is_err());
    }

    #[test]
    fn synthetic_spec_from_key_values() {
        let text = "width = 32\nheight = 16\nk = 2\nlayout = stripes\nlayout_seed = 4\n\
                    class_means = 0.2,0.2,0.2; 0.8,0.8,0.8\nclass_stds = 0.01,0.01,0.01; 0.02,0.02,0.02\n\
                    outlier_fraction = 0.05\noutlier_mean = 0.9,0.9,0.9\noutlier_std = 0.01,0.01,0.01\n";
        let pairs = read_key_values(text).unwrap();
        let mut spec = crate::pipeline::synthetic::two_class_outlier_spec(0.0, 0);
        apply_synthetic_spec(&pairs, &mut spec).unwrap();
        assert_eq!(spec.width, 32);
        assert_eq!(spec.layout, RegionLayout::Stripes);
        assert_eq!(spec.classes.len(), 2);
        assert_eq!(spec.classes[1].mean, [0.8, 0.8, 0.8]);
        assert_eq!(spec.outlier_fraction, 0.05);
        spec.validate().unwrap();
    }

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::new(
            3,
            2,
            3,
            (0..18).map(|i| (i * 14) as f64 / 255.0).collect(),
        )
        .unwrap();
        let img_path = dir.path().join("img.png");
        save_image_png(&img, &img_path).unwrap();
        let back = load_image_png(&img_path).unwrap();
        assert_eq!(back.width(), 3);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 0.5 / 255.0, "{a} vs {b}");
        }

        let mask = SegmentationMask::new(3, 2, vec![0, 1, 2, 2, 1, 0], 3).unwrap();
        let mask_path = dir.path().join("mask.png");
        save_semantic_mask(&mask, &mask_path).unwrap();
        assert_eq!(load_semantic_mask(&mask_path, 3).unwrap(), mask);

        let inst = InstanceMask::new(3, 2, vec![0, 300, 300, 0, 70000 % 65536, 1]).unwrap();
        let inst_path = dir.path().join("inst.png");
        save_instance_mask(&inst, &inst_path).unwrap();
        assert_eq!(load_instance_mask(&inst_path).unwrap(), inst);

        let overlay_path = dir.path().join("overlay.png");
        save_overlay_png(Some(&img), &mask, &overlay_path).unwrap();
        assert!(overlay_path.exists());
    }
}
