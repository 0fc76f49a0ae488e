use cgmm::checkpoint::{self, Checkpoint};
use cgmm::config::RunConfig;
use cgmm::error::{Error, Result};
use cgmm::image::ImageTensor;
use cgmm::methods::{fit_and_predict, segment_with_checkpoint, LabeledImage, Method};
use cgmm::metrics;
use cgmm::pipeline::io;
use cgmm::pipeline::synthetic::{generate_synthetic, two_class_outlier_spec, SyntheticSpec};
use cgmm::pipeline::trials::{run_repeated_trials, MethodConfig};
use cgmm::pipeline::{augment, minmax_normalize};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cgmm", version, about = "Constrained Gaussian mixture segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic image and its ground-truth mask.
    Generate(GenerateArgs),
    /// Fit a model on one or more images and save a checkpoint.
    Fit(FitArgs),
    /// Segment an image with a saved checkpoint.
    Segment(SegmentArgs),
    /// Score a predicted mask against ground truth.
    Evaluate(EvaluateArgs),
    /// Run repeated seeded experiments and write trial/summary CSVs.
    Repeat(RepeatArgs),
    /// Summarize previously written trial CSVs.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// key = value file with synthetic-spec fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// blob | stripes | voronoi
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    layout_seed: Option<u64>,
    /// Semicolon-separated RGB triples, e.g. "0.2,0.2,0.2;0.8,0.8,0.8".
    #[arg(long)]
    class_means: Option<String>,
    #[arg(long)]
    class_stds: Option<String>,
    #[arg(long)]
    outlier_fraction: Option<f64>,
    #[arg(long)]
    outlier_mean: Option<String>,
    #[arg(long)]
    outlier_std: Option<String>,
    /// Color seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_image: PathBuf,
    #[arg(long)]
    out_mask: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// dcgn | cgmm-em | gmm | kmeans
    #[arg(long)]
    method: String,
    /// Training image(s); repeat the flag for several.
    #[arg(long = "image", required = true)]
    images: Vec<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// key = value file with run-config fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Skip per-channel min-max normalization of the inputs.
    #[arg(long)]
    no_normalize: bool,
    /// Augment each training image per epoch (gradient-descent mode only).
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    no_normalize: bool,
    /// Output mask PNG (class indices).
    #[arg(long)]
    out: PathBuf,
    /// Optional color overlay PNG.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Class count; inferred from the masks when omitted.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    pred_instances: Option<PathBuf>,
    #[arg(long)]
    gt_instances: Option<PathBuf>,
    /// Skip class alignment (when the prediction ids already match).
    #[arg(long)]
    no_align: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RepeatArgs {
    #[arg(long = "image", required = true)]
    images: Vec<PathBuf>,
    #[arg(long = "gt", required = true)]
    gts: Vec<PathBuf>,
    /// Comma-separated method list, e.g. "gmm,cgmm-em,kmeans".
    #[arg(long)]
    methods: String,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    out_trials: PathBuf,
    #[arg(long)]
    out_summary: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Trials CSV file(s); repeat the flag for several.
    #[arg(long = "trials", required = true)]
    trials: Vec<PathBuf>,
    #[arg(long)]
    out_summary: PathBuf,
}

fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn load_input_image(path: &Path, normalize: bool) -> Result<ImageTensor> {
    let img = io::load_image_png(path)
        .map_err(|e| Error::InvalidInput(format!("cannot load {}: {e}", path.display())))?;
    Ok(if normalize { minmax_normalize(&img) } else { img })
}

fn build_run_config(
    config_path: Option<&PathBuf>,
    k: Option<usize>,
    lambda: Option<f64>,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
) -> Result<RunConfig> {
    let mut config = RunConfig::new(2, 0);
    if let Some(path) = config_path {
        let pairs = io::read_key_values(&read_input(path)?)?;
        io::apply_run_config(&pairs, &mut config)?;
    }
    if let Some(k) = k {
        config.k = k;
    }
    if let Some(lambda) = lambda {
        config.lambda = lambda;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(epochs) = epochs {
        config.epochs = epochs;
    }
    if let Some(batch_size) = batch_size {
        config.batch_size = batch_size;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut spec: SyntheticSpec = two_class_outlier_spec(0.0, 0);
    if let Some(path) = &args.config {
        let pairs = io::read_key_values(&read_input(path)?)?;
        io::apply_synthetic_spec(&pairs, &mut spec)?;
    }
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut push = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            overrides.push((key.to_string(), v));
        }
    };
    push("width", args.width.map(|v| v.to_string()));
    push("height", args.height.map(|v| v.to_string()));
    push("k", args.k.map(|v| v.to_string()));
    push("layout", args.layout);
    push("layout_seed", args.layout_seed.map(|v| v.to_string()));
    push("class_means", args.class_means);
    push("class_stds", args.class_stds);
    push("outlier_fraction", args.outlier_fraction.map(|v| v.to_string()));
    push("outlier_mean", args.outlier_mean);
    push("outlier_std", args.outlier_std);
    io::apply_synthetic_spec(&overrides, &mut spec)?;

    let (img, mask) = generate_synthetic(&spec, args.seed)?;
    io::save_image_png(&img, &args.out_image)?;
    io::save_semantic_mask(&mask, &args.out_mask)?;
    println!(
        "generated {}x{} {} image with k={} at seed {}",
        spec.width,
        spec.height,
        spec.layout.name(),
        spec.k,
        args.seed
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let method = Method::parse(&args.method)?;
    let config = build_run_config(
        args.config.as_ref(),
        args.k,
        args.lambda,
        args.seed,
        args.epochs,
        args.batch_size,
    )?;
    let images: Vec<ImageTensor> = args
        .images
        .iter()
        .map(|p| load_input_image(p, !args.no_normalize))
        .collect::<Result<Vec<_>>>()?;

    let checkpoint = if method == Method::Dcgn && args.augment {
        let (net, mixture, _) =
            cgmm::network::train_dcgn_with(&images, &config, Some(&|img, seed| augment(img, seed)))?;
        Checkpoint { network: Some(net), mixture }
    } else {
        // fit_and_predict needs ground truth only for its mask outputs;
        // feed placeholder masks and keep the checkpoint.
        let dataset: Vec<LabeledImage> = images
            .iter()
            .map(|img| {
                let labels = vec![0u32; img.n_pixels()];
                Ok(LabeledImage {
                    image: img.clone(),
                    mask: cgmm::image::SegmentationMask::new(img.width(), img.height(), labels, 1)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        fit_and_predict(method, &dataset, config.k, &config)?.checkpoint
    };
    checkpoint::save(&checkpoint, &args.out)?;
    println!(
        "fitted {} with k={} lambda={} seed={} -> {}",
        method,
        config.k,
        config.lambda,
        config.seed,
        args.out.display()
    );
    Ok(())
}

fn cmd_segment(args: SegmentArgs) -> Result<()> {
    let ck = checkpoint::load(&args.checkpoint)
        .map_err(|e| Error::InvalidInput(format!("cannot load checkpoint: {e}")))?;
    let img = load_input_image(&args.image, !args.no_normalize)?;
    let mask = segment_with_checkpoint(&ck, &img, cgmm::config::DEFAULT_GAMMA_FLOOR)?;
    io::save_semantic_mask(&mask, &args.out)?;
    if let Some(overlay) = &args.overlay {
        io::save_overlay_png(Some(&img), &mask, overlay)?;
    }
    println!("segmented {} -> {}", args.image.display(), args.out.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    // Infer k from the raw pixel data before building typed masks.
    let peek = |path: &Path| -> Result<usize> {
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?
            .decode()
            .map_err(|e| Error::InvalidInput(format!("cannot decode {}: {e}", path.display())))?
            .to_luma8();
        Ok(img.pixels().map(|p| p.0[0] as usize + 1).max().unwrap_or(1))
    };
    let k = match args.k {
        Some(k) => k,
        None => peek(&args.pred)?.max(peek(&args.gt)?).max(2),
    };
    let pred = io::load_semantic_mask(&args.pred, k)
        .map_err(|e| Error::InvalidInput(format!("bad prediction mask: {e}")))?;
    let gt = io::load_semantic_mask(&args.gt, k)
        .map_err(|e| Error::InvalidInput(format!("bad ground-truth mask: {e}")))?;

    let scored = if args.no_align {
        pred.clone()
    } else {
        let perm = metrics::align_labels(&pred, &gt, k)?;
        pred.relabel(&perm)?
    };
    let mut scores = metrics::semantic_scores(&scored, &gt, k);
    if let (Some(pi), Some(gi)) = (&args.pred_instances, &args.gt_instances) {
        let pred_inst = io::load_instance_mask(pi)?;
        let gt_inst = io::load_instance_mask(gi)?;
        let (standard, paper) = metrics::aji(&gt_inst, &pred_inst, 1e-6)?;
        scores.aji_standard = Some(standard);
        scores.aji_paper = Some(paper);
    }

    let aji_std = scores.aji_standard.map(|v| v.to_string()).unwrap_or_default();
    let aji_paper = scores.aji_paper.map(|v| v.to_string()).unwrap_or_default();
    let text = format!(
        "precision,recall,dice,aji_standard,aji_paper,nmi,mi\n{},{},{},{},{},{},{}\n",
        scores.precision, scores.recall, scores.dice, aji_std, aji_paper, scores.nmi, scores.mi
    );
    io::write_text(&args.out, &text)?;
    println!(
        "dice={:.4} precision={:.4} recall={:.4} nmi={:.4}",
        scores.dice, scores.precision, scores.recall, scores.nmi
    );
    Ok(())
}

fn cmd_repeat(args: RepeatArgs) -> Result<()> {
    if args.images.len() != args.gts.len() {
        return Err(Error::InvalidInput(format!(
            "{} images but {} ground-truth masks",
            args.images.len(),
            args.gts.len()
        )));
    }
    let config = build_run_config(
        args.config.as_ref(),
        args.k,
        args.lambda,
        args.seed,
        args.epochs,
        args.batch_size,
    )?;
    let mut dataset = Vec::new();
    for (img_path, gt_path) in args.images.iter().zip(&args.gts) {
        let image = load_input_image(img_path, !args.no_normalize)?;
        let mask = io::load_semantic_mask(gt_path, config.k)
            .map_err(|e| Error::InvalidInput(format!("bad mask {}: {e}", gt_path.display())))?;
        if mask.width() != image.width() || mask.height() != image.height() {
            return Err(Error::InvalidInput(format!(
                "mask {} does not match its image size",
                gt_path.display()
            )));
        }
        dataset.push(LabeledImage { image, mask });
    }
    let methods: Vec<MethodConfig> = args
        .methods
        .split(',')
        .map(|name| {
            Ok(MethodConfig {
                method: Method::parse(name.trim())?,
                k: config.k,
                lambda: config.lambda,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let outcome = run_repeated_trials(&dataset, &methods, &config, args.repeats)?;
    io::write_text(&args.out_trials, &io::trials_csv(&outcome.trials))?;
    io::write_text(&args.out_summary, &io::summary_csv(&outcome))?;
    for s in &outcome.summaries {
        println!(
            "{}: dice {:.4} +/- {:.4} (max {:.4}), collapse {}/{}, empty {}/{}, {}",
            s.method,
            s.mean_dice,
            s.std_dice,
            s.max_dice,
            s.collapse_count,
            s.runs,
            s.empty_class_count,
            s.runs,
            if s.unstable { "UNSTABLE" } else { "stable" }
        );
    }
    let wall: f64 = outcome.trials.iter().map(|t| t.wall_ms).sum();
    eprintln!("total fit time {:.0} ms across {} trials", wall, outcome.trials.len());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &args.trials {
        rows.extend(io::parse_trials_csv(&read_input(path)?)?);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("no trial rows found".into()));
    }
    let summaries = io::summarize_trial_rows(&rows)?;

    // Pairwise signed-rank tests over per-trial Dice, paired by run index.
    let mut wilcoxon = Vec::new();
    for i in 0..summaries.len() {
        for j in (i + 1)..summaries.len() {
            let a: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == summaries[i].method.name())
                .map(|r| r.dice)
                .collect();
            let b: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == summaries[j].method.name())
                .map(|r| r.dice)
                .collect();
            if a.len() == b.len() && !a.is_empty() {
                wilcoxon.push((
                    summaries[i].method,
                    summaries[j].method,
                    metrics::wilcoxon_signed_rank(&a, &b)?,
                ));
            }
        }
    }
    let outcome = cgmm::pipeline::trials::TrialsOutcome { trials: Vec::new(), summaries, wilcoxon };
    io::write_text(&args.out_summary, &io::summary_csv(&outcome))?;

    println!("method      k  runs  dice(mean+/-std)    max     collapse  empty  stability");
    for s in &outcome.summaries {
        println!(
            "{:<10} {:>2} {:>5}  {:.4} +/- {:.4}  {:.4}  {:>3}/{:<4} {:>3}/{:<4} {}",
            s.method.name(),
            s.k,
            s.runs,
            s.mean_dice,
            s.std_dice,
            s.max_dice,
            s.collapse_count,
            s.runs,
            s.empty_class_count,
            s.runs,
            if s.unstable { "unstable" } else { "stable" }
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Segment(args) => cmd_segment(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Repeat(args) => cmd_repeat(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_invalid_input() { 2 } else { 1 })
        }
    }
}
