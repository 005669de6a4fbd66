//! `ostk` — object-based style transfer from the command line.
//!
//! Subcommands: `stylize` (the full pipeline), `segment` (masks only, for
//! debugging selectors), `version`. Exit codes: 0 success, 2 usage error,
//! 3 input/file error, 4 no target matched in strict mode, 5 numerical
//! failure.

mod config;
mod fetch;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use config::{CliError, FlagOverrides};
use ostk_core::imaging::{self, ResizeMode};
use ostk_core::net::{self, NetworkError, TapSpec};
use ostk_core::pipeline::{self, PipelineError};
use ostk_core::styletransfer::{InitMode, StyleError};

#[derive(Parser)]
#[command(
    name = "ostk",
    version,
    about = "Object-based neural style transfer with a single segmentation network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline: segment, stylize, composite.
    Stylize(Box<StylizeArgs>),
    /// Segment only: write per-detection masks and a detection summary.
    Segment(SegmentArgs),
    /// Print the version.
    Version,
}

#[derive(Args)]
struct StylizeArgs {
    /// Content image (PNG or JPEG).
    #[arg(long)]
    content: Option<String>,
    /// Style image; repeatable, pairs positionally with --target.
    #[arg(long = "style")]
    styles: Vec<String>,
    /// Target selector (`class`, `index`, or `class:ordinal`); repeatable.
    #[arg(long = "target")]
    targets: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Weights file (falls back to config, then $OSTK_WEIGHTS).
    #[arg(long)]
    weights: Option<String>,
    /// TOML config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Content weight.
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Style weight.
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    /// Optimization iterations.
    #[arg(long = "iters")]
    iterations: Option<usize>,
    /// Optimizer step size.
    #[arg(long = "step", allow_negative_numbers = true)]
    step_size: Option<f64>,
    /// Working-resolution long side before stride rounding.
    #[arg(long)]
    size: Option<usize>,
    /// Seed for noise init and reproducibility.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker cap for concurrent stylization runs (1 = deterministic mode).
    #[arg(long)]
    threads: Option<usize>,
    /// Feather radius in pixels (0 = hard masks).
    #[arg(long)]
    feather: Option<usize>,
    /// Segmentation confidence threshold.
    #[arg(long = "conf-threshold", allow_negative_numbers = true)]
    conf_threshold: Option<f64>,
    /// Pastiche initialization.
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Skip jobs whose selector matches nothing instead of failing.
    #[arg(long = "skip-unmatched")]
    skip_unmatched: bool,
    /// Allow fetching weights from an http(s) URL.
    #[arg(long = "fetch-weights")]
    fetch_weights: bool,
    /// Progress log cadence in iterations.
    #[arg(long = "log-every")]
    log_every: Option<usize>,
    /// Compute device (only `cpu` in this build).
    #[arg(long)]
    device: Option<String>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum InitArg {
    Content,
    Noise,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    content: String,
    #[arg(long)]
    out: String,
    #[arg(long)]
    weights: Option<String>,
    #[arg(long = "conf-threshold", allow_negative_numbers = true)]
    conf_threshold: Option<f64>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long = "fetch-weights")]
    fetch_weights: bool,
}

fn main() {
    let code = real_main();
    std::process::exit(code);
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    let result = match cli.command {
        Command::Stylize(args) => cmd_stylize(*args),
        Command::Segment(args) => cmd_segment(args),
        Command::Version => {
            println!("ostk {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let mut stderr = std::io::stderr();
            let _ = writeln!(stderr, "error: {}", e.message());
            if matches!(e, CliError::Usage(_)) {
                let _ = writeln!(stderr, "\n{}", Cli::command().render_usage());
            }
            e.exit_code()
        }
    }
}

fn cmd_stylize(args: StylizeArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(path) => config::load_file_config(path)?,
        None => config::FileConfig::default(),
    };
    let flags = FlagOverrides {
        content: args.content,
        styles: args.styles,
        targets: args.targets,
        out: args.out,
        weights: args.weights,
        alpha: args.alpha,
        beta: args.beta,
        iterations: args.iterations,
        step_size: args.step_size,
        size: args.size,
        seed: args.seed,
        threads: args.threads,
        feather: args.feather,
        conf_threshold: args.conf_threshold,
        init: args.init.map(|i| match i {
            InitArg::Content => InitMode::ContentClone,
            InitArg::Noise => InitMode::Noise,
        }),
        skip_unmatched: args.skip_unmatched,
        log_every: args.log_every,
        device: args.device,
    };
    let mut cfg = config::resolve(file, flags)?;
    cfg.weights = fetch::resolve_weights_source(&cfg.weights, args.fetch_weights)?;

    let model = load_model(&cfg.weights, cfg.tap_spec())?;
    let log_sink = |run: usize, style: &str, e: &ostk_core::styletransfer::ProgressEvent| {
        eprintln!(
            "[run {run} {style}] iter {}/{} content={:.6e} style={:.6e} total={:.6e}",
            e.iteration, e.total_iterations, e.content_loss, e.style_loss, e.total_loss
        );
    };
    let manifest =
        pipeline::run_with_progress(&model, &cfg, Some(&log_sink)).map_err(map_pipeline_error)?;

    println!(
        "wrote {} ({} jobs, {} detections) in {:.1} ms",
        PathBuf::from(&cfg.out).join(&manifest.final_image).display(),
        manifest.jobs.len(),
        manifest.detections.len(),
        manifest.timings.total_ms
    );
    Ok(())
}

fn cmd_segment(args: SegmentArgs) -> Result<(), CliError> {
    let conf = args.conf_threshold.unwrap_or(0.5);
    if !(conf > 0.0 && conf < 1.0) {
        return Err(CliError::Usage(format!(
            "--conf-threshold must be in (0, 1), got {conf}"
        )));
    }
    let size = args.size.unwrap_or(imaging::DEFAULT_LONG_SIDE);
    if size < 32 {
        return Err(CliError::Usage(format!("--size must be at least 32, got {size}")));
    }
    let weights = match args.weights.or_else(|| std::env::var("OSTK_WEIGHTS").ok()) {
        Some(w) if !w.is_empty() => w,
        _ => {
            return Err(CliError::Usage(
                "no weights given: use --weights or $OSTK_WEIGHTS".into(),
            ))
        }
    };
    let weights = fetch::resolve_weights_source(&weights, args.fetch_weights)?;
    let model = load_model(&weights, TapSpec::default())?;

    let content = imaging::load_image(&args.content).map_err(|e| CliError::Input(e.to_string()))?;
    let (wh, ww) =
        imaging::working_size(content.height(), content.width(), size, model.input_stride());
    let resized = imaging::resize(&content, wh, ww, ResizeMode::Bilinear)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let detections = model
        .segment(&resized, conf)
        .map_err(|e| CliError::Input(e.to_string()))?;

    let out = PathBuf::from(&args.out);
    std::fs::create_dir_all(&out).map_err(|e| CliError::Input(e.to_string()))?;
    let mut summaries = Vec::new();
    for (i, d) in detections.iter().enumerate() {
        let mask = ostk_core::blending::binarize(&d.mask, 0.5)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        let name = format!("det_{i:02}_{}.png", d.class_label);
        imaging::save_plane(mask.plane(), out.join(&name))
            .map_err(|e| CliError::Input(e.to_string()))?;
        println!(
            "{i:>3} {:<12} conf={:.3} bbox=({:.0},{:.0},{:.0},{:.0}) mask={name}",
            d.class_label, d.confidence, d.bbox.0, d.bbox.1, d.bbox.2, d.bbox.3
        );
        summaries.push(serde_json::json!({
            "index": i,
            "class": d.class_label,
            "confidence": d.confidence,
            "bbox": [d.bbox.0, d.bbox.1, d.bbox.2, d.bbox.3],
            "mask": name,
        }));
    }
    let json = serde_json::json!({
        "content": args.content,
        "working_height": wh,
        "working_width": ww,
        "conf_threshold": conf,
        "detections": summaries,
    });
    std::fs::write(
        out.join("detections.json"),
        serde_json::to_string_pretty(&json).expect("json serializes"),
    )
    .map_err(|e| CliError::Input(e.to_string()))?;
    println!("{} detections -> {}", detections.len(), out.display());
    Ok(())
}

fn load_model(weights: &str, taps: TapSpec) -> Result<ostk_core::BackboneModel, CliError> {
    net::load_model(weights, taps).map_err(|e| match e {
        NetworkError::WeightsNotFound(_) | NetworkError::LoadFailure(_) => {
            CliError::Input(e.to_string())
        }
        NetworkError::ArchitectureMismatch(_) => CliError::Usage(e.to_string()),
        other => CliError::Internal(other.to_string()),
    })
}

fn map_pipeline_error(e: PipelineError) -> CliError {
    match e {
        PipelineError::NoTargetMatched { .. } => CliError::NoTarget(e.to_string()),
        PipelineError::Style(StyleError::NonFiniteLoss { iteration, .. }) => CliError::Numeric(
            format!("stylization diverged to a non-finite loss at iteration {iteration}"),
        ),
        PipelineError::Style(StyleError::InvalidConfig(m)) => CliError::Usage(m),
        PipelineError::NoJobs => CliError::Usage(e.to_string()),
        PipelineError::Imaging(_)
        | PipelineError::Network(_)
        | PipelineError::Io(_)
        | PipelineError::Json(_) => CliError::Input(e.to_string()),
        PipelineError::Style(inner) => match inner {
            StyleError::Network(_) | StyleError::Imaging(_) => CliError::Input(inner.to_string()),
            other => CliError::Internal(other.to_string()),
        },
        PipelineError::Blend(_) => CliError::Internal(e.to_string()),
    }
}
