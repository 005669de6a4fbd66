//! Config resolution: defaults, then the optional TOML config file, then
//! command-line flags. The resolved [`RunConfig`] is what the pipeline runs
//! and what the manifest snapshots, so a manifest's config section can be fed
//! back as a config file to reproduce the run.

use std::path::PathBuf;

use ostk_core::net::Device;
use ostk_core::pipeline::{JobConfig, RunConfig};
use ostk_core::styletransfer::InitMode;
use serde::Deserialize;

/// Errors that map to distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: bad flags or invalid option values.
    Usage(String),
    /// Exit 3: missing or unreadable inputs.
    Input(String),
    /// Exit 4: a selector matched nothing in strict mode.
    NoTarget(String),
    /// Exit 5: the optimization produced a non-finite loss.
    Numeric(String),
    /// Exit 1: anything else.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::NoTarget(_) => 4,
            CliError::Numeric(_) => 5,
            CliError::Internal(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Input(m)
            | CliError::NoTarget(m)
            | CliError::Numeric(m)
            | CliError::Internal(m) => m,
        }
    }
}

/// Config file schema: every field optional, flags win over file values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub weights: Option<String>,
    pub device: Option<Device>,
    pub size: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub iterations: Option<usize>,
    pub step_size: Option<f64>,
    pub init: Option<InitMode>,
    pub log_every: Option<usize>,
    pub conf_threshold: Option<f64>,
    pub skip_unmatched: Option<bool>,
    pub feather: Option<usize>,
    pub content: Option<String>,
    pub out: Option<String>,
    pub content_layer: Option<usize>,
    pub style_layers: Option<Vec<usize>>,
    pub style_layer_weights: Option<Vec<f64>>,
    #[serde(default, rename = "job")]
    pub jobs: Vec<JobConfig>,
}

pub fn load_file_config(path: &PathBuf) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))
}

/// Flag values as parsed; `None` means "not given on the command line".
#[derive(Debug, Default)]
pub struct FlagOverrides {
    pub content: Option<String>,
    pub styles: Vec<String>,
    pub targets: Vec<String>,
    pub out: Option<String>,
    pub weights: Option<String>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub iterations: Option<usize>,
    pub step_size: Option<f64>,
    pub size: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub feather: Option<usize>,
    pub conf_threshold: Option<f64>,
    pub init: Option<InitMode>,
    pub skip_unmatched: bool,
    pub log_every: Option<usize>,
    pub device: Option<String>,
}

/// Merges defaults < file < flags and validates the result.
pub fn resolve(file: FileConfig, flags: FlagOverrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();

    // File layer.
    if let Some(v) = file.weights {
        cfg.weights = v;
    }
    if let Some(v) = file.device {
        cfg.device = v;
    }
    if let Some(v) = file.size {
        cfg.size = v;
    }
    if let Some(v) = file.seed {
        cfg.seed = v;
    }
    if let Some(v) = file.threads {
        cfg.threads = v;
    }
    if let Some(v) = file.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = file.beta {
        cfg.beta = v;
    }
    if let Some(v) = file.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = file.step_size {
        cfg.step_size = v;
    }
    if let Some(v) = file.init {
        cfg.init = v;
    }
    if let Some(v) = file.log_every {
        cfg.log_every = v;
    }
    if let Some(v) = file.conf_threshold {
        cfg.conf_threshold = v;
    }
    if let Some(v) = file.skip_unmatched {
        cfg.skip_unmatched = v;
    }
    if let Some(v) = file.feather {
        cfg.feather = v;
    }
    if let Some(v) = file.content {
        cfg.content = v;
    }
    if let Some(v) = file.out {
        cfg.out = v;
    }
    if let Some(v) = file.content_layer {
        cfg.content_layer = v;
    }
    if let Some(v) = file.style_layers {
        let n = v.len().max(1) as f64;
        cfg.style_layer_weights = vec![1.0 / n; v.len()];
        cfg.style_layers = v;
    }
    if let Some(v) = file.style_layer_weights {
        cfg.style_layer_weights = v;
    }
    if !file.jobs.is_empty() {
        cfg.jobs = file.jobs;
    }

    // Flag layer.
    if let Some(v) = flags.content {
        cfg.content = v;
    }
    if let Some(v) = flags.out {
        cfg.out = v;
    }
    if let Some(v) = flags.weights {
        cfg.weights = v;
    }
    if let Some(v) = flags.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = flags.beta {
        cfg.beta = v;
    }
    if let Some(v) = flags.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = flags.step_size {
        cfg.step_size = v;
    }
    if let Some(v) = flags.size {
        cfg.size = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.threads {
        cfg.threads = v;
    }
    if let Some(v) = flags.feather {
        cfg.feather = v;
    }
    if let Some(v) = flags.conf_threshold {
        cfg.conf_threshold = v;
    }
    if let Some(v) = flags.init {
        cfg.init = v;
    }
    if flags.skip_unmatched {
        cfg.skip_unmatched = true;
    }
    if let Some(v) = flags.log_every {
        cfg.log_every = v;
    }
    if let Some(v) = flags.device {
        cfg.device = match v.as_str() {
            "cpu" => Device::Cpu,
            "accelerator" => {
                return Err(CliError::Usage(
                    "--device accelerator is not available in this build".into(),
                ))
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown device {other:?} (expected cpu)"
                )))
            }
        };
    }

    // Flag-provided jobs replace file jobs; pair k binds style k to target k.
    if !flags.styles.is_empty() || !flags.targets.is_empty() {
        if flags.styles.len() != flags.targets.len() {
            return Err(CliError::Usage(format!(
                "{} --style values but {} --target values; they pair positionally",
                flags.styles.len(),
                flags.targets.len()
            )));
        }
        cfg.jobs = flags
            .styles
            .into_iter()
            .zip(flags.targets)
            .map(|(style, target)| JobConfig {
                style,
                target,
                feather: None,
                alpha: None,
                beta: None,
                iterations: None,
            })
            .collect();
    }

    // Weights fallback: environment variable.
    if cfg.weights.is_empty() {
        if let Ok(env) = std::env::var("OSTK_WEIGHTS") {
            if !env.is_empty() {
                cfg.weights = env;
            }
        }
    }

    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let usage = |m: String| Err(CliError::Usage(m));
    if !(cfg.alpha.is_finite() && cfg.alpha >= 0.0) {
        return usage(format!("--alpha must be a non-negative number, got {}", cfg.alpha));
    }
    if !(cfg.beta.is_finite() && cfg.beta >= 0.0) {
        return usage(format!("--beta must be a non-negative number, got {}", cfg.beta));
    }
    if cfg.alpha == 0.0 && cfg.beta == 0.0 {
        return usage("at least one of --alpha / --beta must be positive".into());
    }
    if !(cfg.step_size.is_finite() && cfg.step_size > 0.0) {
        return usage(format!("--step must be positive, got {}", cfg.step_size));
    }
    if cfg.size < 32 {
        return usage(format!("--size must be at least 32, got {}", cfg.size));
    }
    if cfg.threads == 0 {
        return usage("--threads must be at least 1".into());
    }
    if cfg.log_every == 0 {
        return usage("--log-every must be at least 1".into());
    }
    if !(cfg.conf_threshold > 0.0 && cfg.conf_threshold < 1.0) {
        return usage(format!(
            "--conf-threshold must be in (0, 1), got {}",
            cfg.conf_threshold
        ));
    }
    if cfg.style_layers.is_empty() {
        return usage("style_layers must name at least one tap".into());
    }
    if cfg.style_layer_weights.len() != cfg.style_layers.len() {
        return usage(format!(
            "{} style_layer_weights for {} style_layers",
            cfg.style_layer_weights.len(),
            cfg.style_layers.len()
        ));
    }
    if cfg.style_layer_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return usage("style_layer_weights must be non-negative".into());
    }
    if cfg.content.is_empty() {
        return usage("--content is required".into());
    }
    if cfg.out.is_empty() {
        return usage("--out is required".into());
    }
    if cfg.jobs.is_empty() {
        return usage("at least one --style/--target pair (or a [[job]] in the config) is required".into());
    }
    for (i, j) in cfg.jobs.iter().enumerate() {
        if j.target.parse::<ostk_core::TargetSelector>().is_err() {
            return usage(format!("job {i}: invalid --target selector {:?}", j.target));
        }
        if let Some(a) = j.alpha {
            if !(a.is_finite() && a >= 0.0) {
                return usage(format!("job {i}: alpha override must be non-negative"));
            }
        }
        if let Some(b) = j.beta {
            if !(b.is_finite() && b >= 0.0) {
                return usage(format!("job {i}: beta override must be non-negative"));
            }
        }
    }
    if cfg.weights.is_empty() {
        return usage(
            "no weights given: use --weights, a config `weights` entry, or $OSTK_WEIGHTS".into(),
        );
    }
    Ok(())
}
