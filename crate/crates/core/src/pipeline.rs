//! End-to-end orchestration: segment the content once, run one stylization
//! per distinct style, then composite each job's stylized object back into
//! the canvas in job order.
//!
//! Jobs sharing a style image (and identical effective settings) share one
//! stylization run. The final canvas starts as the resized content, so with
//! feathering off every pixel outside the selected masks stays bit-identical
//! to the content.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blending::{self, BlendError};
use crate::imaging::{self, Image, ImagingError, Plane, ResizeMode};
use crate::net::{
    selector, BackboneModel, Detection, Device, NetworkError, TargetSelector,
};
use crate::styletransfer::{
    self, InitMode, LossTrace, ProgressEvent, StyleError, StyleTransferConfig,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("a run needs at least one (style, target) job")]
    NoJobs,
    #[error("selector {selector:?} of job {job_index} matched no detections")]
    NoTargetMatched { job_index: usize, selector: String },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Style(#[from] StyleError),
    #[error(transparent)]
    Blend(#[from] BlendError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// One (style image, target selector) job, with optional per-job overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobConfig {
    pub style: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feather: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

/// Fully resolved configuration of one pipeline run. This is what the CLI
/// produces after merging defaults, config file and flags, and what the
/// manifest records; feeding it back as a config file reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub weights: String,
    pub device: Device,
    /// Long side of the working resolution before stride rounding.
    pub size: usize,
    pub seed: u64,
    pub threads: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub init: InitMode,
    pub log_every: usize,
    pub conf_threshold: f64,
    /// When true, jobs whose selector matches nothing are skipped instead of
    /// failing the run.
    pub skip_unmatched: bool,
    /// Global feather radius in pixels (0 = hard masks, the default).
    pub feather: usize,
    pub content: String,
    pub out: String,
    pub content_layer: usize,
    pub style_layers: Vec<usize>,
    /// Per-layer style weights, parallel to `style_layers`.
    pub style_layer_weights: Vec<f64>,
    #[serde(rename = "job")]
    pub jobs: Vec<JobConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let taps = crate::net::TapSpec::default();
        let n = taps.style_layers.len() as f64;
        Self {
            weights: String::new(),
            device: Device::Cpu,
            size: imaging::DEFAULT_LONG_SIDE,
            seed: 0,
            threads: 1,
            alpha: styletransfer::DEFAULT_ALPHA,
            beta: styletransfer::DEFAULT_BETA,
            iterations: styletransfer::DEFAULT_ITERATIONS,
            step_size: styletransfer::DEFAULT_STEP_SIZE,
            init: InitMode::ContentClone,
            log_every: 10,
            conf_threshold: 0.5,
            skip_unmatched: false,
            feather: 0,
            content: String::new(),
            out: String::new(),
            content_layer: taps.content_layer,
            style_layer_weights: vec![1.0 / n; taps.style_layers.len()],
            style_layers: taps.style_layers,
            jobs: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn tap_spec(&self) -> crate::net::TapSpec {
        crate::net::TapSpec {
            content_layer: self.content_layer,
            style_layers: self.style_layers.clone(),
        }
    }

    /// Base stylization settings before per-job overrides.
    pub fn base_style_config(&self) -> StyleTransferConfig {
        StyleTransferConfig {
            alpha: self.alpha,
            beta: self.beta,
            layer_weights: self
                .style_layers
                .iter()
                .copied()
                .zip(self.style_layer_weights.iter().copied())
                .collect(),
            iterations: self.iterations,
            step_size: self.step_size,
            init_mode: self.init,
            seed: self.seed,
            log_every: self.log_every,
        }
    }

    /// Stylization settings for one job: base plus its shallow overrides.
    pub fn style_config_for(&self, job: &JobConfig) -> StyleTransferConfig {
        let mut cfg = self.base_style_config();
        if let Some(a) = job.alpha {
            cfg.alpha = a;
        }
        if let Some(b) = job.beta {
            cfg.beta = b;
        }
        if let Some(it) = job.iterations {
            cfg.iterations = it;
        }
        cfg
    }

    pub fn feather_for(&self, job: &JobConfig) -> usize {
        job.feather.unwrap_or(self.feather)
    }
}

/// One deduplicated stylization run of the plan.
#[derive(Debug, Clone, PartialEq)]
pub struct StylizeRun {
    pub style_path: String,
    pub config: StyleTransferConfig,
}

/// Composite step: which job composites which run's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositeStep {
    pub job_index: usize,
    pub run_index: usize,
}

/// Execution plan: distinct stylization runs plus composite order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub stylize_runs: Vec<StylizeRun>,
    pub composites: Vec<CompositeStep>,
}

/// Plans a run: one stylization per distinct (style path, effective
/// settings) pair, composites in job-list order.
pub fn plan(cfg: &RunConfig) -> Result<RunPlan, PipelineError> {
    if cfg.jobs.is_empty() {
        return Err(PipelineError::NoJobs);
    }
    let mut runs: Vec<StylizeRun> = Vec::new();
    let mut composites = Vec::with_capacity(cfg.jobs.len());
    for (job_index, job) in cfg.jobs.iter().enumerate() {
        let config = cfg.style_config_for(job);
        let run_index = runs
            .iter()
            .position(|r| r.style_path == job.style && r.config == config)
            .unwrap_or_else(|| {
                runs.push(StylizeRun {
                    style_path: job.style.clone(),
                    config,
                });
                runs.len() - 1
            });
        composites.push(CompositeStep {
            job_index,
            run_index,
        });
    }
    Ok(RunPlan {
        stylize_runs: runs,
        composites,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub class: String,
    pub confidence: f64,
    pub bbox: (f64, f64, f64, f64),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct JobArtifacts {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub styled_full: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_csv: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobRecord {
    pub style: String,
    pub selector: String,
    /// Indices into the manifest's detection list.
    pub resolved_detections: Vec<usize>,
    pub skipped: bool,
    pub feather: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_total_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_total_loss: Option<f64>,
    pub artifacts: JobArtifacts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timings {
    pub segment_ms: f64,
    /// Per distinct stylization run, in plan order.
    pub stylize_ms: Vec<f64>,
    pub total_ms: f64,
}

/// Record of one completed run: inputs, configuration snapshot, resolved
/// detections, per-job outcomes and artifact paths (relative to the output
/// directory), and wall-clock timings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub content: String,
    pub working_height: usize,
    pub working_width: usize,
    pub seed: u64,
    pub config: RunConfig,
    pub detections: Vec<DetectionSummary>,
    pub jobs: Vec<JobRecord>,
    pub final_image: String,
    pub timings: Timings,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let json = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&json)?)
    }
}

/// Progress sink for run-level logging: (run index, style path, event).
pub type ProgressSink<'a> = dyn Fn(usize, &str, &ProgressEvent) + Sync + 'a;

/// Executes a full run without progress reporting. See [`run_with_progress`].
pub fn run(model: &BackboneModel, cfg: &RunConfig) -> Result<RunManifest, PipelineError> {
    run_with_progress(model, cfg, None)
}

/// Executes a full run: load and resize the content, segment once, stylize
/// once per distinct style, composite per job in order, then write all
/// artifacts and the manifest into the output directory.
pub fn run_with_progress(
    model: &BackboneModel,
    cfg: &RunConfig,
    progress: Option<&ProgressSink>,
) -> Result<RunManifest, PipelineError> {
    let t_start = Instant::now();
    let plan = plan(cfg)?;

    let content = imaging::load_image(&cfg.content)?;
    let (wh, ww) = imaging::working_size(
        content.height(),
        content.width(),
        cfg.size,
        model.input_stride(),
    );
    let resized = imaging::resize(&content, wh, ww, ResizeMode::Bilinear)?;

    let t_seg = Instant::now();
    let detections = model.segment(&resized, cfg.conf_threshold)?;
    let segment_ms = t_seg.elapsed().as_secs_f64() * 1e3;

    // Resolve every selector before doing any expensive work or writing any
    // file; in strict mode an unmatched selector fails the whole run here.
    let mut resolved: Vec<Vec<usize>> = Vec::with_capacity(cfg.jobs.len());
    for (job_index, job) in cfg.jobs.iter().enumerate() {
        let sel: TargetSelector = job.target.parse()?;
        let indices = selector::select_indices(&detections, &sel);
        if indices.is_empty() && !cfg.skip_unmatched {
            return Err(PipelineError::NoTargetMatched {
                job_index,
                selector: job.target.clone(),
            });
        }
        resolved.push(indices);
    }

    // A stylization run is needed only if a non-skipped job composites it.
    let mut run_needed = vec![false; plan.stylize_runs.len()];
    for step in &plan.composites {
        if !resolved[step.job_index].is_empty() {
            run_needed[step.run_index] = true;
        }
    }

    let worker_count = cfg.threads.max(1).min(plan.stylize_runs.len().max(1));
    let mut styled: Vec<Option<(Image, LossTrace)>> = Vec::new();
    let mut stylize_ms = vec![0.0; plan.stylize_runs.len()];
    if worker_count <= 1 {
        for (idx, sr) in plan.stylize_runs.iter().enumerate() {
            if !run_needed[idx] {
                styled.push(None);
                continue;
            }
            let t = Instant::now();
            styled.push(Some(execute_stylize(model, &resized, sr, idx, progress)?));
            stylize_ms[idx] = t.elapsed().as_secs_f64() * 1e3;
        }
    } else {
        let queue: Mutex<VecDeque<usize>> = Mutex::new(
            (0..plan.stylize_runs.len())
                .filter(|&i| run_needed[i])
                .collect(),
        );
        type RunOutcome = (usize, Result<(Image, LossTrace), PipelineError>, f64);
        let results: Mutex<Vec<RunOutcome>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..worker_count {
                scope.spawn(|| loop {
                    let idx = match queue.lock().expect("queue lock").pop_front() {
                        Some(i) => i,
                        None => break,
                    };
                    let t = Instant::now();
                    let res = execute_stylize(model, &resized, &plan.stylize_runs[idx], idx, progress);
                    let ms = t.elapsed().as_secs_f64() * 1e3;
                    results.lock().expect("results lock").push((idx, res, ms));
                });
            }
        });
        let mut collected = results.into_inner().expect("scope joined all workers");
        collected.sort_by_key(|(idx, _, _)| *idx);
        styled = vec![None; plan.stylize_runs.len()];
        for (idx, res, ms) in collected {
            styled[idx] = Some(res?);
            stylize_ms[idx] = ms;
        }
        // styled was pre-sized; ensure skipped slots stay None.
    }

    // Composite in job order onto a canvas that starts as the content.
    let mut canvas = resized.clone();
    let mut job_masks: Vec<Option<crate::blending::BinaryMask>> = vec![None; cfg.jobs.len()];
    for step in &plan.composites {
        let indices = &resolved[step.job_index];
        if indices.is_empty() {
            continue;
        }
        let union = union_mask(&detections, indices, wh, ww);
        let bmask = blending::binarize(&union, 0.5)?;
        let radius = cfg.feather_for(&cfg.jobs[step.job_index]);
        let mask_plane = if radius > 0 {
            blending::feather(&bmask, radius)
        } else {
            bmask.plane().clone()
        };
        let (styled_img, _) = styled[step.run_index]
            .as_ref()
            .expect("needed runs were executed");
        canvas = blending::composite(&canvas, styled_img, &mask_plane)?;
        job_masks[step.job_index] = Some(bmask);
    }

    // Artifacts.
    let out_dir = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out_dir)?;
    imaging::save_image(&canvas, out_dir.join("final.png"))?;
    let mut job_records = Vec::with_capacity(cfg.jobs.len());
    for (k, job) in cfg.jobs.iter().enumerate() {
        let skipped = resolved[k].is_empty();
        let mut artifacts = JobArtifacts::default();
        let mut initial = None;
        let mut final_loss = None;
        if !skipped {
            let mask_name = format!("job_{k}_mask.png");
            let mask = job_masks[k].as_ref().expect("mask built for active job");
            imaging::save_plane(mask.plane(), out_dir.join(&mask_name))?;
            artifacts.mask = Some(mask_name);

            let run_index = plan
                .composites
                .iter()
                .find(|s| s.job_index == k)
                .expect("every job has a composite step")
                .run_index;
            let (styled_img, trace) = styled[run_index]
                .as_ref()
                .expect("needed runs were executed");
            let styled_name = format!("job_{k}_styled_full.png");
            imaging::save_image(styled_img, out_dir.join(&styled_name))?;
            artifacts.styled_full = Some(styled_name);

            let csv_name = format!("job_{k}_loss.csv");
            std::fs::write(out_dir.join(&csv_name), trace.to_csv_string())?;
            artifacts.loss_csv = Some(csv_name);
            initial = trace.first().map(|r| r.total_loss);
            final_loss = trace.last().map(|r| r.total_loss);
        }
        job_records.push(JobRecord {
            style: job.style.clone(),
            selector: job.target.clone(),
            resolved_detections: resolved[k].clone(),
            skipped,
            feather: cfg.feather_for(job),
            initial_total_loss: initial,
            final_total_loss: final_loss,
            artifacts,
        });
    }

    let manifest = RunManifest {
        content: cfg.content.clone(),
        working_height: wh,
        working_width: ww,
        seed: cfg.seed,
        config: cfg.clone(),
        detections: detections
            .iter()
            .map(|d| DetectionSummary {
                class: d.class_label.clone(),
                confidence: d.confidence,
                bbox: d.bbox,
            })
            .collect(),
        jobs: job_records,
        final_image: "final.png".into(),
        timings: Timings {
            segment_ms,
            stylize_ms,
            total_ms: t_start.elapsed().as_secs_f64() * 1e3,
        },
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

fn execute_stylize(
    model: &BackboneModel,
    content: &Image,
    sr: &StylizeRun,
    run_index: usize,
    progress: Option<&ProgressSink>,
) -> Result<(Image, LossTrace), PipelineError> {
    let style = imaging::load_image(&sr.style_path)?;
    let result = match progress {
        Some(sink) => {
            let mut cb = |e: &ProgressEvent| sink(run_index, &sr.style_path, e);
            styletransfer::stylize(model, content, &style, &sr.config, Some(&mut cb))?
        }
        None => styletransfer::stylize(model, content, &style, &sr.config, None)?,
    };
    Ok(result)
}

/// Element-wise max of the selected detections' soft masks.
fn union_mask(detections: &[Detection], indices: &[usize], h: usize, w: usize) -> Plane {
    let mut union = Plane::new(h, w, 0.0);
    for &i in indices {
        for (u, &m) in union.data_mut().iter_mut().zip(detections[i].mask.data()) {
            if m > *u {
                *u = m;
            }
        }
    }
    union
}

/// Selections of a detection list under one selector, as manifest-ready
/// detection indices.
pub fn resolve_selector(
    detections: &[Detection],
    selector_str: &str,
) -> Result<Vec<usize>, PipelineError> {
    let sel: TargetSelector = selector_str.parse()?;
    Ok(selector::select_indices(detections, &sel))
}
