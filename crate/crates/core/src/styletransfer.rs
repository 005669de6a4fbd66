//! Losses and the pixel-space optimization loop.
//!
//! The pastiche starts as a copy of the content image (or seeded noise) and
//! is optimized directly in pixel space with Adam while the network stays
//! frozen. Content loss is the mean squared feature difference at the content
//! tap; style loss is the weighted sum over style taps of mean squared
//! Gram-matrix differences. Both use mean reductions and Gram normalization
//! by `C·H·W`, which keeps alpha/beta meaningful across resolutions.

use std::collections::BTreeMap;
use std::io::Write;

use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::imaging::{self, Image, ImagingError, ResizeMode};
use crate::net::{BackboneModel, FeatureMap, NetworkError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum StyleError {
    #[error("non-finite values in loss input")]
    NonFiniteInput,
    #[error("feature shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("layer key mismatch: expected {expected:?}, got {got:?}")]
    KeyMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at iteration {iteration}; aborting")]
    NonFiniteLoss { iteration: usize, trace: LossTrace },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Pastiche initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Start from the content image (default; converges fast and preserves
    /// object structure).
    #[serde(rename = "content")]
    ContentClone,
    /// Start from seeded uniform noise.
    Noise,
}

/// All knobs of one stylization run.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleTransferConfig {
    /// Content weight (alpha).
    pub alpha: f64,
    /// Style weight (beta).
    pub beta: f64,
    /// Per-style-layer weight factors; keys must equal the model's style taps.
    pub layer_weights: BTreeMap<usize, f64>,
    pub iterations: usize,
    pub step_size: f64,
    pub init_mode: InitMode,
    pub seed: u64,
    /// Progress callback cadence, in iterations.
    pub log_every: usize,
}

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 1e6;
pub const DEFAULT_ITERATIONS: usize = 300;
pub const DEFAULT_STEP_SIZE: f64 = 0.02;

impl StyleTransferConfig {
    /// Defaults with uniform layer weights over the given style taps.
    pub fn for_style_layers(style_layers: &[usize]) -> Self {
        let w = 1.0 / style_layers.len().max(1) as f64;
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            layer_weights: style_layers.iter().map(|&l| (l, w)).collect(),
            iterations: DEFAULT_ITERATIONS,
            step_size: DEFAULT_STEP_SIZE,
            init_mode: InitMode::ContentClone,
            seed: 0,
            log_every: 10,
        }
    }

    pub fn validate(&self) -> Result<(), StyleError> {
        let bad = |m: String| Err(StyleError::InvalidConfig(m));
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return bad(format!("alpha must be a non-negative finite value, got {}", self.alpha));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return bad(format!("beta must be a non-negative finite value, got {}", self.beta));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return bad("at least one of alpha, beta must be positive".into());
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return bad(format!("step_size must be positive, got {}", self.step_size));
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        if self.layer_weights.is_empty() {
            return bad("layer_weights must name at least one style layer".into());
        }
        for (&l, &w) in &self.layer_weights {
            if !w.is_finite() || w < 0.0 {
                return bad(format!("layer weight for tap {l} must be non-negative, got {w}"));
            }
        }
        Ok(())
    }
}

impl Default for StyleTransferConfig {
    fn default() -> Self {
        Self::for_style_layers(&crate::net::TapSpec::default().style_layers)
    }
}

/// The image being optimized.
#[derive(Debug, Clone)]
pub struct Pastiche {
    pub image: Image,
    pub iteration: usize,
}

/// Channel-by-channel Gram matrix of a flattened feature map, normalized by
/// `C·H·W`.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    channels: usize,
    normalizer: f64,
    /// C×C, row-major; symmetric by construction.
    values: Vec<f64>,
}

impl GramMatrix {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.channels + j]
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub content_loss: f64,
    pub style_loss: f64,
    pub total_loss: f64,
}

/// Per-iteration loss records, in iteration order.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossTrace {
    records: Vec<LossRecord>,
}

impl LossTrace {
    pub fn push(&mut self, record: LossRecord) {
        if let Some(last) = self.records.last() {
            debug_assert!(record.iteration > last.iteration, "iterations strictly increase");
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[LossRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn first(&self) -> Option<&LossRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&LossRecord> {
        self.records.last()
    }

    /// CSV with header `iteration,content_loss,style_loss,total_loss`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "iteration,content_loss,style_loss,total_loss")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{}", r.iteration, r.content_loss, r.style_loss, r.total_loss)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Gram matrix of a feature map: `(F · Fᵀ) / (C·H·W)` for the C×(H·W)
/// flattening `F`.
pub fn gram(f: &FeatureMap) -> Result<GramMatrix, StyleError> {
    let t = &f.activations;
    if !t.is_finite() {
        return Err(StyleError::NonFiniteInput);
    }
    let c = t.channels();
    let n = (c * t.height() * t.width()) as f64;
    let mut values = vec![0.0; c * c];
    for i in 0..c {
        let fi = t.channel(i);
        for j in i..c {
            let fj = t.channel(j);
            let mut acc = 0.0;
            for (a, b) in fi.iter().zip(fj) {
                acc += a * b;
            }
            let v = acc / n;
            values[i * c + j] = v;
            values[j * c + i] = v;
        }
    }
    Ok(GramMatrix {
        channels: c,
        normalizer: n,
        values,
    })
}

/// Mean squared feature difference between the pastiche and content taps.
pub fn content_loss(feat_pastiche: &FeatureMap, feat_content: &FeatureMap) -> Result<f64, StyleError> {
    let a = &feat_pastiche.activations;
    let b = &feat_content.activations;
    if a.shape() != b.shape() {
        return Err(StyleError::ShapeMismatch {
            expected: b.shape(),
            got: a.shape(),
        });
    }
    let n = a.len() as f64;
    let mut acc = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc / n)
}

/// Weighted sum over style taps of mean squared Gram differences.
/// All three maps must share the same key set.
pub fn style_loss(
    feats_pastiche: &BTreeMap<usize, FeatureMap>,
    grams_style: &BTreeMap<usize, GramMatrix>,
    weights: &BTreeMap<usize, f64>,
) -> Result<f64, StyleError> {
    let expected: Vec<usize> = weights.keys().copied().collect();
    let feat_keys: Vec<usize> = feats_pastiche.keys().copied().collect();
    let gram_keys: Vec<usize> = grams_style.keys().copied().collect();
    if feat_keys != expected {
        return Err(StyleError::KeyMismatch {
            expected,
            got: feat_keys,
        });
    }
    if gram_keys != expected {
        return Err(StyleError::KeyMismatch {
            expected,
            got: gram_keys,
        });
    }
    let mut total = 0.0;
    for (&layer, weight) in weights {
        let g_p = gram(&feats_pastiche[&layer])?;
        let g_s = &grams_style[&layer];
        total += weight * gram_mse(&g_p, g_s, layer)?;
    }
    Ok(total)
}

fn gram_mse(a: &GramMatrix, b: &GramMatrix, layer: usize) -> Result<f64, StyleError> {
    if a.channels != b.channels {
        return Err(StyleError::ShapeMismatch {
            expected: (b.channels, b.channels, layer),
            got: (a.channels, a.channels, layer),
        });
    }
    let n = (a.channels * a.channels) as f64;
    let mut acc = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc / n)
}

/// Total loss: `alpha · content + beta · style`.
pub fn total_loss(lc: f64, ls: f64, cfg: &StyleTransferConfig) -> f64 {
    cfg.alpha * lc + cfg.beta * ls
}

/// Initializes the pastiche: a bit-exact copy of the content image, or
/// seeded uniform noise reproducible per seed.
pub fn init_pastiche(content: &Image, mode: InitMode, seed: u64) -> Pastiche {
    let image = match mode {
        InitMode::ContentClone => content.clone(),
        InitMode::Noise => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = (0..content.height() * content.width() * 3)
                .map(|_| (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64))
                .collect();
            Image::from_data(content.height(), content.width(), data)
                .expect("noise matches content shape")
        }
    };
    Pastiche { image, iteration: 0 }
}

/// Progress snapshot handed to the callback every `log_every` iterations.
pub struct ProgressEvent<'a> {
    pub iteration: usize,
    pub total_iterations: usize,
    pub content_loss: f64,
    pub style_loss: f64,
    pub total_loss: f64,
    pub pastiche: &'a Image,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let b1c = 1.0 - Self::BETA1.powi(self.t as i32);
        let b2c = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let m_hat = self.m[i] / b1c;
            let v_hat = self.v[i] / b2c;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

fn planar_to_interleaved(t: &Tensor) -> Vec<f64> {
    let (c, h, w) = t.shape();
    debug_assert_eq!(c, 3);
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * 3;
            out[base] = t.get(0, y, x);
            out[base + 1] = t.get(1, y, x);
            out[base + 2] = t.get(2, y, x);
        }
    }
    out
}

/// Runs the full stylization loop: extracts style Grams and the content
/// target once, then iterates Adam over the pastiche pixels, clamping to
/// `[0, 1]` after every step. Returns the final image and the loss trace.
/// Deterministic for a fixed seed under single-threaded execution.
pub fn stylize(
    model: &BackboneModel,
    content: &Image,
    style: &Image,
    cfg: &StyleTransferConfig,
    mut progress: Option<&mut dyn FnMut(&ProgressEvent)>,
) -> Result<(Image, LossTrace), StyleError> {
    cfg.validate()?;
    let taps = model.tap_spec().clone();
    let expected: Vec<usize> = {
        let mut set: Vec<usize> = taps.style_layers.clone();
        set.sort_unstable();
        set.dedup();
        set
    };
    let got: Vec<usize> = cfg.layer_weights.keys().copied().collect();
    if got != expected {
        return Err(StyleError::KeyMismatch { expected, got });
    }

    // Style Grams are computed once, at content resolution.
    let style_resized = imaging::resize(style, content.height(), content.width(), ResizeMode::Bilinear)?;
    let style_acts = model.extract_features(&style_resized, false)?;
    let mut grams_style: BTreeMap<usize, GramMatrix> = BTreeMap::new();
    for &layer in cfg.layer_weights.keys() {
        grams_style.insert(layer, gram(&style_acts.features()[&layer])?);
    }
    let content_acts = model.extract_features(content, false)?;
    let content_target = content_acts.features()[&taps.content_layer].clone();

    let pastiche = init_pastiche(content, cfg.init_mode, cfg.seed);
    let mut image = pastiche.image;
    let mut trace = LossTrace::default();
    if cfg.iterations == 0 {
        return Ok((image, trace));
    }

    let mut adam = Adam::new(image.data().len(), cfg.step_size);
    for iter in 0..cfg.iterations {
        let acts = model.extract_features(&image, true)?;
        let lc = content_loss(&acts.features()[&taps.content_layer], &content_target)?;
        let mut ls = 0.0;
        let mut style_grams_p: BTreeMap<usize, GramMatrix> = BTreeMap::new();
        for (&layer, &weight) in &cfg.layer_weights {
            let g_p = gram(&acts.features()[&layer])?;
            ls += weight * gram_mse(&g_p, &grams_style[&layer], layer)?;
            style_grams_p.insert(layer, g_p);
        }
        let lt = total_loss(lc, ls, cfg);
        trace.push(LossRecord {
            iteration: iter,
            content_loss: lc,
            style_loss: ls,
            total_loss: lt,
        });
        if !(lc.is_finite() && ls.is_finite() && lt.is_finite()) {
            return Err(StyleError::NonFiniteLoss { iteration: iter, trace });
        }
        if iter % cfg.log_every == 0 {
            if let Some(cb) = progress.as_deref_mut() {
                cb(&ProgressEvent {
                    iteration: iter,
                    total_iterations: cfg.iterations,
                    content_loss: lc,
                    style_loss: ls,
                    total_loss: lt,
                    pastiche: &image,
                });
            }
        }

        // Closed-form adjoints at each tap, then one backward pass.
        let mut tap_grads: BTreeMap<usize, Tensor> = BTreeMap::new();
        {
            let feat = &acts.features()[&taps.content_layer].activations;
            let target = &content_target.activations;
            let scale = 2.0 * cfg.alpha / feat.len() as f64;
            let mut g = Tensor::zeros(feat.channels(), feat.height(), feat.width());
            for ((gv, &a), &b) in g.data_mut().iter_mut().zip(feat.data()).zip(target.data()) {
                *gv = scale * (a - b);
            }
            tap_grads.insert(taps.content_layer, g);
        }
        for (&layer, &weight) in &cfg.layer_weights {
            let feat = &acts.features()[&layer].activations;
            let (c, h, w) = feat.shape();
            let g_p = &style_grams_p[&layer];
            let g_s = &grams_style[&layer];
            let norm = g_p.normalizer;
            let scale = 4.0 * cfg.beta * weight / ((c * c) as f64 * norm);
            // dL/dF = scale · (G_p − G_s) · F, computed row by row.
            let mut grad = Tensor::zeros(c, h, w);
            for i in 0..c {
                let out_row = grad.channel_mut(i);
                for j in 0..c {
                    let d = g_p.get(i, j) - g_s.get(i, j);
                    if d == 0.0 {
                        continue;
                    }
                    let f_row = feat.channel(j);
                    let k = scale * d;
                    for (o, &f) in out_row.iter_mut().zip(f_row) {
                        *o += k * f;
                    }
                }
            }
            match tap_grads.entry(layer) {
                std::collections::btree_map::Entry::Occupied(mut e) => e.get_mut().add_assign(&grad),
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(grad);
                }
            }
        }

        let pixel_grad = acts.backward(model, &tap_grads)?;
        let grad_flat = planar_to_interleaved(&pixel_grad);
        adam.step(image.data_mut(), &grad_flat);
        for v in image.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }

    if image.data().iter().any(|v| !v.is_finite()) {
        return Err(StyleError::NonFiniteLoss {
            iteration: cfg.iterations,
            trace,
        });
    }
    Ok((image, trace))
}
