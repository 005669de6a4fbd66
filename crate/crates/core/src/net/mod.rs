//! The single deep network serving both pipeline roles: instance segmentation
//! via the detection/mask head, and differentiable feature extraction from
//! backbone taps for style optimization. One set of weights, loaded once,
//! answers both.

pub mod arch;
pub mod head;
pub mod layers;
pub mod netgen;
pub mod selector;
pub mod weights;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::imaging::{Image, Plane};
use crate::tensor::Tensor;

use arch::ArchDescriptor;
use layers::{Module, ModuleCache};

/// Tapped outputs of one backbone pass plus (when gradients are wanted) the
/// per-module caches backpropagation needs.
type TapForward = (BTreeMap<usize, Tensor>, Option<Vec<Option<ModuleCache>>>);

pub use selector::{select_targets, TargetSelector};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("weights file not found: {0}")]
    WeightsNotFound(PathBuf),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("failed to load weights: {0}")]
    LoadFailure(String),
    #[error("input {got_h}x{got_w} is not a multiple of the network stride {stride}")]
    ShapeError {
        stride: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("non-finite activation at backbone module {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("inference failure: {0}")]
    InferenceFailure(String),
    #[error("invalid target selector {0}")]
    SelectorParse(String),
}

/// Which backbone modules feed the losses: one content tap and an ordered set
/// of style taps. Indices are 0-based over the backbone's top-level module
/// sequence.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TapSpec {
    pub content_layer: usize,
    pub style_layers: Vec<usize>,
}

impl Default for TapSpec {
    fn default() -> Self {
        Self {
            content_layer: 7,
            style_layers: vec![1, 3, 5, 7],
        }
    }
}

impl TapSpec {
    /// Content and style taps as one de-duplicated, ordered index set.
    pub fn all_taps(&self) -> BTreeSet<usize> {
        let mut taps: BTreeSet<usize> = self.style_layers.iter().copied().collect();
        taps.insert(self.content_layer);
        taps
    }
}

/// Activations captured at one backbone tap.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub layer_index: usize,
    pub activations: Tensor,
    /// True when the extraction retained what backpropagation needs.
    pub differentiable: bool,
}

/// One segmented object: a soft mask at image resolution, a class label, a
/// confidence and a pixel-space box.
#[derive(Debug, Clone)]
pub struct Detection {
    pub mask: Plane,
    pub class_label: String,
    pub confidence: f64,
    /// (x1, y1, x2, y2) in pixels.
    pub bbox: (f64, f64, f64, f64),
}

/// Compute device. Only the CPU runtime exists in this build; the variant is
/// kept so configs and manifests carry an explicit device field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    Cpu,
    Accelerator,
}

#[derive(Debug, Default)]
pub struct InferenceStats {
    segment_calls: AtomicU64,
    extract_calls: AtomicU64,
}

/// The loaded network. Weights are immutable after load; the same instance
/// answers both [`BackboneModel::segment`] and
/// [`BackboneModel::extract_features`].
#[derive(Debug)]
pub struct BackboneModel {
    weights_source: String,
    tap_spec: TapSpec,
    input_stride: usize,
    device: Device,
    arch: ArchDescriptor,
    backbone: Vec<Module>,
    /// Cumulative stride at each backbone module output.
    strides: Vec<usize>,
    head: head::Head,
    stats: InferenceStats,
}

/// Result of one feature extraction. Holds the tapped feature maps and, when
/// requested, the caches needed to push gradients back to the input pixels.
/// Each extraction owns its buffers, so concurrent calls never share state.
#[derive(Debug)]
pub struct Activations {
    features: BTreeMap<usize, FeatureMap>,
    caches: Option<Vec<Option<ModuleCache>>>,
    input_h: usize,
    input_w: usize,
    max_tap: usize,
}

impl Activations {
    pub fn features(&self) -> &BTreeMap<usize, FeatureMap> {
        &self.features
    }

    pub fn into_features(self) -> BTreeMap<usize, FeatureMap> {
        self.features
    }

    pub fn feature(&self, layer: usize) -> Option<&FeatureMap> {
        self.features.get(&layer)
    }

    /// Backpropagates per-tap adjoints to the input pixels. `tap_grads` maps
    /// tap index to the gradient of a scalar loss w.r.t. that tap's
    /// activations; the result is the 3×H×W gradient w.r.t. the image.
    pub fn backward(
        &self,
        model: &BackboneModel,
        tap_grads: &BTreeMap<usize, Tensor>,
    ) -> Result<Tensor, NetworkError> {
        let caches = self.caches.as_ref().ok_or_else(|| {
            NetworkError::InferenceFailure(
                "extraction was run without require_grad; no gradient state retained".into(),
            )
        })?;
        for (&layer, grad) in tap_grads {
            let feat = self.features.get(&layer).ok_or_else(|| {
                NetworkError::InferenceFailure(format!("gradient supplied for untapped layer {layer}"))
            })?;
            if grad.shape() != feat.activations.shape() {
                return Err(NetworkError::InferenceFailure(format!(
                    "gradient shape {:?} does not match tap {layer} activations {:?}",
                    grad.shape(),
                    feat.activations.shape()
                )));
            }
        }
        let mut grad: Option<Tensor> = None;
        for idx in (0..=self.max_tap).rev() {
            if let Some(tap_grad) = tap_grads.get(&idx) {
                match grad.as_mut() {
                    Some(g) => g.add_assign(tap_grad),
                    None => grad = Some(tap_grad.clone()),
                }
            }
            if let Some(g) = grad.take() {
                let cache = caches[idx].as_ref().expect("cache exists up to max tap");
                let (in_h, in_w) = if idx == 0 {
                    (self.input_h, self.input_w)
                } else {
                    let s = model.strides[idx - 1];
                    (self.input_h / s, self.input_w / s)
                };
                grad = Some(model.backbone[idx].backward(&g, cache, in_h, in_w));
            }
        }
        grad.ok_or_else(|| {
            NetworkError::InferenceFailure("no tap gradients supplied".into())
        })
    }
}

/// Loads the network from a weights file with the default CPU device.
pub fn load_model(
    weights_source: impl AsRef<Path>,
    taps: TapSpec,
) -> Result<BackboneModel, NetworkError> {
    load_model_on(weights_source, taps, Device::Cpu)
}

pub fn load_model_on(
    weights_source: impl AsRef<Path>,
    taps: TapSpec,
    device: Device,
) -> Result<BackboneModel, NetworkError> {
    let path = weights_source.as_ref();
    let parsed = weights::read_weights(path)?;
    BackboneModel::from_parts(
        parsed.arch,
        &parsed.params,
        taps,
        path.display().to_string(),
        device,
    )
}

impl BackboneModel {
    /// Builds a model from an in-memory descriptor and parameter vector.
    /// This is the same constructor [`load_model`] uses after parsing a file.
    pub fn from_parts(
        arch: ArchDescriptor,
        params: &[f64],
        taps: TapSpec,
        weights_source: String,
        device: Device,
    ) -> Result<Self, NetworkError> {
        if device == Device::Accelerator {
            return Err(NetworkError::LoadFailure(
                "accelerator runtime is not available in this build".into(),
            ));
        }
        arch.validate().map_err(NetworkError::LoadFailure)?;
        if params.len() != arch.param_count() {
            return Err(NetworkError::LoadFailure(format!(
                "{} parameter values for an architecture needing {}",
                params.len(),
                arch.param_count()
            )));
        }
        let n_modules = arch.backbone.len();
        for &tap in taps.all_taps().iter() {
            if tap >= n_modules {
                return Err(NetworkError::ArchitectureMismatch(format!(
                    "tap index {tap} out of range for a backbone with {n_modules} modules"
                )));
            }
        }
        let mut cursor = 0usize;
        let mut take = |n: usize| {
            let slice = params[cursor..cursor + n].to_vec();
            cursor += n;
            slice
        };
        let backbone: Vec<Module> = arch.backbone.iter().map(|m| m.build(&mut take)).collect();
        let scale_convs: Vec<Vec<_>> = arch
            .head
            .scales
            .iter()
            .map(|s| s.convs.iter().map(|c| c.build(&mut take)).collect())
            .collect();
        let proto_convs: Vec<_> = arch
            .head
            .proto
            .convs
            .iter()
            .map(|c| c.build(&mut take))
            .collect();
        debug_assert_eq!(cursor, params.len());
        let strides = arch.cumulative_strides();
        let head = head::Head {
            spec: arch.head.clone(),
            scale_convs,
            proto_convs,
        };
        Ok(Self {
            weights_source,
            tap_spec: taps,
            input_stride: arch.input_stride,
            device,
            arch,
            backbone,
            strides,
            head,
            stats: InferenceStats::default(),
        })
    }

    pub fn weights_source(&self) -> &str {
        &self.weights_source
    }

    pub fn tap_spec(&self) -> &TapSpec {
        &self.tap_spec
    }

    pub fn input_stride(&self) -> usize {
        self.input_stride
    }

    pub fn device(&self) -> Device {
        self.device
    }

    pub fn class_names(&self) -> &[String] {
        &self.arch.class_names
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn backbone_len(&self) -> usize {
        self.backbone.len()
    }

    /// Cumulative stride at the given backbone module output.
    pub fn cumulative_stride(&self, module: usize) -> Option<usize> {
        self.strides.get(module).copied()
    }

    /// The backbone as used by the feature-extraction path.
    pub fn backbone_for_features(&self) -> &[Module] {
        &self.backbone
    }

    /// The backbone as used by the segmentation path. This is the same slice
    /// as [`BackboneModel::backbone_for_features`]; the single-network
    /// invariant is that both paths alias one weight set.
    pub fn backbone_for_segmentation(&self) -> &[Module] {
        &self.backbone
    }

    /// (segment calls, extract_features calls) since load.
    pub fn inference_counts(&self) -> (u64, u64) {
        (
            self.stats.segment_calls.load(Ordering::Relaxed),
            self.stats.extract_calls.load(Ordering::Relaxed),
        )
    }

    fn check_input_shape(&self, img: &Image) -> Result<(), NetworkError> {
        if !img.height().is_multiple_of(self.input_stride)
            || !img.width().is_multiple_of(self.input_stride)
            || img.height() == 0
            || img.width() == 0
        {
            return Err(NetworkError::ShapeError {
                stride: self.input_stride,
                got_h: img.height(),
                got_w: img.width(),
            });
        }
        Ok(())
    }

    /// Differentiable feature extraction at the configured taps.
    pub fn extract_features(
        &self,
        img: &Image,
        require_grad: bool,
    ) -> Result<Activations, NetworkError> {
        self.check_input_shape(img)?;
        self.stats.extract_calls.fetch_add(1, Ordering::Relaxed);
        let wanted = self.tap_spec.all_taps();
        let input = Tensor::from_image(img);
        let (outputs, caches) = self.forward_taps(&input, &wanted, require_grad)?;
        let max_tap = *wanted.iter().max().expect("non-empty tap set");
        let features = outputs
            .into_iter()
            .map(|(layer, activations)| {
                (
                    layer,
                    FeatureMap {
                        layer_index: layer,
                        activations,
                        differentiable: require_grad,
                    },
                )
            })
            .collect();
        Ok(Activations {
            features,
            caches,
            input_h: img.height(),
            input_w: img.width(),
            max_tap,
        })
    }

    /// Shared forward pass used by both public paths.
    fn forward_taps(
        &self,
        input: &Tensor,
        wanted: &BTreeSet<usize>,
        grad: bool,
    ) -> Result<TapForward, NetworkError> {
        let max_wanted = *wanted.iter().max().expect("wanted set is non-empty");
        if max_wanted >= self.backbone.len() {
            return Err(NetworkError::ArchitectureMismatch(format!(
                "module index {max_wanted} out of range"
            )));
        }
        let mut outputs = BTreeMap::new();
        let mut caches: Vec<Option<ModuleCache>> = Vec::new();
        let mut x = input.clone();
        for (idx, module) in self.backbone.iter().enumerate().take(max_wanted + 1) {
            x = if grad {
                let mut cache = module.new_cache();
                let y = module.forward(&x, Some(&mut cache));
                caches.push(Some(cache));
                y
            } else {
                module.forward(&x, None)
            };
            if wanted.contains(&idx) {
                if !x.is_finite() {
                    return Err(NetworkError::NonFiniteActivation { layer: idx });
                }
                outputs.insert(idx, x.clone());
            }
        }
        Ok((outputs, if grad { Some(caches) } else { None }))
    }

    /// Full segmentation pass: backbone (no gradients) plus head decode.
    /// Returns detections sorted by descending confidence, each with a soft
    /// mask at image resolution.
    pub fn segment(
        &self,
        img: &Image,
        conf_threshold: f64,
    ) -> Result<Vec<Detection>, NetworkError> {
        if !(0.0..1.0).contains(&conf_threshold) || conf_threshold == 0.0 {
            return Err(NetworkError::InferenceFailure(format!(
                "confidence threshold must be in (0, 1), got {conf_threshold}"
            )));
        }
        self.check_input_shape(img)?;
        self.stats.segment_calls.fetch_add(1, Ordering::Relaxed);
        let backbone = self.backbone_for_segmentation();
        debug_assert!(std::ptr::eq(backbone.as_ptr(), self.backbone.as_ptr()));
        let mut wanted: BTreeSet<usize> = self.head.spec.scales.iter().map(|s| s.source).collect();
        wanted.insert(self.head.spec.proto.source);
        let input = Tensor::from_image(img);
        let (taps, _) = self.forward_taps(&input, &wanted, false)?;
        let detections = self.head.detect(
            &taps,
            &self.strides,
            img.height(),
            img.width(),
            conf_threshold,
            &self.arch.class_names,
        );
        for d in &detections {
            debug_assert!(d.mask.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        Ok(detections)
    }
}

