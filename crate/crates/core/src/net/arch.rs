//! Serializable architecture descriptor embedded in a weights file.
//!
//! A file describes the backbone as a flat sequence of top-level modules
//! (matching the usual darknet-style layout of alternating strided
//! convolutions and C2f blocks, ending in SPPF) plus a segmentation head that
//! reads one or more backbone taps. Convolutions carry fused batch-norm.

use serde::{Deserialize, Serialize};

use super::layers::{Act, Bottleneck, Conv, C2f, Module, Sppf};

/// Parameters of one convolution as stored in the file header. Weight data
/// itself lives in the binary section, in declaration order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvSpec {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub act: Act,
}

impl ConvSpec {
    pub fn param_count(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k + self.out_c
    }

    pub(crate) fn build(&self, take: &mut impl FnMut(usize) -> Vec<f64>) -> Conv {
        let mut conv = Conv::new(self.in_c, self.out_c, self.k, self.stride, self.pad, self.act);
        conv.weights = take(self.out_c * self.in_c * self.k * self.k);
        conv.bias = take(self.out_c);
        conv
    }
}

/// One top-level backbone module.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModuleSpec {
    Conv(ConvSpec),
    C2f {
        in_c: usize,
        out_c: usize,
        /// Number of bottlenecks.
        n: usize,
        shortcut: bool,
        act: Act,
    },
    Sppf {
        in_c: usize,
        out_c: usize,
        k: usize,
        act: Act,
    },
}

impl ModuleSpec {
    pub fn out_channels(&self) -> usize {
        match self {
            ModuleSpec::Conv(c) => c.out_c,
            ModuleSpec::C2f { out_c, .. } => *out_c,
            ModuleSpec::Sppf { out_c, .. } => *out_c,
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            ModuleSpec::Conv(c) => c.in_c,
            ModuleSpec::C2f { in_c, .. } => *in_c,
            ModuleSpec::Sppf { in_c, .. } => *in_c,
        }
    }

    pub fn stride_factor(&self) -> usize {
        match self {
            ModuleSpec::Conv(c) => c.stride,
            _ => 1,
        }
    }

    /// C2f convolution layout: cv1 (1×1 expand to 2·hidden), per-bottleneck
    /// cv1/cv2 (3×3 over hidden), cv2 (1×1 fuse from (2+n)·hidden).
    fn conv_specs(&self) -> Vec<ConvSpec> {
        match self {
            ModuleSpec::Conv(c) => vec![c.clone()],
            ModuleSpec::C2f {
                in_c,
                out_c,
                n,
                act,
                ..
            } => {
                let hidden = out_c / 2;
                let mut specs = vec![ConvSpec {
                    in_c: *in_c,
                    out_c: 2 * hidden,
                    k: 1,
                    stride: 1,
                    pad: 0,
                    act: *act,
                }];
                for _ in 0..*n {
                    for _ in 0..2 {
                        specs.push(ConvSpec {
                            in_c: hidden,
                            out_c: hidden,
                            k: 3,
                            stride: 1,
                            pad: 1,
                            act: *act,
                        });
                    }
                }
                specs.push(ConvSpec {
                    in_c: (2 + n) * hidden,
                    out_c: *out_c,
                    k: 1,
                    stride: 1,
                    pad: 0,
                    act: *act,
                });
                specs
            }
            ModuleSpec::Sppf { in_c, out_c, k, act } => {
                let hidden = in_c / 2;
                vec![
                    ConvSpec {
                        in_c: *in_c,
                        out_c: hidden,
                        k: 1,
                        stride: 1,
                        pad: 0,
                        act: *act,
                    },
                    ConvSpec {
                        in_c: 4 * hidden,
                        out_c: *out_c,
                        k: *k,
                        stride: 1,
                        pad: k / 2,
                        act: *act,
                    },
                ]
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv_specs().iter().map(ConvSpec::param_count).sum()
    }

    pub fn build(&self, take: &mut impl FnMut(usize) -> Vec<f64>) -> Module {
        match self {
            ModuleSpec::Conv(c) => Module::Conv(c.build(take)),
            ModuleSpec::C2f {
                n, shortcut, ..
            } => {
                let specs = self.conv_specs();
                let cv1 = specs[0].build(take);
                let mut bottlenecks = Vec::with_capacity(*n);
                for i in 0..*n {
                    let b1 = specs[1 + 2 * i].build(take);
                    let b2 = specs[2 + 2 * i].build(take);
                    bottlenecks.push(Bottleneck { cv1: b1, cv2: b2 });
                }
                let cv2 = specs[specs.len() - 1].build(take);
                let hidden = cv1.out_c / 2;
                Module::C2f(C2f {
                    cv1,
                    cv2,
                    bottlenecks,
                    hidden,
                    shortcut: *shortcut,
                })
            }
            ModuleSpec::Sppf { k, .. } => {
                let specs = self.conv_specs();
                let cv1 = specs[0].build(take);
                let cv2 = specs[1].build(take);
                Module::Sppf(Sppf { cv1, cv2, k: *k })
            }
        }
    }
}

/// One detection scale of the head: convolutions applied to a backbone tap,
/// producing `4 + num_classes + num_protos` channels per cell
/// (ltrb box extents, class logits, mask coefficients).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HeadScaleSpec {
    /// Index of the backbone module whose output this scale reads.
    pub source: usize,
    pub convs: Vec<ConvSpec>,
}

/// Mask prototype branch: convolutions over a backbone tap producing
/// `num_protos` channels.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProtoSpec {
    pub source: usize,
    pub convs: Vec<ConvSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HeadSpec {
    pub num_classes: usize,
    pub num_protos: usize,
    /// IoU threshold for per-class non-maximum suppression.
    pub nms_iou: f64,
    pub max_detections: usize,
    pub scales: Vec<HeadScaleSpec>,
    pub proto: ProtoSpec,
}

impl HeadSpec {
    pub fn param_count(&self) -> usize {
        let scales: usize = self
            .scales
            .iter()
            .flat_map(|s| s.convs.iter())
            .map(ConvSpec::param_count)
            .sum();
        let proto: usize = self.proto.convs.iter().map(ConvSpec::param_count).sum();
        scales + proto
    }
}

/// Complete architecture description stored in the weights file header.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArchDescriptor {
    /// Input dimensions must be multiples of this (the deepest cumulative
    /// backbone stride).
    pub input_stride: usize,
    pub class_names: Vec<String>,
    pub backbone: Vec<ModuleSpec>,
    pub head: HeadSpec,
}

impl ArchDescriptor {
    pub fn param_count(&self) -> usize {
        self.backbone.iter().map(ModuleSpec::param_count).sum::<usize>()
            + self.head.param_count()
    }

    /// Cumulative spatial stride at the output of each backbone module.
    pub fn cumulative_strides(&self) -> Vec<usize> {
        let mut strides = Vec::with_capacity(self.backbone.len());
        let mut s = 1;
        for m in &self.backbone {
            s *= m.stride_factor();
            strides.push(s);
        }
        strides
    }

    /// Structural validation independent of weight data.
    pub fn validate(&self) -> Result<(), String> {
        if self.backbone.is_empty() {
            return Err("backbone has no modules".into());
        }
        if self.backbone[0].in_channels() != 3 {
            return Err("backbone must accept 3-channel input".into());
        }
        let mut prev = 3;
        for (i, m) in self.backbone.iter().enumerate() {
            if m.in_channels() != prev {
                return Err(format!(
                    "module {i} expects {} input channels, predecessor provides {prev}",
                    m.in_channels()
                ));
            }
            if let ModuleSpec::C2f { out_c, .. } = m {
                if out_c % 2 != 0 {
                    return Err(format!("module {i}: c2f output channels must be even"));
                }
            }
            prev = m.out_channels();
        }
        if self.head.num_classes == 0 {
            return Err("head declares zero classes".into());
        }
        if self.class_names.len() != self.head.num_classes {
            return Err(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.head.num_classes
            ));
        }
        if !(0.0..1.0).contains(&self.head.nms_iou) {
            return Err("nms_iou must be in [0, 1)".into());
        }
        let per_cell = 4 + self.head.num_classes + self.head.num_protos;
        for (si, scale) in self.head.scales.iter().enumerate() {
            let src = self
                .backbone
                .get(scale.source)
                .ok_or_else(|| format!("head scale {si} taps missing module {}", scale.source))?;
            let mut c = src.out_channels();
            for conv in &scale.convs {
                if conv.in_c != c {
                    return Err(format!("head scale {si}: conv chain channel mismatch"));
                }
                c = conv.out_c;
            }
            if c != per_cell {
                return Err(format!(
                    "head scale {si} emits {c} channels, expected {per_cell}"
                ));
            }
        }
        let src = self
            .backbone
            .get(self.head.proto.source)
            .ok_or_else(|| format!("proto branch taps missing module {}", self.head.proto.source))?;
        let mut c = src.out_channels();
        for conv in &self.head.proto.convs {
            if conv.in_c != c {
                return Err("proto branch: conv chain channel mismatch".into());
            }
            c = conv.out_c;
        }
        if c != self.head.num_protos {
            return Err(format!(
                "proto branch emits {c} channels, expected {}",
                self.head.num_protos
            ));
        }
        Ok(())
    }
}
