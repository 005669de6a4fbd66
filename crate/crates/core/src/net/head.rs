//! Segmentation head: decodes per-cell predictions from the tapped backbone
//! features into boxes, class confidences and instance masks.
//!
//! Per cell a scale emits `4 + nc + nm` channels: ltrb box extents (ReLU,
//! in stride units), class logits (sigmoid), and mask coefficients. Masks are
//! the sigmoid of the coefficient-weighted prototype sum, upsampled to image
//! resolution and cropped to the detection box.

use std::collections::BTreeMap;

use crate::imaging::Plane;
use crate::tensor::Tensor;

use super::arch::HeadSpec;
use super::layers::{sigmoid, Conv};
use super::Detection;

/// Built (weight-bearing) head.
#[derive(Debug)]
pub struct Head {
    pub spec: HeadSpec,
    pub scale_convs: Vec<Vec<Conv>>,
    pub proto_convs: Vec<Conv>,
}

struct Candidate {
    bbox: (f64, f64, f64, f64),
    confidence: f64,
    class_idx: usize,
    coeffs: Vec<f64>,
    /// (scale index, cell linear index): deterministic tie-break key.
    order: (usize, usize),
}

impl Head {
    /// Runs the head over the tapped backbone outputs and assembles the final
    /// detection list, sorted by descending confidence.
    pub fn detect(
        &self,
        taps: &BTreeMap<usize, Tensor>,
        strides: &[usize],
        image_h: usize,
        image_w: usize,
        conf_threshold: f64,
        class_names: &[String],
    ) -> Vec<Detection> {
        let nc = self.spec.num_classes;
        let nm = self.spec.num_protos;

        // Prototype maps at their tap resolution.
        let proto_src = &taps[&self.spec.proto.source];
        let mut protos = proto_src.clone();
        for conv in &self.proto_convs {
            protos = conv.forward(&protos, None);
        }

        let mut candidates: Vec<Candidate> = Vec::new();
        for (si, scale) in self.spec.scales.iter().enumerate() {
            let stride = strides[scale.source] as f64;
            let mut feat = taps[&scale.source].clone();
            for conv in &self.scale_convs[si] {
                feat = conv.forward(&feat, None);
            }
            let (h, w) = (feat.height(), feat.width());
            for cy in 0..h {
                for cx in 0..w {
                    let mut best_class = 0usize;
                    let mut best_logit = f64::NEG_INFINITY;
                    for c in 0..nc {
                        let logit = feat.get(4 + c, cy, cx);
                        if logit > best_logit {
                            best_logit = logit;
                            best_class = c;
                        }
                    }
                    let confidence = sigmoid(best_logit);
                    if confidence < conf_threshold {
                        continue;
                    }
                    let center_x = (cx as f64 + 0.5) * stride;
                    let center_y = (cy as f64 + 0.5) * stride;
                    let ext = |ch: usize| feat.get(ch, cy, cx).max(0.0) * stride;
                    let x1 = (center_x - ext(0)).clamp(0.0, image_w as f64);
                    let y1 = (center_y - ext(1)).clamp(0.0, image_h as f64);
                    let x2 = (center_x + ext(2)).clamp(0.0, image_w as f64);
                    let y2 = (center_y + ext(3)).clamp(0.0, image_h as f64);
                    if x2 <= x1 || y2 <= y1 {
                        continue;
                    }
                    let coeffs = (0..nm).map(|m| feat.get(4 + nc + m, cy, cx)).collect();
                    candidates.push(Candidate {
                        bbox: (x1, y1, x2, y2),
                        confidence,
                        class_idx: best_class,
                        coeffs,
                        order: (si, cy * w + cx),
                    });
                }
            }
        }

        let keep = nms_per_class(&mut candidates, self.spec.nms_iou);
        let kept = keep.len().min(self.spec.max_detections);

        let mut detections = Vec::with_capacity(kept);
        for &i in keep.iter().take(kept) {
            let cand = &candidates[i];
            let mask = self.assemble_mask(&protos, cand, image_h, image_w);
            detections.push(Detection {
                mask,
                class_label: class_names
                    .get(cand.class_idx)
                    .cloned()
                    .unwrap_or_else(|| format!("class{}", cand.class_idx)),
                confidence: cand.confidence,
                bbox: cand.bbox,
            });
        }
        detections
    }

    /// Sigmoid of the coefficient-weighted prototype sum, bilinearly upsampled
    /// to image resolution and cropped to the detection box.
    fn assemble_mask(
        &self,
        protos: &Tensor,
        cand: &Candidate,
        image_h: usize,
        image_w: usize,
    ) -> Plane {
        let (ph, pw) = (protos.height(), protos.width());
        let mut logit = Plane::new(ph, pw, 0.0);
        for (m, &coeff) in cand.coeffs.iter().enumerate() {
            let ch = protos.channel(m);
            for (dst, &src) in logit.data_mut().iter_mut().zip(ch) {
                *dst += coeff * src;
            }
        }
        for v in logit.data_mut() {
            *v = sigmoid(*v);
        }
        let mut mask = logit.resize_bilinear(image_h, image_w);
        let (x1, y1, x2, y2) = cand.bbox;
        for y in 0..image_h {
            let yf = y as f64 + 0.5;
            for x in 0..image_w {
                let xf = x as f64 + 0.5;
                if xf < x1 || xf > x2 || yf < y1 || yf > y2 {
                    mask.set(y, x, 0.0);
                }
            }
        }
        mask
    }
}

/// Per-class non-maximum suppression. Candidates are ranked by confidence
/// (ties broken by scale then cell index, so the result is deterministic);
/// returns indices of survivors in rank order.
fn nms_per_class(candidates: &mut [Candidate], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .confidence
            .partial_cmp(&candidates[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(candidates[a].order.cmp(&candidates[b].order))
    });
    let mut keep: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = keep.iter().any(|&j| {
            candidates[j].class_idx == candidates[i].class_idx
                && iou(candidates[j].bbox, candidates[i].bbox) > iou_threshold
        });
        if !suppressed {
            keep.push(i);
        }
    }
    keep
}

pub fn iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let ix = (a.2.min(b.2) - a.0.max(b.0)).max(0.0);
    let iy = (a.3.min(b.3) - a.1.max(b.1)).max(0.0);
    let inter = ix * iy;
    let area_a = (a.2 - a.0) * (a.3 - a.1);
    let area_b = (b.2 - b.0) * (b.3 - b.1);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
