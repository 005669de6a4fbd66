//! Deterministic generators for small networks in the weights format, plus
//! synthetic scene renderers. Used by the test suites and by the demo-weights
//! example so the tool can run without externally trained checkpoints.
//!
//! The demo network mirrors the usual backbone layout (alternating strided
//! convolutions and C2f blocks, ending in SPPF). Channel 0 of the first two
//! modules carries a plain local-luminance signal; the head is constructed so
//! class 0 ("vase") responds to bright blobs on a dark background, with the
//! decision thresholds calibrated by probing the freshly built layers on a
//! rendered reference scene. All remaining channels are seeded random filters,
//! which is what the style losses consume.

use std::path::Path;

use rand_core::{RngCore, SeedableRng};

use crate::imaging::Image;
use crate::tensor::Tensor;

use super::arch::{ArchDescriptor, ConvSpec, HeadScaleSpec, HeadSpec, ModuleSpec, ProtoSpec};
use super::layers::Act;
use super::{BackboneModel, Device, NetworkError, TapSpec};

/// Background color of rendered scenes (dark slate, mean luminance 0.247).
pub const SCENE_BG: [f64; 3] = [0.22, 0.24, 0.28];

/// Bright blob colors with identical mean luminance (0.88), so every palette
/// entry clears the demo detector's threshold by the same margin.
pub fn blob_palette(i: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 3] = [
        [1.0, 0.88, 0.76],
        [0.76, 1.0, 0.88],
        [0.88, 0.76, 1.0],
    ];
    PALETTE[i % PALETTE.len()]
}

/// One rendered disk: a soft-edged bright blob.
#[derive(Debug, Clone, Copy)]
pub struct Blob {
    pub center_y: f64,
    pub center_x: f64,
    pub radius: f64,
    pub rgb: [f64; 3],
}

/// Renders blobs over the standard dark background. Edges fall off smoothly
/// over the outermost 3 pixels of the radius, and brightness dips slightly
/// toward the rim so each blob has a unique luminance peak at its center
/// (a flat interior would make detector cells tie exactly).
pub fn blob_scene(height: usize, width: usize, blobs: &[Blob]) -> Image {
    let mut img = Image::filled(height, width, SCENE_BG);
    for y in 0..height {
        for x in 0..width {
            let mut rgb = img.pixel(y, x);
            for b in blobs {
                let dy = y as f64 + 0.5 - b.center_y;
                let dx = x as f64 + 0.5 - b.center_x;
                let d = (dy * dy + dx * dx).sqrt();
                let t = ((b.radius - d) / 3.0).clamp(0.0, 1.0);
                let w = t * t * (3.0 - 2.0 * t);
                let shade = 1.0 - 0.12 * (d / b.radius).min(1.0).powi(2);
                for (px, &fg) in rgb.iter_mut().zip(&b.rgb) {
                    *px += (fg * shade - *px) * w;
                }
            }
            img.set_pixel(y, x, rgb);
        }
    }
    img
}

/// Smooth colorful pattern for use as a synthetic style image.
pub fn test_pattern(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5745_4156_4501);
    let params: Vec<(f64, f64, f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let freq_a = 0.02 + uniform(&mut rng) * 0.2;
            let phase_a = uniform(&mut rng) * std::f64::consts::TAU;
            let freq_b = 0.02 + uniform(&mut rng) * 0.2;
            let phase_b = uniform(&mut rng) * std::f64::consts::TAU;
            let freq_c = 0.02 + uniform(&mut rng) * 0.2;
            let phase_c = uniform(&mut rng) * std::f64::consts::TAU;
            (freq_a, phase_a, freq_b, phase_b, freq_c, phase_c)
        })
        .collect();
    let mut img = Image::filled(height, width, [0.0; 3]);
    for y in 0..height {
        for x in 0..width {
            let mut rgb = [0.0; 3];
            for (c, p) in params.iter().enumerate() {
                let v = (p.0 * x as f64 + p.1).sin()
                    + (p.2 * y as f64 + p.3).sin()
                    + (p.4 * (x + y) as f64 + p.5).sin();
                rgb[c] = 0.5 + v / 6.0;
            }
            img.set_pixel(y, x, rgb);
        }
    }
    img
}

/// Diagonal two-color stripes; a strongly oriented, high-contrast style.
pub fn stripe_pattern(
    height: usize,
    width: usize,
    period: usize,
    rgb_a: [f64; 3],
    rgb_b: [f64; 3],
) -> Image {
    let period = period.max(2);
    let mut img = Image::filled(height, width, [0.0; 3]);
    for y in 0..height {
        for x in 0..width {
            let band = ((x + y) / period) % 2;
            img.set_pixel(y, x, if band == 0 { rgb_a } else { rgb_b });
        }
    }
    img
}

/// Independent per-pixel noise; maximal high-frequency style statistics.
pub fn noise_pattern(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x4e_4f49_5345);
    let data = (0..height * width * 3).map(|_| uniform(&mut rng)).collect();
    Image::from_data(height, width, data).expect("noise matches requested shape")
}

fn uniform(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Kaiming-style uniform weights for one convolution; zero bias.
fn random_conv_params(
    rng: &mut rand_chacha::ChaCha8Rng,
    in_c: usize,
    out_c: usize,
    k: usize,
) -> Vec<f64> {
    let fan_in = (in_c * k * k) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let mut params: Vec<f64> = (0..out_c * in_c * k * k)
        .map(|_| (uniform(rng) * 2.0 - 1.0) * bound)
        .collect();
    params.extend(std::iter::repeat_n(0.0, out_c));
    params
}

fn random_module_params(
    rng: &mut rand_chacha::ChaCha8Rng,
    spec: &ModuleSpec,
) -> Vec<f64> {
    match spec {
        ModuleSpec::Conv(c) => random_conv_params(rng, c.in_c, c.out_c, c.k),
        ModuleSpec::C2f { in_c, out_c, n, .. } => {
            let hidden = out_c / 2;
            let mut p = random_conv_params(rng, *in_c, 2 * hidden, 1);
            for _ in 0..*n {
                p.extend(random_conv_params(rng, hidden, hidden, 3));
                p.extend(random_conv_params(rng, hidden, hidden, 3));
            }
            p.extend(random_conv_params(rng, (2 + n) * hidden, *out_c, 1));
            p
        }
        ModuleSpec::Sppf { in_c, out_c, k, .. } => {
            let hidden = in_c / 2;
            let mut p = random_conv_params(rng, *in_c, hidden, 1);
            p.extend(random_conv_params(rng, 4 * hidden, *out_c, *k));
            p
        }
    }
}

fn conv_spec(in_c: usize, out_c: usize, k: usize, stride: usize, act: Act) -> ConvSpec {
    ConvSpec {
        in_c,
        out_c,
        k,
        stride,
        pad: k / 2,
        act,
    }
}

/// Two stacked convolutions, the stand-in backbone used by the gradient
/// checks. Both layers are SiLU so the check exercises a smooth nonlinearity.
pub fn standin_arch() -> ArchDescriptor {
    ArchDescriptor {
        input_stride: 2,
        class_names: vec!["object".into()],
        backbone: vec![
            ModuleSpec::Conv(conv_spec(3, 4, 3, 1, Act::Silu)),
            ModuleSpec::Conv(conv_spec(4, 6, 3, 2, Act::Silu)),
        ],
        head: HeadSpec {
            num_classes: 1,
            num_protos: 1,
            nms_iou: 0.45,
            max_detections: 16,
            scales: vec![HeadScaleSpec {
                source: 1,
                convs: vec![conv_spec(6, 6, 1, 1, Act::Linear)],
            }],
            proto: ProtoSpec {
                source: 0,
                convs: vec![conv_spec(4, 1, 1, 1, Act::Linear)],
            },
        },
    }
}

/// Builds the stand-in backbone with fixed seeded random weights, tapping
/// both convolutions for style and the last for content.
pub fn standin_model(seed: u64) -> BackboneModel {
    let arch = standin_arch();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(arch.param_count());
    for m in &arch.backbone {
        params.extend(random_module_params(&mut rng, m));
    }
    // Head parameters are never used for gradients; zero them.
    params.extend(std::iter::repeat_n(0.0, arch.head.param_count()));
    let taps = TapSpec {
        content_layer: 1,
        style_layers: vec![0, 1],
    };
    BackboneModel::from_parts(arch, &params, taps, format!("standin(seed={seed})"), Device::Cpu)
        .expect("stand-in architecture is valid")
}

const DEMO_BLOB_RADIUS: f64 = 20.0;
const DEMO_BOX_EXTENT_CELLS: f64 = 6.0;

/// The demo backbone: a scaled-down darknet-style module sequence whose
/// default taps (content 7, style 1/3/5/7) are all valid.
pub fn demo_arch() -> ArchDescriptor {
    ArchDescriptor {
        input_stride: 32,
        class_names: vec!["vase".into(), "bird".into()],
        backbone: vec![
            ModuleSpec::Conv(conv_spec(3, 8, 3, 2, Act::Linear)),
            ModuleSpec::Conv(conv_spec(8, 16, 3, 2, Act::Linear)),
            ModuleSpec::C2f {
                in_c: 16,
                out_c: 16,
                n: 1,
                shortcut: true,
                act: Act::Silu,
            },
            ModuleSpec::Conv(conv_spec(16, 32, 3, 2, Act::Silu)),
            ModuleSpec::C2f {
                in_c: 32,
                out_c: 32,
                n: 1,
                shortcut: true,
                act: Act::Silu,
            },
            ModuleSpec::Conv(conv_spec(32, 48, 3, 2, Act::Silu)),
            ModuleSpec::C2f {
                in_c: 48,
                out_c: 48,
                n: 1,
                shortcut: true,
                act: Act::Silu,
            },
            ModuleSpec::Conv(conv_spec(48, 64, 3, 2, Act::Silu)),
            ModuleSpec::C2f {
                in_c: 64,
                out_c: 64,
                n: 1,
                shortcut: true,
                act: Act::Silu,
            },
            ModuleSpec::Sppf {
                in_c: 64,
                out_c: 64,
                k: 5,
                act: Act::Silu,
            },
        ],
        head: HeadSpec {
            num_classes: 2,
            num_protos: 4,
            nms_iou: 0.1,
            max_detections: 50,
            scales: vec![HeadScaleSpec {
                source: 1,
                convs: vec![conv_spec(16, 10, 1, 1, Act::Linear)],
            }],
            proto: ProtoSpec {
                source: 1,
                convs: vec![conv_spec(16, 4, 1, 1, Act::Linear)],
            },
        },
    }
}

/// Generates the demo network: architecture plus calibrated parameters.
pub fn demo_params(seed: u64) -> (ArchDescriptor, Vec<f64>) {
    let arch = demo_arch();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    // Backbone, module by module. Channel 0 of modules 0 and 1 is overwritten
    // with normalized box filters so it carries local mean luminance.
    let mut backbone_params: Vec<Vec<f64>> = Vec::new();
    for (i, m) in arch.backbone.iter().enumerate() {
        let mut p = random_module_params(&mut rng, m);
        if i == 0 {
            // out channel 0: mean over the 3 input channels and 3x3 window.
            for w in p.iter_mut().take(3 * 9) {
                *w = 1.0 / 27.0;
            }
        }
        if i == 1 {
            // out channel 0: 3x3 box over input channel 0 only.
            for (j, w) in p.iter_mut().take(8 * 9).enumerate() {
                *w = if j < 9 { 1.0 / 9.0 } else { 0.0 };
            }
        }
        backbone_params.push(p);
    }

    // Build modules 0 and 1 to probe the luminance response.
    let mut built = Vec::new();
    for (spec, p) in arch.backbone.iter().zip(&backbone_params).take(2) {
        let mut cursor = 0usize;
        let mut take = |n: usize| {
            let s = p[cursor..cursor + n].to_vec();
            cursor += n;
            s
        };
        built.push(spec.build(&mut take));
    }
    let probe = |img: &Image| -> Tensor {
        let mut x = Tensor::from_image(img);
        for m in &built {
            x = m.forward(&x, None);
        }
        x
    };

    let side = 96usize;
    let blob = Blob {
        center_y: side as f64 / 2.0,
        center_x: side as f64 / 2.0,
        radius: DEMO_BLOB_RADIUS,
        rgb: blob_palette(0),
    };
    let bright = probe(&blob_scene(side, side, &[blob]));
    let bright_peak = bright
        .channel(0)
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let center = |t: &Tensor| t.get(0, t.height() / 2, t.width() / 2);
    let gray_resp = center(&probe(&Image::filled(side, side, [0.5; 3])));
    let bg_resp = center(&probe(&blob_scene(side, side, &[])));

    // Class threshold sits midway between a bright blob and a 0.5 gray field;
    // the mask threshold midway between a blob and the scene background.
    let t_class = 0.5 * (bright_peak + gray_resp);
    let g_class = 12.0 / (bright_peak - t_class);
    let t_mask = 0.5 * (bright_peak + bg_resp);
    let g_mask = 14.0 / (bright_peak - t_mask);

    // Detect conv: 16 -> 10 (ltrb, 2 class logits, 4 mask coefficients).
    let mut detect_w = vec![0.0; 10 * 16];
    let mut detect_b = vec![0.0; 10];
    detect_b[0] = DEMO_BOX_EXTENT_CELLS;
    detect_b[1] = DEMO_BOX_EXTENT_CELLS;
    detect_b[2] = DEMO_BOX_EXTENT_CELLS;
    detect_b[3] = DEMO_BOX_EXTENT_CELLS;
    detect_w[4 * 16] = g_class; // "vase" logit reads channel 0
    detect_b[4] = -g_class * t_class;
    detect_b[5] = -12.0; // "bird" never fires
    detect_b[6] = 1.0; // select prototype 0
    let mut proto_w = vec![0.0; 4 * 16];
    let mut proto_b = vec![0.0; 4];
    proto_w[0] = g_mask;
    proto_b[0] = -g_mask * t_mask;

    let mut params: Vec<f64> = backbone_params.into_iter().flatten().collect();
    params.extend(detect_w);
    params.extend(detect_b);
    params.extend(proto_w);
    params.extend(proto_b);
    debug_assert_eq!(params.len(), arch.param_count());
    (arch, params)
}

/// In-memory demo model with the default tap spec.
pub fn demo_model(seed: u64) -> BackboneModel {
    let (arch, params) = demo_params(seed);
    BackboneModel::from_parts(
        arch,
        &params,
        TapSpec::default(),
        format!("demo(seed={seed})"),
        Device::Cpu,
    )
    .expect("demo architecture is valid")
}

/// Writes the demo network to a weights file.
pub fn write_demo_weights(path: impl AsRef<Path>, seed: u64) -> Result<(), NetworkError> {
    let (arch, params) = demo_params(seed);
    super::weights::write_weights(path.as_ref(), &arch, &params)
}

/// A three-blob scene sized for multi-object tests: same-class blobs spaced
/// far enough apart that suppression never merges them. Needs at least
/// 248x80 pixels to keep all three blobs inside the frame.
pub fn three_blob_scene(height: usize, width: usize) -> Image {
    assert!(
        width >= 248 && height >= 80,
        "three-blob scene needs >= 248x80 pixels, got {width}x{height}"
    );
    let cx = width as f64 / 2.0;
    let cy = height as f64 / 2.0;
    let spread = (width as f64 / 2.0 - 48.0).max(96.0);
    let blobs = [
        Blob {
            center_y: cy,
            center_x: cx - spread,
            radius: DEMO_BLOB_RADIUS,
            rgb: blob_palette(0),
        },
        Blob {
            center_y: cy,
            center_x: cx,
            radius: DEMO_BLOB_RADIUS,
            rgb: blob_palette(1),
        },
        Blob {
            center_y: cy,
            center_x: cx + spread,
            radius: DEMO_BLOB_RADIUS,
            rgb: blob_palette(2),
        },
    ];
    blob_scene(height, width, &blobs)
}
