//! Acceptance suite. Each test checks one release criterion end to end and
//! prints a `criterion N (...): PASS` line (run with `-- --nocapture` to see
//! them). Tolerances are pinned here, not configurable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ostk_core::blending::{binarize, composite, isolate};
use ostk_core::imaging::{self, Image, Plane, ResizeMode};
use ostk_core::net::{netgen, FeatureMap};
use ostk_core::pipeline::{self, JobConfig, RunConfig};
use ostk_core::styletransfer::{self, content_loss, gram, style_loss, total_loss, StyleTransferConfig};
use ostk_core::tensor::Tensor;

use rand_core::{RngCore, SeedableRng};

fn uniform(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn random_feature(rng: &mut rand_chacha::ChaCha8Rng, layer: usize) -> FeatureMap {
    let c = 1 + (rng.next_u64() % 4) as usize;
    let h = 1 + (rng.next_u64() % 6) as usize;
    let w = 1 + (rng.next_u64() % 6) as usize;
    let data = (0..c * h * w).map(|_| uniform(rng) * 2.0 - 1.0).collect();
    FeatureMap {
        layer_index: layer,
        activations: Tensor::from_data(c, h, w, data).unwrap(),
        differentiable: false,
    }
}

/// Criterion 1: gram, content_loss, style_loss and total_loss agree with
/// independent scalar brute-force oracles on >= 1000 randomized small
/// tensors, relative error < 1e-6, in under a minute.
#[test]
fn criterion_1_loss_math_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xACCE97);
    let mut cases = 0usize;
    let mut max_rel = 0.0f64;

    for _ in 0..1000 {
        // gram oracle: element-order outer-product accumulation.
        let f = random_feature(&mut rng, 1);
        let t = &f.activations;
        let (c, h, w) = t.shape();
        let n = (c * h * w) as f64;
        let g = gram(&f).unwrap();
        for i in 0..c {
            for j in 0..c {
                let mut acc = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        acc += t.get(i, y, x) * t.get(j, y, x);
                    }
                }
                let want = acc / n;
                let got = g.get(i, j);
                let err = if want == 0.0 && got == 0.0 { 0.0 } else { rel_err(got, want) };
                assert!(err < 1e-6, "gram[{i}][{j}] {got} vs {want}");
                max_rel = max_rel.max(err);
            }
        }

        // content oracle: scalar double loop over the same shape.
        let other = FeatureMap {
            layer_index: 1,
            activations: Tensor::from_data(
                c,
                h,
                w,
                (0..c * h * w).map(|_| uniform(&mut rng) * 2.0 - 1.0).collect(),
            )
            .unwrap(),
            differentiable: false,
        };
        let got_c = content_loss(&f, &other).unwrap();
        let mut acc = 0.0;
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let d = t.get(ci, y, x) - other.activations.get(ci, y, x);
                    acc += d * d;
                }
            }
        }
        let want_c = acc / n;
        let err = rel_err(got_c, want_c);
        assert!(err < 1e-6, "content {got_c} vs {want_c}");
        max_rel = max_rel.max(err);

        // style oracle: per-layer gram mse scalar loops with weights.
        let layers = [1usize, 2];
        let mut feats = BTreeMap::new();
        let mut grams = BTreeMap::new();
        let mut weights = BTreeMap::new();
        let mut oracle_style = 0.0;
        let mut pasts = BTreeMap::new();
        for &l in &layers {
            let c2 = 1 + (rng.next_u64() % 4) as usize;
            let h2 = 1 + (rng.next_u64() % 6) as usize;
            let w2 = 1 + (rng.next_u64() % 6) as usize;
            let make = |rng: &mut rand_chacha::ChaCha8Rng| {
                Tensor::from_data(
                    c2,
                    h2,
                    w2,
                    (0..c2 * h2 * w2).map(|_| uniform(rng) * 2.0 - 1.0).collect(),
                )
                .unwrap()
            };
            let pastiche_t = make(&mut rng);
            let style_t = make(&mut rng);
            let weight = uniform(&mut rng) * 2.0;
            let style_fm = FeatureMap {
                layer_index: l,
                activations: style_t,
                differentiable: false,
            };
            grams.insert(l, gram(&style_fm).unwrap());
            feats.insert(
                l,
                FeatureMap {
                    layer_index: l,
                    activations: pastiche_t.clone(),
                    differentiable: false,
                },
            );
            weights.insert(l, weight);
            pasts.insert(l, (pastiche_t, style_fm.activations, weight));
        }
        for (p, s, weight) in pasts.values() {
            let (c2, h2, w2) = p.shape();
            let n2 = (c2 * h2 * w2) as f64;
            let gram_of = |t: &Tensor, i: usize, j: usize| {
                let mut acc = 0.0;
                for y in 0..h2 {
                    for x in 0..w2 {
                        acc += t.get(i, y, x) * t.get(j, y, x);
                    }
                }
                acc / n2
            };
            let mut mse = 0.0;
            for i in 0..c2 {
                for j in 0..c2 {
                    let d = gram_of(p, i, j) - gram_of(s, i, j);
                    mse += d * d;
                }
            }
            oracle_style += weight * (mse / (c2 * c2) as f64);
        }
        let got_s = style_loss(&feats, &grams, &weights).unwrap();
        let err = if got_s == 0.0 && oracle_style == 0.0 { 0.0 } else { rel_err(got_s, oracle_style) };
        assert!(err < 1e-6, "style {got_s} vs {oracle_style}");
        max_rel = max_rel.max(err);

        // total: alpha*lc + beta*ls in the reverse association.
        let mut cfg = StyleTransferConfig::for_style_layers(&[1]);
        cfg.alpha = uniform(&mut rng) * 10.0;
        cfg.beta = uniform(&mut rng) * 1e6 + 1.0;
        let got_t = total_loss(got_c, got_s, &cfg);
        let want_t = cfg.beta * got_s + cfg.alpha * got_c;
        let err = rel_err(got_t, want_t);
        assert!(err < 1e-6, "total {got_t} vs {want_t}");
        max_rel = max_rel.max(err);

        cases += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(cases >= 1000);
    assert!(secs < 60.0, "oracle suite took {secs:.1}s, budget 60s");
    println!(
        "criterion 1 (loss-math oracle equivalence): PASS — {cases} cases, max rel err {max_rel:.2e}, {secs:.2}s"
    );
}

/// Criterion 2: analytic pixel gradients of the total loss match central
/// finite differences (h = 1e-3) on the tiny stand-in backbone, relative
/// error < 1e-4 on >= 100 sampled pixels, in under two minutes.
#[test]
fn criterion_2_gradient_correctness() {
    let started = Instant::now();
    let model = netgen::standin_model(3);
    let mut content = netgen::test_pattern(12, 12, 8);
    let mut style = netgen::test_pattern(12, 12, 9);
    for v in content.data_mut() {
        *v = 0.25 + 0.5 * *v;
    }
    for v in style.data_mut() {
        *v = 0.25 + 0.5 * *v;
    }
    let mut cfg = StyleTransferConfig::for_style_layers(&model.tap_spec().style_layers);
    cfg.alpha = 1.0;
    cfg.beta = 3.0;
    let content_layer = model.tap_spec().content_layer;

    let style_acts = model.extract_features(&style, false).unwrap();
    let content_acts = model.extract_features(&content, false).unwrap();
    let grams_style: BTreeMap<usize, _> = cfg
        .layer_weights
        .keys()
        .map(|&l| (l, gram(&style_acts.features()[&l]).unwrap()))
        .collect();

    let loss_of = |img: &Image| -> f64 {
        let acts = model.extract_features(img, false).unwrap();
        let lc = content_loss(
            &acts.features()[&content_layer],
            &content_acts.features()[&content_layer],
        )
        .unwrap();
        let feats: BTreeMap<usize, FeatureMap> = acts
            .features()
            .iter()
            .filter(|(l, _)| cfg.layer_weights.contains_key(l))
            .map(|(&l, f)| (l, f.clone()))
            .collect();
        let ls = style_loss(&feats, &grams_style, &cfg.layer_weights).unwrap();
        total_loss(lc, ls, &cfg)
    };

    // Analytic gradient: closed-form tap adjoints pushed through the backbone.
    let acts = model.extract_features(&content, true).unwrap();
    let mut tap_grads: BTreeMap<usize, Tensor> = BTreeMap::new();
    {
        let feat = &acts.features()[&content_layer].activations;
        let target = &content_acts.features()[&content_layer].activations;
        let scale = 2.0 * cfg.alpha / feat.len() as f64;
        let mut g = Tensor::zeros(feat.channels(), feat.height(), feat.width());
        for ((gv, &a), &b) in g.data_mut().iter_mut().zip(feat.data()).zip(target.data()) {
            *gv = scale * (a - b);
        }
        tap_grads.insert(content_layer, g);
    }
    for (&layer, &weight) in &cfg.layer_weights {
        let feat = &acts.features()[&layer].activations;
        let (c, h, w) = feat.shape();
        let g_p = gram(&acts.features()[&layer]).unwrap();
        let g_s = &grams_style[&layer];
        let scale = 4.0 * cfg.beta * weight / ((c * c) as f64 * g_p.normalizer());
        let mut grad = Tensor::zeros(c, h, w);
        for i in 0..c {
            for j in 0..c {
                let d = g_p.get(i, j) - g_s.get(i, j);
                for k in 0..h * w {
                    grad.channel_mut(i)[k] += scale * d * feat.channel(j)[k];
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
    let analytic = acts.backward(&model, &tap_grads).unwrap();

    let h_step = 1e-3;
    let mut checked = 0usize;
    let mut max_rel = 0.0f64;
    for i in (0..content.data().len()).step_by(4) {
        let mut plus = content.clone();
        plus.data_mut()[i] += h_step;
        let mut minus = content.clone();
        minus.data_mut()[i] -= h_step;
        let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h_step);
        let c = i % 3;
        let pix = i / 3;
        let (y, x) = (pix / content.width(), pix % content.width());
        let got = analytic.get(c, y, x);
        let rel = (numeric - got).abs() / numeric.abs().max(got.abs()).max(1e-6);
        assert!(rel < 1e-4, "pixel {i}: numeric {numeric} vs analytic {got}");
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(checked >= 100, "{checked} pixels sampled");
    assert!(secs < 120.0, "gradient check took {secs:.1}s, budget 120s");
    println!(
        "criterion 2 (gradient correctness): PASS — {checked} pixels, max rel err {max_rel:.2e}, {secs:.2}s"
    );
}

/// Criterion 3: 128x128 descent fixture at the default settings (alpha 1,
/// beta 1e6, 200 iterations, seed 0, single-threaded): the final total loss
/// falls below half the initial, the style term by at least half, in under
/// five minutes on CPU.
///
/// First verified run of this fixture measured total 5.74e2 -> 1.07e0 and
/// style 5.74e-4 -> 1.00e-6 in ~6.5s, so the pinned 0.5x bounds hold with
/// two orders of magnitude of margin.
#[test]
fn criterion_3_descent_fixture() {
    let started = Instant::now();
    let model = netgen::demo_model(0);
    let content = netgen::blob_scene(
        128,
        128,
        &[netgen::Blob {
            center_y: 64.0,
            center_x: 64.0,
            radius: 20.0,
            rgb: netgen::blob_palette(0),
        }],
    );
    let style = netgen::test_pattern(128, 128, 100);
    let mut cfg = StyleTransferConfig::for_style_layers(&model.tap_spec().style_layers);
    cfg.alpha = 1.0;
    cfg.beta = 1e6;
    cfg.iterations = 200;
    cfg.seed = 0;

    let (out, trace) = styletransfer::stylize(&model, &content, &style, &cfg, None).unwrap();
    let first = trace.first().unwrap();
    let last = trace.last().unwrap();
    assert!(first.total_loss > 0.0);
    assert!(
        last.total_loss < 0.5 * first.total_loss,
        "total loss {} -> {} (needs < 0.5x)",
        first.total_loss,
        last.total_loss
    );
    assert!(
        last.style_loss <= 0.5 * first.style_loss,
        "style loss {} -> {} (needs >= 50% decrease)",
        first.style_loss,
        last.style_loss
    );
    assert!(out.in_range());
    assert_eq!(trace.len(), 200);
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 300.0, "descent fixture took {secs:.1}s, budget 300s");
    println!(
        "criterion 3 (descent fixture): PASS — total {:.3e} -> {:.3e}, style {:.3e} -> {:.3e}, {secs:.1}s",
        first.total_loss, last.total_loss, first.style_loss, last.style_loss
    );
}

fn write_inputs(dir: &Path, height: usize, width: usize) -> (PathBuf, Vec<PathBuf>, PathBuf) {
    let content_path = dir.join("content.png");
    imaging::save_image(&netgen::three_blob_scene(height, width), &content_path).unwrap();
    // Three styles from different families so their Gram targets are far
    // apart: smooth sinusoids, hard stripes, dense noise.
    let style_images = [
        netgen::test_pattern(128, 128, 300),
        netgen::stripe_pattern(128, 128, 6, [0.95, 0.85, 0.2], [0.1, 0.2, 0.6]),
        netgen::noise_pattern(128, 128, 301),
    ];
    let mut styles = Vec::new();
    for (i, img) in style_images.iter().enumerate() {
        let p = dir.join(format!("style{i}.png"));
        imaging::save_image(img, &p).unwrap();
        styles.push(p);
    }
    let weights = dir.join("demo.ostw");
    netgen::write_demo_weights(&weights, 0).unwrap();
    (content_path, styles, weights)
}

fn load_mask(path: &Path) -> Plane {
    let img = imaging::load_image(path).unwrap();
    let mut plane = Plane::new(img.height(), img.width(), 0.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            plane.set(y, x, img.pixel(y, x)[0]);
        }
    }
    plane
}

/// Criterion 4: with feathering off, every pixel outside the union of the
/// target masks in final.png is bit-identical to the resized content.
/// Zero tolerance.
#[test]
fn criterion_4_object_preservation() {
    let dir = tempfile::tempdir().unwrap();
    let (content_path, styles, _) = write_inputs(dir.path(), 192, 256);
    let model = netgen::demo_model(0);
    let out = dir.path().join("out");
    let cfg = RunConfig {
        content: content_path.display().to_string(),
        out: out.display().to_string(),
        size: 256,
        iterations: 12,
        feather: 0,
        jobs: vec![
            JobConfig {
                style: styles[0].display().to_string(),
                target: "vase:0".into(),
                feather: None,
                alpha: None,
                beta: None,
                iterations: None,
            },
            JobConfig {
                style: styles[1].display().to_string(),
                target: "vase:1".into(),
                feather: None,
                alpha: None,
                beta: None,
                iterations: None,
            },
        ],
        ..RunConfig::default()
    };
    let manifest = pipeline::run(&model, &cfg).unwrap();

    let content = imaging::load_image(&content_path).unwrap();
    let resized = imaging::resize(
        &content,
        manifest.working_height,
        manifest.working_width,
        ResizeMode::Bilinear,
    )
    .unwrap();
    let reference = imaging::quantize_rgb8(&resized);
    let final_img = imaging::load_image(out.join("final.png")).unwrap();
    let final_bytes = imaging::quantize_rgb8(&final_img);

    let masks: Vec<Plane> = manifest
        .jobs
        .iter()
        .map(|j| load_mask(&out.join(j.artifacts.mask.as_ref().unwrap())))
        .collect();
    let (wh, ww) = (manifest.working_height, manifest.working_width);
    let mut outside = 0usize;
    let mut mismatches = 0usize;
    for y in 0..wh {
        for x in 0..ww {
            let inside = masks.iter().any(|m| m.get(y, x) > 0.0);
            if !inside {
                outside += 1;
                let i = (y * ww + x) * 3;
                if final_bytes[i..i + 3] != reference[i..i + 3] {
                    mismatches += 1;
                }
            }
        }
    }
    assert!(outside > 0);
    assert_eq!(mismatches, 0, "{mismatches} background pixels changed");
    println!(
        "criterion 4 (object preservation): PASS — {outside} background pixels bit-identical"
    );
}

/// Criterion 5: three same-class detections, three distinct styles mapped by
/// ordinal selectors at 512 long side. The three stylized regions differ
/// pairwise (mean absolute pixel difference > 0.02 over each mask-pair
/// union) and the background stays bit-identical. Under 15 minutes on CPU.
#[test]
fn criterion_5_multi_object_multi_style() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (content_path, styles, _) = write_inputs(dir.path(), 384, 512);
    let model = netgen::demo_model(0);
    let out = dir.path().join("out");
    let job = |style: &Path, target: &str| JobConfig {
        style: style.display().to_string(),
        target: target.into(),
        feather: None,
        alpha: None,
        beta: None,
        iterations: None,
    };
    let cfg = RunConfig {
        content: content_path.display().to_string(),
        out: out.display().to_string(),
        size: 512,
        iterations: 60,
        feather: 0,
        jobs: vec![
            job(&styles[0], "vase:0"),
            job(&styles[1], "vase:1"),
            job(&styles[2], "vase:2"),
        ],
        ..RunConfig::default()
    };
    let manifest = pipeline::run(&model, &cfg).unwrap();
    assert!(
        manifest.detections.len() >= 3,
        "need >= 3 detections, got {}",
        manifest.detections.len()
    );
    assert!(manifest.detections.iter().all(|d| d.class == "vase"));
    let resolved: Vec<&Vec<usize>> = manifest.jobs.iter().map(|j| &j.resolved_detections).collect();
    for i in 0..3 {
        for j in i + 1..3 {
            assert_ne!(resolved[i], resolved[j], "ordinals resolved to the same object");
        }
    }

    let (wh, ww) = (manifest.working_height, manifest.working_width);
    let masks: Vec<Plane> = manifest
        .jobs
        .iter()
        .map(|jr| load_mask(&out.join(jr.artifacts.mask.as_ref().unwrap())))
        .collect();
    let styled: Vec<Image> = manifest
        .jobs
        .iter()
        .map(|jr| imaging::load_image(out.join(jr.artifacts.styled_full.as_ref().unwrap())).unwrap())
        .collect();

    // Pairwise distinctness of the styled results over each mask-pair union.
    for i in 0..3 {
        for j in i + 1..3 {
            let mut diff = 0.0;
            let mut count = 0usize;
            for y in 0..wh {
                for x in 0..ww {
                    if masks[i].get(y, x) > 0.0 || masks[j].get(y, x) > 0.0 {
                        let a = styled[i].pixel(y, x);
                        let b = styled[j].pixel(y, x);
                        diff += ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs())
                            / 3.0;
                        count += 1;
                    }
                }
            }
            let mean = diff / count.max(1) as f64;
            assert!(
                mean > 0.02,
                "styled regions {i} and {j} too similar: mean abs diff {mean:.4}"
            );
        }
    }

    // Criterion 4 globally: untouched outside the union of all three masks.
    let content = imaging::load_image(&content_path).unwrap();
    let resized = imaging::resize(&content, wh, ww, ResizeMode::Bilinear).unwrap();
    let reference = imaging::quantize_rgb8(&resized);
    let final_img = imaging::load_image(out.join("final.png")).unwrap();
    let final_bytes = imaging::quantize_rgb8(&final_img);
    let mut mismatches = 0usize;
    for y in 0..wh {
        for x in 0..ww {
            if masks.iter().all(|m| m.get(y, x) == 0.0) {
                let i = (y * ww + x) * 3;
                if final_bytes[i..i + 3] != reference[i..i + 3] {
                    mismatches += 1;
                }
            }
        }
    }
    assert_eq!(mismatches, 0, "{mismatches} background pixels changed");

    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 900.0, "multi-object run took {secs:.1}s, budget 900s");
    println!(
        "criterion 5 (multi-object multi-style): PASS — 3 regions pairwise distinct, background exact, {secs:.1}s"
    );
}

/// Criterion 6: the segmentation path and the feature-extraction path are
/// served by the same backbone weights in memory (alias identity).
#[test]
fn criterion_6_single_network_invariant() {
    let model = netgen::demo_model(0);
    let seg = model.backbone_for_segmentation();
    let feat = model.backbone_for_features();
    assert!(
        std::ptr::eq(seg.as_ptr(), feat.as_ptr()),
        "backbone module storage must be aliased, not duplicated"
    );
    assert_eq!(seg.len(), feat.len());
    // Same object, same weight bytes: spot-check the first convolution's
    // weight slice address through both views.
    let w_seg = match &seg[0] {
        ostk_core::net::layers::Module::Conv(c) => c.weights.as_ptr(),
        _ => unreachable!("demo backbone starts with a convolution"),
    };
    let w_feat = match &feat[0] {
        ostk_core::net::layers::Module::Conv(c) => c.weights.as_ptr(),
        _ => unreachable!(),
    };
    assert!(std::ptr::eq(w_seg, w_feat));
    println!("criterion 6 (single-network invariant): PASS — backbone aliased by both paths");
}

/// Criterion 7: two end-to-end CLI runs with identical argv, seed 0 and
/// --threads 1 produce bit-identical final.png and job_*_loss.csv.
#[test]
fn criterion_7_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (content_path, styles, weights) = write_inputs(dir.path(), 192, 256);
    let run = |out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_ostk"))
            .arg("stylize")
            .args(["--content", content_path.to_str().unwrap()])
            .args(["--style", styles[0].to_str().unwrap()])
            .args(["--target", "vase:0"])
            .args(["--style", styles[1].to_str().unwrap()])
            .args(["--target", "vase:1"])
            .args(["--out", out.to_str().unwrap()])
            .args(["--weights", weights.to_str().unwrap()])
            .args(["--iters", "15", "--size", "256", "--seed", "0", "--threads", "1"])
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&status.stderr)
        );
    };
    let out1 = dir.path().join("r1");
    let out2 = dir.path().join("r2");
    run(&out1);
    run(&out2);

    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(
        read(out1.join("final.png")),
        read(out2.join("final.png")),
        "final.png differs between identical runs"
    );
    for k in 0..2 {
        assert_eq!(
            read(out1.join(format!("job_{k}_loss.csv"))),
            read(out2.join(format!("job_{k}_loss.csv"))),
            "job_{k}_loss.csv differs between identical runs"
        );
    }
    println!("criterion 7 (determinism): PASS — final.png and loss CSVs bit-identical");
}

/// Criterion 8: compositing algebra across >= 1000 randomized cases:
/// identity masks exact, disjoint jobs commute bit-exactly, self-composite
/// within 1 ulp, outputs stay in range.
#[test]
fn criterion_8_blending_algebra() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xB1E7D);
    let mut cases = 0usize;
    for _ in 0..1000 {
        let h = 2 + (rng.next_u64() % 7) as usize;
        let w = 2 + (rng.next_u64() % 7) as usize;
        let image = |rng: &mut rand_chacha::ChaCha8Rng| {
            Image::from_data(h, w, (0..h * w * 3).map(|_| uniform(rng)).collect()).unwrap()
        };
        let original = image(&mut rng);
        let stylized = image(&mut rng);

        // Identity masks.
        let ones = Plane::new(h, w, 1.0);
        let zeros = Plane::new(h, w, 0.0);
        assert_eq!(
            composite(&original, &stylized, &ones).unwrap().data(),
            stylized.data()
        );
        assert_eq!(
            composite(&original, &stylized, &zeros).unwrap().data(),
            original.data()
        );
        assert_eq!(isolate(&stylized, &ones).unwrap().data(), stylized.data());

        // Disjoint commutativity on a random binary partition.
        let soft =
            Plane::from_data(h, w, (0..h * w).map(|_| uniform(&mut rng)).collect()).unwrap();
        let mask = binarize(&soft, 0.5).unwrap();
        let mut m1 = Plane::new(h, w, 0.0);
        let mut m2 = Plane::new(h, w, 0.0);
        for y in 0..h {
            for x in 0..w {
                if mask.get(y, x) == 1.0 {
                    if uniform(&mut rng) < 0.5 {
                        m1.set(y, x, 1.0);
                    } else {
                        m2.set(y, x, 1.0);
                    }
                }
            }
        }
        let s2 = image(&mut rng);
        let a = composite(&composite(&original, &stylized, &m1).unwrap(), &s2, &m2).unwrap();
        let b = composite(&composite(&original, &s2, &m2).unwrap(), &stylized, &m1).unwrap();
        assert_eq!(a.data(), b.data(), "disjoint composites must commute");

        // Self-composite within 1 ulp under a soft mask.
        let self_comp = composite(&original, &original, &soft).unwrap();
        for (o, i) in self_comp.data().iter().zip(original.data()) {
            let ulp = if *i == 0.0 { f64::MIN_POSITIVE } else { i.abs() * f64::EPSILON };
            assert!((o - i).abs() <= ulp, "self-composite moved {i} -> {o}");
        }

        // Range preservation with a soft mask.
        assert!(composite(&original, &stylized, &soft).unwrap().in_range());

        cases += 1;
    }
    assert!(cases >= 1000);
    println!("criterion 8 (blending algebra): PASS — {cases} randomized cases");
}
