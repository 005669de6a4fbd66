//! Shared fixtures for the criterion benches: a small in-memory model and
//! deterministic images at bench-friendly sizes.

use ostk_core::imaging::Image;
use ostk_core::net::{netgen, BackboneModel};

pub fn bench_model() -> BackboneModel {
    netgen::demo_model(0)
}

pub fn bench_content(side: usize) -> Image {
    netgen::blob_scene(
        side,
        side,
        &[netgen::Blob {
            center_y: side as f64 / 2.0,
            center_x: side as f64 / 2.0,
            radius: 20.0,
            rgb: netgen::blob_palette(0),
        }],
    )
}

pub fn bench_style(side: usize) -> Image {
    netgen::test_pattern(side, side, 17)
}
