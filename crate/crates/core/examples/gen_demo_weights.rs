//! Generates a small self-contained weights file plus sample content/style
//! images, so the CLI can be exercised without an externally trained
//! checkpoint:
//!
//! ```text
//! cargo run --release -p ostk-core --example gen_demo_weights -- demo/
//! ostk stylize --weights demo/demo.ostw --content demo/content.png \
//!     --style demo/style0.png --target vase:0 --out out/
//! ```

use ostk_core::imaging::save_image;
use ostk_core::net::netgen;

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "demo".to_string());
    let seed: u64 = std::env::args()
        .nth(2)
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(0);
    let dir = std::path::PathBuf::from(dir);
    std::fs::create_dir_all(&dir).expect("create output directory");

    let weights = dir.join("demo.ostw");
    netgen::write_demo_weights(&weights, seed).expect("write weights");
    println!("wrote {}", weights.display());

    let content = netgen::three_blob_scene(384, 512);
    save_image(&content, dir.join("content.png")).expect("write content");
    println!("wrote {}", dir.join("content.png").display());

    for i in 0..3u64 {
        let style = netgen::test_pattern(256, 256, 100 + i);
        let path = dir.join(format!("style{i}.png"));
        save_image(&style, &path).expect("write style");
        println!("wrote {}", path.display());
    }
}
