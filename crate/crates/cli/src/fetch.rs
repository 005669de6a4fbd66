//! Weights-source resolution. Filesystem paths pass through; http(s) URLs
//! are downloaded to a local cache, and only with the explicit
//! `--fetch-weights` opt-in — nothing is ever fetched implicitly.

use std::io::Read;
use std::path::PathBuf;

use crate::config::CliError;

pub fn resolve_weights_source(source: &str, fetch_allowed: bool) -> Result<String, CliError> {
    if !(source.starts_with("http://") || source.starts_with("https://")) {
        return Ok(source.to_string());
    }
    if !fetch_allowed {
        return Err(CliError::Usage(format!(
            "weights source {source:?} is a URL; pass --fetch-weights to allow downloading"
        )));
    }
    let cache = cache_path(source);
    if cache.exists() {
        eprintln!("using cached weights {}", cache.display());
        return Ok(cache.display().to_string());
    }
    eprintln!("fetching weights from {source}");
    let response = ureq::get(source)
        .call()
        .map_err(|e| CliError::Input(format!("download failed: {e}")))?;
    let mut bytes = Vec::new();
    response
        .into_body()
        .into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| CliError::Input(format!("download failed: {e}")))?;
    if let Some(parent) = cache.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Input(e.to_string()))?;
    }
    std::fs::write(&cache, &bytes).map_err(|e| CliError::Input(e.to_string()))?;
    eprintln!("cached weights at {}", cache.display());
    Ok(cache.display().to_string())
}

fn cache_path(url: &str) -> PathBuf {
    // FNV-1a over the URL keeps the cache name stable and collision-unlikely.
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in url.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    std::env::temp_dir()
        .join("ostk-weights")
        .join(format!("{hash:016x}.ostw"))
}
