use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{cache_path, extract_features, write_cache};
use crate::corpus::{load_wav, pad_or_trim, Manifest};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExtractSummary {
    pub written: usize,
    pub skipped: usize,
}

fn up_to_date(cache: &Path, wav: &Path) -> bool {
    let mtime = |p: &Path| std::fs::metadata(p).and_then(|m| m.modified()).ok();
    matches!((mtime(cache), mtime(wav)), (Some(c), Some(w)) if c >= w)
}

enum Outcome {
    Written,
    Skipped,
    Missing(PathBuf),
    Unreadable(PathBuf, String),
}

/// Extract and cache features for every row of a manifest. Caches newer than
/// their WAV are kept. Missing or undecodable WAVs are collected and reported
/// together after all other rows are processed.
pub fn extract_manifest(manifest: &Manifest, manifest_path: &Path, cache_dir: &Path, workers: usize) -> Result<ExtractSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CoreError::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<Outcome>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let wav = Manifest::resolve(manifest_path, entry);
                let cache = cache_path(cache_dir, &entry.path);
                if !wav.is_file() {
                    return Ok(Outcome::Missing(wav));
                }
                if up_to_date(&cache, &wav) {
                    return Ok(Outcome::Skipped);
                }
                let clip = match load_wav(&wav) {
                    Ok(c) => c,
                    Err(CoreError::Format { path, detail }) => return Ok(Outcome::Unreadable(path, detail)),
                    Err(e) => return Err(e),
                };
                if let Some(dir) = cache.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
                }
                write_cache(&extract_features(&pad_or_trim(&clip)?)?, &cache)?;
                Ok(Outcome::Written)
            })
            .collect()
    });
    let mut summary = ExtractSummary::default();
    let (mut missing, mut unreadable) = (vec![], vec![]);
    for o in outcomes {
        match o? {
            Outcome::Written => summary.written += 1,
            Outcome::Skipped => summary.skipped += 1,
            Outcome::Missing(p) => missing.push(p),
            Outcome::Unreadable(p, d) => unreadable.push((p, d)),
        }
    }
    if !missing.is_empty() {
        return Err(CoreError::Missing(missing));
    }
    if !unreadable.is_empty() {
        return Err(CoreError::Unreadable(unreadable));
    }
    Ok(summary)
}
