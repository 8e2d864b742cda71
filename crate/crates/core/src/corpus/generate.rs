use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::manifest::{write_manifest, Manifest, ManifestEntry, Split};
use super::synth::{make_half_truth, synth_fake, synth_real, SynthesisConfig};
use super::wav::write_wav;
use super::{AudioClip, ClassLabel, ClipLabel};
use crate::error::{config_err, CoreError, Result};
use crate::{CLIP_SAMPLES, SAMPLE_RATE};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-clip seed, a pure function of `(master_seed, split, index)`.
pub fn clip_seed(master_seed: u64, split: Split, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ split.tag()) ^ index)
}

/// Largest-remainder apportionment of `n` clips over the class ratios, so
/// each count is within one of `n * ratio`.
pub fn class_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let assigned: usize = counts.iter().sum();
    for &c in order.iter().take(n.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    if n > 0 {
        if let Some(c) = (0..3).find(|&c| ratios[c] > 0.0 && counts[c] == 0) {
            return config_err(format!("{n} clips cannot represent class {} at ratio {}", c, ratios[c]));
        }
    }
    Ok(counts)
}

/// Everything needed to render one clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipPlan {
    pub index: usize,
    pub class: ClassLabel,
    pub seed: u64,
    /// Splice `(start_sample, length)` for half-truth clips.
    pub splice: Option<(usize, usize)>,
}

impl ClipPlan {
    pub fn file_name(&self) -> String {
        format!("{:05}_{}.wav", self.index, self.class.name())
    }

    /// Seed of the fake clip whose span is spliced in.
    pub fn donor_seed(&self) -> u64 {
        splitmix64(self.seed ^ 0xD0_A0)
    }
}

pub fn plan_split(cfg: &SynthesisConfig, split: Split) -> Result<Vec<ClipPlan>> {
    cfg.validate()?;
    let n = match split {
        Split::Train => cfg.n_train,
        Split::Val => cfg.n_val,
        Split::Test => cfg.n_test,
    };
    let counts = class_counts(n, cfg.ratios)?;
    let mut classes: Vec<ClassLabel> =
        ClassLabel::ALL.iter().zip(counts).flat_map(|(&c, k)| std::iter::repeat_n(c, k)).collect();
    classes.shuffle(&mut ChaCha8Rng::seed_from_u64(clip_seed(cfg.master_seed, split, u64::MAX)));

    let fs = SAMPLE_RATE as f64;
    let (lo, hi) = cfg.splice_range;
    let plans = classes
        .into_iter()
        .enumerate()
        .map(|(index, class)| {
            let seed = clip_seed(cfg.master_seed, split, index as u64);
            let splice = (class == ClassLabel::HalfTruth).then(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x5_911C));
                let len = ((rng.random_range(lo..=hi) * fs).round() as usize).clamp(1, CLIP_SAMPLES);
                let start = rng.random_range(0..=CLIP_SAMPLES - len);
                (start, len)
            });
            ClipPlan { index, class, seed, splice }
        })
        .collect();
    Ok(plans)
}

pub fn render_clip(plan: &ClipPlan, cfg: &SynthesisConfig) -> Result<(AudioClip, ClipLabel)> {
    match plan.class {
        ClassLabel::Real => Ok((synth_real(plan.seed, cfg), ClipLabel::real())),
        ClassLabel::Fake => Ok((synth_fake(plan.seed, cfg), ClipLabel::fake())),
        ClassLabel::HalfTruth => {
            let (start, len) = plan.splice.expect("half-truth plans carry a splice");
            let fs = SAMPLE_RATE as f64;
            let real = synth_real(plan.seed, cfg);
            let fake = synth_fake(plan.donor_seed(), cfg);
            make_half_truth(&real, &fake, start as f64 / fs, len as f64 / fs)
        }
    }
}

/// Render all three splits under `out_dir` (`<split>/<index>_<class>.wav`
/// plus `<split>.csv`). Content is independent of `workers`.
pub fn generate_corpus(cfg: &SynthesisConfig, out_dir: &Path, workers: usize) -> Result<Vec<Manifest>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CoreError::Config(format!("thread pool: {e}")))?;
    let mut manifests = Vec::new();
    for split in Split::ALL {
        let plans = plan_split(cfg, split)?;
        let dir = out_dir.join(split.name());
        std::fs::create_dir_all(&dir).map_err(|e| CoreError::io(&dir, e))?;
        let entries: Vec<ManifestEntry> = pool.install(|| {
            plans
                .par_iter()
                .map(|plan| {
                    let (clip, label) = render_clip(plan, cfg)?;
                    let name = plan.file_name();
                    write_wav(&dir.join(&name), &clip)?;
                    Ok(ManifestEntry { path: format!("{}/{name}", split.name()), label })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let manifest = Manifest { entries, split, master_seed: Some(cfg.master_seed) };
        write_manifest(&manifest, &out_dir.join(format!("{}.csv", split.name())))?;
        manifests.push(manifest);
    }
    Ok(manifests)
}
