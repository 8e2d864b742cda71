use std::path::Path;

use cafnet_core::corpus::{
    generate_corpus, load_wav, plan_split, read_manifest, render_clip, synth_fake, synth_real, ClassLabel, Manifest, Split,
    SynthesisConfig,
};
use cafnet_core::features::{extract_manifest, read_cache, cache_path};
use cafnet_core::{CLIP_SAMPLES, SAMPLE_RATE};
use proptest::prelude::*;

fn small() -> SynthesisConfig {
    SynthesisConfig { n_train: 12, n_val: 4, n_test: 5, ..SynthesisConfig::default() }
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn corpus_bytes_do_not_depend_on_worker_count() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_corpus(&small(), a.path(), 1).unwrap();
    generate_corpus(&small(), b.path(), 4).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 12 + 4 + 5 + 6);
    assert!(ta == tb);
}

#[test]
fn feature_caches_do_not_depend_on_worker_count() {
    let corpus = tempfile::tempdir().unwrap();
    generate_corpus(&small(), corpus.path(), 2).unwrap();
    let m_path = corpus.path().join("train.csv");
    let m = read_manifest(&m_path).unwrap();
    let (c1, c8) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let s1 = extract_manifest(&m, &m_path, c1.path(), 1).unwrap();
    extract_manifest(&m, &m_path, c8.path(), 8).unwrap();
    assert_eq!(s1.written, 12);
    assert!(tree(c1.path()) == tree(c8.path()));
    let again = extract_manifest(&m, &m_path, c1.path(), 1).unwrap();
    assert_eq!((again.written, again.skipped), (0, 12));
}

#[test]
fn manifests_match_rendered_audio() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let manifests = generate_corpus(&cfg, dir.path(), 2).unwrap();
    for (m, split) in manifests.iter().zip(Split::ALL) {
        let plans = plan_split(&cfg, split).unwrap();
        let path = dir.path().join(format!("{}.csv", split.name()));
        assert_eq!(&read_manifest(&path).unwrap(), m);
        for (entry, plan) in m.entries.iter().zip(&plans) {
            let (clip, label) = render_clip(plan, &cfg).unwrap();
            assert_eq!(entry.label, label);
            let wav = load_wav(&Manifest::resolve(&path, entry)).unwrap();
            assert_eq!(wav.len(), CLIP_SAMPLES);
            let max_q = wav.samples.iter().zip(&clip.samples).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            assert!(max_q <= 1.0 / 32768.0 + 1e-7);
        }
    }
}

#[test]
fn spliced_region_is_recoverable_from_the_samples() {
    let cfg = SynthesisConfig::default();
    let plans = plan_split(&cfg, Split::Test).unwrap();
    for plan in plans.iter().filter(|p| p.class == ClassLabel::HalfTruth).take(10) {
        let (clip, label) = render_clip(plan, &cfg).unwrap();
        let real = synth_real(plan.seed, &cfg);
        let donor = synth_fake(plan.donor_seed(), &cfg);
        let differs: Vec<usize> = (0..CLIP_SAMPLES).filter(|&i| clip.samples[i] != real.samples[i]).collect();
        let (first, last) = (*differs.first().unwrap(), *differs.last().unwrap());
        let (s, e) = label.boundaries.unwrap();
        let fs = SAMPLE_RATE as f64;
        assert!((first as f64 / fs - s * 4.0).abs() < 0.01);
        assert!(((last + 1) as f64 / fs - e * 4.0).abs() < 0.01);
        assert!((first..=last).all(|i| clip.samples[i] == donor.samples[i]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn plans_respect_ratios_and_splice_limits(n in 3usize..300, seed in 0u64..1000) {
        let cfg = SynthesisConfig { n_train: n, master_seed: seed, ..SynthesisConfig::default() };
        let plans = plan_split(&cfg, Split::Train).unwrap();
        prop_assert_eq!(plans.len(), n);
        for p in &plans {
            if let Some((start, len)) = p.splice {
                prop_assert!(start + len <= CLIP_SAMPLES);
                let dur = len as f64 / SAMPLE_RATE as f64;
                prop_assert!((0.8 - 1e-4..=1.2 + 1e-4).contains(&dur));
            }
        }
        let counts = ClassLabel::ALL.map(|c| plans.iter().filter(|p| p.class == c).count());
        for (k, r) in counts.iter().zip(cfg.ratios) {
            prop_assert!((*k as f64 - r * n as f64).abs() < 1.0 + 1e-9);
        }
    }
}

#[test]
fn cached_features_round_trip() {
    let corpus = tempfile::tempdir().unwrap();
    generate_corpus(&SynthesisConfig { n_train: 3, n_val: 3, n_test: 3, ..SynthesisConfig::default() }, corpus.path(), 1).unwrap();
    let m_path = corpus.path().join("val.csv");
    let m = read_manifest(&m_path).unwrap();
    let cache = tempfile::tempdir().unwrap();
    extract_manifest(&m, &m_path, cache.path(), 1).unwrap();
    for e in &m.entries {
        let wav = load_wav(&Manifest::resolve(&m_path, e)).unwrap();
        let direct = cafnet_core::features::extract_features(&wav).unwrap();
        assert_eq!(read_cache(&cache_path(cache.path(), &e.path)).unwrap(), direct);
    }
}
