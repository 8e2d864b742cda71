//! Synthetic real / fully-fake / half-truth audio, WAV I/O and manifests.

mod generate;
mod manifest;
mod synth;
mod wav;

pub use generate::{class_counts, clip_seed, generate_corpus, plan_split, render_clip, ClipPlan};
pub use manifest::{read_manifest, write_manifest, Manifest, ManifestEntry, Split, MANIFEST_HEADER};
pub use synth::{make_half_truth, synth_fake, synth_real, SynthesisConfig};
pub use wav::{decode_wav, encode_wav, load_wav, resample_linear, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::{CLIP_SAMPLES, SAMPLE_RATE};

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>) -> Self {
        Self { samples, sample_rate: SAMPLE_RATE }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, &x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Real = 0,
    Fake = 1,
    HalfTruth = 2,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Real, ClassLabel::Fake, ClassLabel::HalfTruth];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Real => "real",
            ClassLabel::Fake => "fake",
            ClassLabel::HalfTruth => "half_truth",
        }
    }
}

/// Class plus normalised splice boundaries, present only for half-truth clips.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipLabel {
    pub class: ClassLabel,
    pub boundaries: Option<(f64, f64)>,
}

impl ClipLabel {
    pub fn new(class: ClassLabel, boundaries: Option<(f64, f64)>) -> Result<Self> {
        match (class, boundaries) {
            (ClassLabel::HalfTruth, Some((s, e))) => {
                if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&e) || s >= e {
                    return invalid(format!("boundaries ({s}, {e}) must satisfy 0 <= start < end <= 1"));
                }
            }
            (ClassLabel::HalfTruth, None) => return invalid("half-truth clip without boundaries"),
            (c, Some(_)) => return invalid(format!("{} clip with boundaries", c.name())),
            (_, None) => {}
        }
        Ok(Self { class, boundaries })
    }

    pub fn real() -> Self {
        Self { class: ClassLabel::Real, boundaries: None }
    }

    pub fn fake() -> Self {
        Self { class: ClassLabel::Fake, boundaries: None }
    }
}

/// Zero-pad at the tail or truncate to exactly four seconds.
pub fn pad_or_trim(clip: &AudioClip) -> Result<AudioClip> {
    if clip.is_empty() {
        return invalid("cannot pad an empty clip");
    }
    if clip.sample_rate != SAMPLE_RATE {
        return invalid(format!("expected {SAMPLE_RATE} Hz, got {}", clip.sample_rate));
    }
    let mut samples = clip.samples.clone();
    samples.resize(CLIP_SAMPLES, 0.0);
    Ok(AudioClip::new(samples))
}
