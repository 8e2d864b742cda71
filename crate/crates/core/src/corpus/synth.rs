use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, ClipLabel, ClassLabel};
use crate::error::{config_err, invalid, Result};
use crate::{CLIP_SAMPLES, CLIP_SECONDS, SAMPLE_RATE};

const FS: f64 = SAMPLE_RATE as f64;
const PEAK: f64 = 0.9;
const ART_FFT: usize = 512;
const ART_HOP: usize = 256;

/// Corpus size, class mix and generator parameter ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Real / fake / half-truth proportions.
    pub ratios: [f64; 3],
    /// Splice duration range in seconds.
    pub splice_range: (f64, f64),
    /// Fundamental frequency range in Hz.
    pub f0_range: (f64, f64),
    /// Formant centre ranges in Hz; the third is used on roughly half the clips.
    pub formant_ranges: [(f64, f64); 3],
    /// Syllabic modulation rate range in Hz.
    pub am_rate_range: (f64, f64),
    /// Blend between the clean and artefacted signal; 0 disables artefacts.
    pub artefact_strength: f64,
    /// Fraction of a full turn by which per-bin phases are randomised.
    pub phase_jitter: f64,
    /// Log-magnitudes are quantised to `2^quant_bits` levels.
    pub quant_bits: u32,
    /// High-band tone comb frequency range in Hz.
    pub comb_range: (f64, f64),
    pub comb_spacing: f64,
    /// Comb amplitude relative to the clean signal RMS.
    pub comb_level: f64,
    pub master_seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            n_train: 1500,
            n_val: 300,
            n_test: 300,
            ratios: [0.17, 0.34, 0.49],
            splice_range: (0.8, 1.2),
            f0_range: (90.0, 300.0),
            formant_ranges: [(300.0, 900.0), (900.0, 2400.0), (2400.0, 3400.0)],
            am_rate_range: (3.0, 6.0),
            artefact_strength: 1.0,
            phase_jitter: 0.5,
            quant_bits: 4,
            comb_range: (6200.0, 7800.0),
            comb_spacing: 400.0,
            comb_level: 0.05,
            master_seed: 42,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), min: f64, max: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi && hi <= max) {
        return config_err(format!("{name} ({lo}, {hi}) must lie within [{min}, {max}] with lo <= hi"));
    }
    Ok(())
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.ratios.iter().sum();
        if self.ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (sum - 1.0).abs() > 1e-9 {
            return config_err(format!("class ratios {:?} must be non-negative and sum to 1", self.ratios));
        }
        let (lo, hi) = self.splice_range;
        if !(lo > 0.0 && lo <= hi && hi < CLIP_SECONDS) {
            return config_err(format!("splice range ({lo}, {hi}) must lie within (0, {CLIP_SECONDS})"));
        }
        let nyquist = FS / 2.0;
        check_range("f0_range", self.f0_range, 20.0, 1000.0)?;
        for (i, r) in self.formant_ranges.iter().enumerate() {
            check_range(&format!("formant_ranges[{i}]"), *r, 50.0, nyquist - 500.0)?;
        }
        check_range("am_rate_range", self.am_rate_range, 0.0, 50.0)?;
        check_range("comb_range", self.comb_range, 0.0, nyquist)?;
        if !(0.0..=1.0).contains(&self.artefact_strength) || !(0.0..=1.0).contains(&self.phase_jitter) {
            return config_err("artefact_strength and phase_jitter must lie in [0, 1]");
        }
        if !(1..=16).contains(&self.quant_bits) {
            return config_err(format!("quant_bits {} outside [1, 16]", self.quant_bits));
        }
        if !(self.comb_spacing > 0.0) || !(self.comb_level >= 0.0) {
            return config_err("comb_spacing must be positive and comb_level non-negative");
        }
        Ok(())
    }
}

/// Second-order resonator with unit peak gain (RBJ band-pass).
struct Resonator {
    b0: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(centre: f64, bandwidth: f64) -> Self {
        let w = 2.0 * PI * centre / FS;
        let alpha = w.sin() * bandwidth / (2.0 * centre);
        let a0 = 1.0 + alpha;
        Self { b0: alpha / a0, a1: -2.0 * w.cos() / a0, a2: (1.0 - alpha) / a0, x1: 0.0, x2: 0.0, y1: 0.0, y2: 0.0 }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * (x - self.x2) - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn peak_normalise(x: &[f64]) -> Vec<f32> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let k = if peak > 0.0 { PEAK / peak } else { 0.0 };
    x.iter().map(|&v| (v * k) as f32).collect()
}

fn clean_voice(seed: u64, cfg: &SynthesisConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f0_lo, f0_hi) = cfg.f0_range;
    let f0_base = rng.random_range(f0_lo..=f0_hi);
    let (v1, v2) = (rng.random_range(0.2..0.8), rng.random_range(1.0..3.0));
    let (p1, p2, p3) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let am_rate = rng.random_range(cfg.am_rate_range.0..=cfg.am_rate_range.1);
    let n_formants = if rng.random::<bool>() { 3 } else { 2 };
    let gains = [1.0, 0.6, 0.3];
    let mut formants: Vec<(Resonator, f64)> = cfg.formant_ranges[..n_formants]
        .iter()
        .zip(gains)
        .map(|(&(lo, hi), g)| {
            let centre = rng.random_range(lo..=hi);
            let bandwidth = rng.random_range(60.0..150.0);
            (Resonator::new(centre, bandwidth), g)
        })
        .collect();

    let mut phase = rng.random_range(0.0..1.0);
    let mut out = Vec::with_capacity(CLIP_SAMPLES);
    for i in 0..CLIP_SAMPLES {
        let t = i as f64 / FS;
        let wobble = 1.0 + 0.12 * (2.0 * PI * v1 * t + p1).sin() + 0.05 * (2.0 * PI * v2 * t + p2).sin();
        let f0 = (f0_base * wobble).clamp(f0_lo, f0_hi);
        phase += f0 / FS;
        phase -= phase.floor();
        let breath: f64 = rng.sample(StandardNormal);
        let source = 2.0 * phase - 1.0 + 0.03 * breath;
        let voiced: f64 = formants.iter_mut().map(|(r, g)| *g * r.step(source)).sum();
        let s = (PI * am_rate * t + p3).sin();
        out.push(voiced * (0.08 + 0.92 * s * s));
    }
    out
}

/// Deterministic pseudo-speech: a sawtooth source with a wandering pitch,
/// formant resonators and syllabic amplitude modulation, peak 0.9.
pub fn synth_real(seed: u64, cfg: &SynthesisConfig) -> AudioClip {
    AudioClip::new(peak_normalise(&clean_voice(seed, cfg)))
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Frame-wise phase randomisation and log-magnitude quantisation,
/// resynthesised by overlap-add (periodic Hann at 50% overlap sums to one).
fn spectral_artefacts(x: &[f64], cfg: &SynthesisConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut planner = FftPlanner::<f64>::new();
    let fwd: Arc<dyn Fft<f64>> = planner.plan_fft_forward(ART_FFT);
    let inv: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(ART_FFT);
    let window = periodic_hann(ART_FFT);
    let levels = (1u64 << cfg.quant_bits) as f64 - 1.0;
    let range = (1e3f64).ln(); // 60 dB below the frame peak
    let half = ART_FFT / 2;

    let n = x.len();
    let mut out = vec![0.0; n];
    let mut buf = vec![Complex64::new(0.0, 0.0); ART_FFT];
    let mut start = -(ART_HOP as isize);
    while start < n as isize {
        for (k, b) in buf.iter_mut().enumerate() {
            let idx = start + k as isize;
            let v = if idx >= 0 && (idx as usize) < n { x[idx as usize] } else { 0.0 };
            *b = Complex64::new(v * window[k], 0.0);
        }
        fwd.process(&mut buf);
        let peak = buf[..=half].iter().map(|c| c.norm()).fold(0.0, f64::max);
        if peak > 0.0 {
            let hi = peak.ln();
            let lo = hi - range;
            for k in 0..=half {
                let mag = buf[k].norm();
                let q = if mag > 0.0 && mag.ln() > lo {
                    let level = ((mag.ln() - lo) / range * levels).round();
                    (lo + level / levels * range).exp()
                } else {
                    0.0
                };
                let mut phi = buf[k].arg();
                if k != 0 && k != half {
                    phi += cfg.phase_jitter * rng.random_range(-PI..PI);
                }
                buf[k] = Complex64::from_polar(q, phi);
                if k != 0 && k != half {
                    buf[ART_FFT - k] = buf[k].conj();
                } else {
                    buf[k] = Complex64::new(buf[k].re, 0.0);
                }
            }
        }
        inv.process(&mut buf);
        for (k, b) in buf.iter().enumerate() {
            let idx = start + k as isize;
            if idx >= 0 && (idx as usize) < n {
                out[idx as usize] += b.re / ART_FFT as f64;
            }
        }
        start += ART_HOP as isize;
    }
    out
}

fn tone_comb(n: usize, rms: f64, cfg: &SynthesisConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (lo, hi) = cfg.comb_range;
    let mut freqs = Vec::new();
    let mut f = lo + rng.random_range(0.0..cfg.comb_spacing.min(hi - lo).max(f64::MIN_POSITIVE));
    while f <= hi {
        freqs.push((f, rng.random_range(0.0..2.0 * PI)));
        f += cfg.comb_spacing;
    }
    if freqs.is_empty() {
        return vec![0.0; n];
    }
    let amp = cfg.comb_level * rms * (2.0 / freqs.len() as f64).sqrt();
    (0..n)
        .map(|i| {
            let t = i as f64 / FS;
            amp * freqs.iter().map(|&(f, p)| (2.0 * PI * f * t + p).sin()).sum::<f64>()
        })
        .collect()
}

/// The real generator for the same seed plus vocoder-like artefacts:
/// phase randomisation, log-magnitude quantisation and a weak high-band tone
/// comb, blended in by `artefact_strength` and peak-normalised to 0.9.
pub fn synth_fake(seed: u64, cfg: &SynthesisConfig) -> AudioClip {
    let real = synth_real(seed, cfg);
    if cfg.artefact_strength == 0.0 {
        return real;
    }
    let clean: Vec<f64> = real.samples.iter().map(|&v| v as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA27E_FAC7_0000_0001);
    let rms = (clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64).sqrt();
    let spectral = spectral_artefacts(&clean, cfg, &mut rng);
    let comb = tone_comb(clean.len(), rms, cfg, &mut rng);
    let s = cfg.artefact_strength;
    let mixed: Vec<f64> = clean.iter().zip(spectral.iter().zip(&comb)).map(|(&r, (&a, &c))| r + s * (a + c - r)).collect();
    AudioClip::new(peak_normalise(&mixed))
}

/// Replace `[start_s, start_s + dur_s)` of `real` with the same span of
/// `fake`, without crossfade.
pub fn make_half_truth(real: &AudioClip, fake: &AudioClip, start_s: f64, dur_s: f64) -> Result<(AudioClip, ClipLabel)> {
    if real.len() != CLIP_SAMPLES || fake.len() != CLIP_SAMPLES {
        return invalid(format!("half-truth sources must have {CLIP_SAMPLES} samples"));
    }
    if !(start_s >= 0.0 && dur_s > 0.0 && start_s + dur_s <= CLIP_SECONDS) {
        return invalid(format!("segment [{start_s}, {}) outside [0, {CLIP_SECONDS}]", start_s + dur_s));
    }
    let a = (start_s * FS).round() as usize;
    let b = (((start_s + dur_s) * FS).round() as usize).min(CLIP_SAMPLES);
    let mut samples = real.samples.clone();
    samples[a..b].copy_from_slice(&fake.samples[a..b]);
    let label = ClipLabel::new(ClassLabel::HalfTruth, Some((start_s / CLIP_SECONDS, (start_s + dur_s) / CLIP_SECONDS)))?;
    Ok((AudioClip::new(samples), label))
}
