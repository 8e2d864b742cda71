//! Slow, direct reference implementations used as test oracles.
#![allow(dead_code)]

use std::f64::consts::PI;

pub const SR: f64 = 16_000.0;
pub const NFFT: usize = 512;
pub const HOP: usize = 256;

/// Reflect-pad by half a window on each side, mirroring around the edge
/// samples.
fn reflect_pad(x: &[f32], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(x[i] as f64);
    }
    out.extend(x.iter().map(|&v| v as f64));
    for i in 0..pad {
        out.push(x[n - 2 - i] as f64);
    }
    out
}

/// `|DFT|^2` of Hann-windowed frames, evaluated as a direct sum.
/// Returns `bins x frames`, row-major.
pub fn power_spectrogram(x: &[f32]) -> (usize, usize, Vec<f64>) {
    let padded = reflect_pad(x, NFFT / 2);
    let frames = (padded.len() - NFFT) / HOP + 1;
    let bins = NFFT / 2 + 1;
    let cos: Vec<f64> = (0..NFFT).map(|j| (2.0 * PI * j as f64 / NFFT as f64).cos()).collect();
    let sin: Vec<f64> = (0..NFFT).map(|j| (2.0 * PI * j as f64 / NFFT as f64).sin()).collect();
    let window: Vec<f64> = (0..NFFT).map(|n| (PI * n as f64 / NFFT as f64).sin().powi(2)).collect();
    let mut out = vec![0.0; bins * frames];
    for t in 0..frames {
        let frame: Vec<f64> = (0..NFFT).map(|n| padded[t * HOP + n] * window[n]).collect();
        for k in 0..bins {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &v) in frame.iter().enumerate() {
                let j = (k * n) % NFFT;
                re += v * cos[j];
                im -= v * sin[j];
            }
            out[k * frames + t] = re * re + im * im;
        }
    }
    (bins, frames, out)
}

pub fn mel(f: f64) -> f64 {
    1127.0 * (f / 700.0).ln_1p()
}

pub fn inv_mel(m: f64) -> f64 {
    700.0 * ((m / 1127.0).exp() - 1.0)
}

/// Explicit triangles: `max(0, min(rise, fall))` over bin frequencies.
pub fn triangles(edges: &[f64]) -> Vec<Vec<f64>> {
    (0..edges.len() - 2)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..=NFFT / 2)
                .map(|k| {
                    let f = k as f64 * SR / NFFT as f64;
                    ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0)
                })
                .collect()
        })
        .collect()
}

pub fn mel_triangles(n: usize) -> Vec<Vec<f64>> {
    let top = mel(SR / 2.0);
    triangles(&(0..n + 2).map(|i| inv_mel(top * i as f64 / (n + 1) as f64)).collect::<Vec<_>>())
}

pub fn linear_triangles(n: usize) -> Vec<Vec<f64>> {
    triangles(&(0..n + 2).map(|i| SR / 2.0 * i as f64 / (n + 1) as f64).collect::<Vec<_>>())
}

/// Log filterbank energies followed by a cosine-sum DCT-II with orthonormal
/// scaling. Returns `n_coeff x frames`.
pub fn cepstra(spec: &(usize, usize, Vec<f64>), fb: &[Vec<f64>], n_coeff: usize) -> Vec<f64> {
    let (bins, frames, p) = spec;
    let n = fb.len();
    let mut out = vec![0.0; n_coeff * frames];
    for t in 0..*frames {
        let logs: Vec<f64> = fb
            .iter()
            .map(|w| ((0..*bins).map(|k| w[k] * p[k * frames + t]).sum::<f64>() + 1e-10).ln())
            .collect();
        for q in 0..n_coeff {
            let norm = if q == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            let s: f64 = logs.iter().enumerate().map(|(i, &v)| v * (PI * q as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()).sum();
            out[q * frames + t] = norm * s;
        }
    }
    out
}

/// Hard chroma binning via MIDI note numbers (A4 = 69 = class 9), each
/// frame divided by its largest class.
pub fn chroma(spec: &(usize, usize, Vec<f64>)) -> Vec<f64> {
    let (bins, frames, p) = spec;
    let mut out = vec![0.0; 12 * frames];
    for k in 1..*bins {
        let f = k as f64 * SR / NFFT as f64;
        if f < 27.5 {
            continue;
        }
        let class = ((69.0 + 12.0 * (f / 440.0).log2()).round() as i64).rem_euclid(12) as usize;
        for t in 0..*frames {
            out[class * frames + t] += p[k * frames + t];
        }
    }
    for t in 0..*frames {
        let max = (0..12).map(|c| out[c * frames + t]).fold(0.0, f64::max);
        for c in 0..12 {
            out[c * frames + t] = if max < 1e-10 { 0.0 } else { out[c * frames + t] / max };
        }
    }
    out
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

/// ROC vertices by counting at every distinct threshold, strictest first.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut ts: Vec<f64> = scores.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in ts {
        let fp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && !**l).count() as f64;
        let tp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l).count() as f64;
        pts.push((fp / neg, tp / pos));
    }
    pts
}

/// EER by brute force: walk every ROC segment in `steps` increments and
/// keep the point where |FPR - FNR| is smallest.
pub fn eer_grid(scores: &[f64], labels: &[bool], steps: usize) -> f64 {
    let pts = roc_points(scores, labels);
    let mut best = (f64::INFINITY, 0.0);
    for w in pts.windows(2) {
        let ((f0, t0), (f1, t1)) = (w[0], w[1]);
        for s in 0..=steps {
            let a = s as f64 / steps as f64;
            let fpr = f0 + (f1 - f0) * a;
            let fnr = 1.0 - (t0 + (t1 - t0) * a);
            let gap = (fpr - fnr).abs();
            if gap < best.0 {
                best = (gap, (fpr + fnr) / 2.0);
            }
        }
    }
    best.1
}
