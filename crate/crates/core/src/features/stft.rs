use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::Matrix;
use crate::corpus::AudioClip;
use crate::error::{invalid, Result};
use crate::CLIP_SAMPLES;

pub const N_FFT: usize = 512;
pub const HOP: usize = 256;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const N_FRAMES: usize = 1 + CLIP_SAMPLES / HOP;

pub fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Reflect index into `[0, n)` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// Power spectrogram of a 4 s clip: `257 x 251`, rows are frequency bins.
pub fn stft_power(clip: &AudioClip) -> Result<Matrix<f64>> {
    if clip.len() != CLIP_SAMPLES {
        return invalid(format!("STFT expects {CLIP_SAMPLES} samples, got {}", clip.len()));
    }
    Ok(stft_power_samples(&clip.samples))
}

/// Centred periodic-Hann STFT with reflect padding, any length >= 2.
pub fn stft_power_samples(x: &[f32]) -> Matrix<f64> {
    let n = x.len();
    let frames = 1 + n / HOP;
    let window = periodic_hann(N_FFT);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N_FFT);
    let mut out = Matrix::zeros(N_BINS, frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); N_FFT];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let half = (N_FFT / 2) as isize;
    for t in 0..frames {
        let centre = (t * HOP) as isize;
        for (k, b) in buf.iter_mut().enumerate() {
            let idx = reflect(centre - half + k as isize, n);
            *b = Complex64::new(x[idx] as f64 * window[k], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf[..N_BINS].iter().enumerate() {
            out.set(k, t, c.norm_sqr());
        }
    }
    out
}
