use super::stft::{stft_power, N_FFT};
use super::{Matrix, N_CHROMA};
use crate::corpus::AudioClip;
use crate::error::Result;
use crate::SAMPLE_RATE;

/// Frequency of C1, pitch class 0.
pub const F_C1: f64 = 32.7032;
/// Frames whose largest class energy is below this are left at zero.
pub const CHROMA_FLOOR: f64 = 1e-10;
const F_MIN: f64 = 27.5;

/// Hard pitch-class assignment of a frequency, `None` below 27.5 Hz.
pub fn pitch_class(f: f64) -> Option<usize> {
    if f < F_MIN {
        return None;
    }
    Some(((12.0 * (f / F_C1).log2()).round() as i64).rem_euclid(12) as usize)
}

/// Fold STFT power into 12 pitch classes, normalised per frame by its max.
pub fn chroma_from_power(power: &Matrix<f64>) -> Matrix<f64> {
    let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
    let classes: Vec<Option<usize>> = (0..power.rows).map(|k| if k == 0 { None } else { pitch_class(k as f64 * bin_hz) }).collect();
    let mut out = Matrix::zeros(N_CHROMA, power.cols);
    for (k, class) in classes.iter().enumerate() {
        if let Some(c) = *class {
            let orow = &mut out.data[c * power.cols..(c + 1) * power.cols];
            for (o, &p) in orow.iter_mut().zip(power.row(k)) {
                *o += p;
            }
        }
    }
    for t in 0..out.cols {
        let max = (0..N_CHROMA).map(|c| out.at(c, t)).fold(0.0, f64::max);
        for c in 0..N_CHROMA {
            let v = if max < CHROMA_FLOOR { 0.0 } else { out.at(c, t) / max };
            out.set(c, t, v);
        }
    }
    out
}

pub fn chroma_stft(clip: &AudioClip) -> Result<Matrix<f32>> {
    Ok(chroma_from_power(&stft_power(clip)?).to_f32())
}
