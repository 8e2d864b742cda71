//! MFCC, LFCC and chroma feature matrices, augmentation and the binary cache.

mod augment;
mod batch;
mod cache;
mod cepstral;
mod chroma;
mod filterbank;
mod stft;

pub use augment::{augment, AugmentConfig};
pub use batch::{extract_manifest, ExtractSummary};
pub use cache::{cache_path, decode_cache, encode_cache, read_cache, write_cache, CACHE_VERSION};
pub use cepstral::{dct_ii_orthonormal, dct_matrix, log_energies, standardise, LOG_FLOOR};
pub use chroma::{chroma_from_power, chroma_stft, pitch_class, CHROMA_FLOOR, F_C1};
pub use filterbank::{hz_to_mel, linear_filterbank, mel_filterbank, mel_to_hz, Filterbank};
pub use stft::{periodic_hann, stft_power, stft_power_samples, HOP, N_BINS, N_FFT, N_FRAMES};

use std::sync::OnceLock;

use crate::corpus::AudioClip;
use crate::error::Result;

pub const N_CEPSTRAL: usize = 40;
pub const N_CHROMA: usize = 12;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::default(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

impl Matrix<f64> {
    pub fn to_f32(&self) -> Matrix<f32> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v as f32).collect() }
    }
}

/// The three per-clip feature matrices, 32-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub mfcc: Matrix<f32>,
    pub lfcc: Matrix<f32>,
    pub chroma: Matrix<f32>,
}

impl FeatureSet {
    pub fn blocks(&self) -> [(&'static str, &Matrix<f32>); 3] {
        [("mfcc", &self.mfcc), ("lfcc", &self.lfcc), ("chroma", &self.chroma)]
    }
}

/// Filterbanks and DCT basis, built once and shared.
pub struct Extractor {
    pub mel: Filterbank,
    pub linear: Filterbank,
    pub dct: Matrix<f64>,
}

impl Extractor {
    pub fn new() -> Result<Self> {
        Ok(Self {
            mel: mel_filterbank(N_CEPSTRAL, 0.0, 8000.0)?,
            linear: linear_filterbank(N_CEPSTRAL, 0.0, 8000.0)?,
            dct: dct_matrix(N_CEPSTRAL),
        })
    }

    pub fn shared() -> &'static Extractor {
        static SHARED: OnceLock<Extractor> = OnceLock::new();
        SHARED.get_or_init(|| Extractor::new().expect("default filterbanks are valid"))
    }

    fn cepstra(&self, power: &Matrix<f64>, fb: &Filterbank) -> Result<Matrix<f64>> {
        dct_ii_orthonormal(&log_energies(power, fb)?, N_CEPSTRAL)
    }

    /// MFCC before per-clip standardisation.
    pub fn mfcc_raw(&self, power: &Matrix<f64>) -> Result<Matrix<f64>> {
        self.cepstra(power, &self.mel)
    }

    /// LFCC before per-clip standardisation.
    pub fn lfcc_raw(&self, power: &Matrix<f64>) -> Result<Matrix<f64>> {
        self.cepstra(power, &self.linear)
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureSet> {
        let power = stft_power(clip)?;
        Ok(FeatureSet {
            mfcc: standardise(&self.mfcc_raw(&power)?).to_f32(),
            lfcc: standardise(&self.lfcc_raw(&power)?).to_f32(),
            chroma: chroma_from_power(&power).to_f32(),
        })
    }
}

pub fn mfcc(clip: &AudioClip) -> Result<Matrix<f32>> {
    let ex = Extractor::shared();
    Ok(standardise(&ex.mfcc_raw(&stft_power(clip)?)?).to_f32())
}

pub fn lfcc(clip: &AudioClip) -> Result<Matrix<f32>> {
    let ex = Extractor::shared();
    Ok(standardise(&ex.lfcc_raw(&stft_power(clip)?)?).to_f32())
}

/// All three feature matrices; a pure function of the clip.
pub fn extract_features(clip: &AudioClip) -> Result<FeatureSet> {
    Extractor::shared().extract(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_fake, SynthesisConfig};

    #[test]
    fn feature_shapes_and_purity() {
        let clip = synth_fake(4, &SynthesisConfig::default());
        let f = extract_features(&clip).unwrap();
        assert_eq!(f.mfcc.shape(), (40, 251));
        assert_eq!(f.lfcc.shape(), (40, 251));
        assert_eq!(f.chroma.shape(), (12, 251));
        assert_eq!(f, extract_features(&clip).unwrap());
        assert_eq!(f.mfcc, mfcc(&clip).unwrap());
        assert_eq!(f.lfcc, lfcc(&clip).unwrap());
        assert!(f.chroma.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let dist: f32 = f.mfcc.data.iter().zip(&f.lfcc.data).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(dist > 0.0);
    }

    #[test]
    fn standardised_cepstra_have_unit_scale() {
        let clip = synth_fake(9, &SynthesisConfig::default());
        let m = mfcc(&clip).unwrap();
        let n = m.data.len() as f64;
        let mean = m.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = m.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-4);
    }
}
