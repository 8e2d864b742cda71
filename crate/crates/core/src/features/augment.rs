use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FeatureSet, Matrix};
use crate::error::{config_err, Result};

/// Training-time feature augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Frame span width range and probability.
    pub time_mask: (usize, usize, f64),
    /// Cepstral row span width range and probability.
    pub freq_mask: (usize, usize, f64),
    /// Gaussian noise standard deviation and probability.
    pub noise: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { time_mask: (10, 30, 0.3), freq_mask: (2, 8, 0.3), noise: (0.01, 0.15) }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { time_mask: (10, 30, 0.0), freq_mask: (2, 8, 0.0), noise: (0.01, 0.0) }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.time_mask.2, self.freq_mask.2, self.noise.1];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return config_err("augmentation probabilities must lie in [0, 1]");
        }
        if self.time_mask.0 > self.time_mask.1 || self.freq_mask.0 > self.freq_mask.1 || !(self.noise.0 >= 0.0) {
            return config_err("augmentation ranges need min <= max and sigma >= 0");
        }
        Ok(())
    }
}

fn span<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (usize, usize), len: usize) -> (usize, usize) {
    let width = rng.random_range(lo..=hi).min(len);
    let start = rng.random_range(0..=len - width);
    (start, width)
}

fn zero_cols(m: &mut Matrix<f32>, start: usize, width: usize) {
    for r in 0..m.rows {
        m.data[r * m.cols + start..r * m.cols + start + width].fill(0.0);
    }
}

fn zero_rows(m: &mut Matrix<f32>, start: usize, width: usize) {
    m.data[start * m.cols..(start + width) * m.cols].fill(0.0);
}

/// Time mask on all three matrices, row mask on MFCC and LFCC, then additive
/// noise on all three; each applied independently with its probability.
pub fn augment<R: Rng + ?Sized>(features: &FeatureSet, rng: &mut R, cfg: &AugmentConfig) -> FeatureSet {
    let mut f = features.clone();
    let (t_lo, t_hi, t_p) = cfg.time_mask;
    if rng.random::<f64>() < t_p {
        let (start, width) = span(rng, (t_lo, t_hi), f.mfcc.cols);
        for m in [&mut f.mfcc, &mut f.lfcc, &mut f.chroma] {
            zero_cols(m, start, width);
        }
    }
    let (r_lo, r_hi, r_p) = cfg.freq_mask;
    if rng.random::<f64>() < r_p {
        let (start, width) = span(rng, (r_lo, r_hi), f.mfcc.rows);
        zero_rows(&mut f.mfcc, start, width);
        zero_rows(&mut f.lfcc, start, width);
    }
    let (sigma, n_p) = cfg.noise;
    if rng.random::<f64>() < n_p && sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        for m in [&mut f.mfcc, &mut f.lfcc, &mut f.chroma] {
            for v in &mut m.data {
                *v += normal.sample(rng) as f32;
            }
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn ones() -> FeatureSet {
        FeatureSet {
            mfcc: Matrix::from_vec(40, 251, vec![1.0; 40 * 251]),
            lfcc: Matrix::from_vec(40, 251, vec![1.0; 40 * 251]),
            chroma: Matrix::from_vec(12, 251, vec![1.0; 12 * 251]),
        }
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(augment(&ones(), &mut rng, &AugmentConfig::disabled()), ones());
        }
    }

    #[test]
    fn forced_time_mask_zeroes_a_span_in_all_matrices() {
        let cfg = AugmentConfig { time_mask: (10, 30, 1.0), ..AugmentConfig::disabled() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let f = augment(&ones(), &mut rng, &cfg);
            let zero_cols: Vec<usize> = (0..251).filter(|&t| f.mfcc.at(0, t) == 0.0).collect();
            assert!((10..=30).contains(&zero_cols.len()));
            assert!(zero_cols.windows(2).all(|w| w[1] == w[0] + 1));
            for m in [&f.mfcc, &f.lfcc, &f.chroma] {
                for &t in &zero_cols {
                    assert!((0..m.rows).all(|r| m.at(r, t) == 0.0));
                }
            }
        }
    }

    #[test]
    fn forced_row_mask_spares_chroma() {
        let cfg = AugmentConfig { freq_mask: (2, 8, 1.0), ..AugmentConfig::disabled() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = augment(&ones(), &mut rng, &cfg);
        let rows: Vec<usize> = (0..40).filter(|&r| f.mfcc.at(r, 0) == 0.0).collect();
        assert!((2..=8).contains(&rows.len()));
        assert_eq!(f.mfcc, f.lfcc);
        assert_eq!(f.chroma, ones().chroma);
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = AugmentConfig { noise: (0.01, 1.0), ..Default::default() };
        let a = augment(&ones(), &mut ChaCha8Rng::seed_from_u64(9), &cfg);
        let b = augment(&ones(), &mut ChaCha8Rng::seed_from_u64(9), &cfg);
        assert_eq!(a, b);
        assert_ne!(a, ones());
    }

    #[test]
    fn validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        assert!(AugmentConfig { time_mask: (30, 10, 0.3), ..Default::default() }.validate().is_err());
        assert!(AugmentConfig { noise: (0.01, 1.5), ..Default::default() }.validate().is_err());
    }
}
