use super::stft::{N_BINS, N_FFT};
use super::Matrix;
use crate::error::{invalid, Result};
use crate::SAMPLE_RATE;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters over the 257 STFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    /// `n_filters x 257`.
    pub weights: Matrix<f64>,
    pub centres: Vec<f64>,
}

fn check(n_filters: usize, f_min: f64, f_max: f64) -> Result<()> {
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    if n_filters == 0 {
        return invalid("filterbank needs at least one filter");
    }
    if f_max > nyquist {
        return invalid(format!("f_max {f_max} above Nyquist {nyquist}"));
    }
    if !(f_min >= 0.0 && f_min < f_max) {
        return invalid(format!("need 0 <= f_min < f_max, got ({f_min}, {f_max})"));
    }
    Ok(())
}

/// Unnormalised triangles (peak 1) whose edges are the neighbouring points.
fn triangles(edges: &[f64]) -> Result<Filterbank> {
    let n = edges.len() - 2;
    let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
    let mut weights = Matrix::zeros(n, N_BINS);
    for m in 0..n {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..N_BINS {
            let f = k as f64 * bin_hz;
            let w = if f > l && f < c {
                (f - l) / (c - l)
            } else if f >= c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            weights.set(m, k, w);
        }
        if weights.row(m).iter().all(|&w| w == 0.0) {
            return invalid(format!("filter {m} ({l:.1}-{r:.1} Hz) covers no STFT bin"));
        }
    }
    Ok(Filterbank { weights, centres: edges[1..=n].to_vec() })
}

/// Mel-spaced filterbank: `n_filters + 2` points equally spaced in mel.
pub fn mel_filterbank(n_filters: usize, f_min: f64, f_max: f64) -> Result<Filterbank> {
    check(n_filters, f_min, f_max)?;
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let step = (hi - lo) / (n_filters + 1) as f64;
    let edges: Vec<f64> = (0..n_filters + 2).map(|i| mel_to_hz(lo + i as f64 * step)).collect();
    triangles(&edges)
}

/// Linearly spaced filterbank: `n_filters + 2` points equally spaced in Hz.
pub fn linear_filterbank(n_filters: usize, f_min: f64, f_max: f64) -> Result<Filterbank> {
    check(n_filters, f_min, f_max)?;
    let step = (f_max - f_min) / (n_filters + 1) as f64;
    let edges: Vec<f64> = (0..n_filters + 2).map(|i| f_min + i as f64 * step).collect();
    triangles(&edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_reference_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn filterbank_invariants() {
        for fb in [mel_filterbank(40, 0.0, 8000.0).unwrap(), linear_filterbank(40, 0.0, 8000.0).unwrap()] {
            assert_eq!(fb.weights.shape(), (40, 257));
            assert!(fb.weights.data.iter().all(|&w| w >= 0.0));
            assert!(fb.centres.windows(2).all(|w| w[0] < w[1]));
            for m in 0..40 {
                assert!(fb.weights.row(m).iter().any(|&w| w > 0.0));
            }
        }
    }

    #[test]
    fn adjacent_triangles_sum_to_one_between_centres() {
        let fb = mel_filterbank(40, 0.0, 8000.0).unwrap();
        let bin_hz = 31.25;
        for m in 0..39 {
            let (c0, c1) = (fb.centres[m], fb.centres[m + 1]);
            for k in 0..257 {
                let f = k as f64 * bin_hz;
                if f > c0 && f < c1 {
                    let s = fb.weights.at(m, k) + fb.weights.at(m + 1, k);
                    assert!((s - 1.0).abs() < 1e-12, "filters {m},{} at bin {k}: {s}", m + 1);
                }
            }
        }
    }

    #[test]
    fn linear_centres_are_equally_spaced_and_peak_at_centre() {
        let fb = linear_filterbank(40, 0.0, 8000.0).unwrap();
        for (k, c) in fb.centres.iter().enumerate() {
            assert!((c - (k + 1) as f64 * 8000.0 / 41.0).abs() < 1e-9);
            let row = fb.weights.row(k);
            let argmax = (0..257).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert!((argmax as f64 * 31.25 - c).abs() <= 31.25 / 2.0, "filter {k}");
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(mel_filterbank(40, 0.0, 9000.0).is_err());
        assert!(linear_filterbank(0, 0.0, 8000.0).is_err());
        assert!(mel_filterbank(10, 500.0, 400.0).is_err());
        // far too many filters for the bin resolution
        assert!(linear_filterbank(1000, 0.0, 8000.0).is_err());
    }
}
