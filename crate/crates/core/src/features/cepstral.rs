use std::f64::consts::PI;

use super::filterbank::Filterbank;
use super::Matrix;
use crate::error::{invalid, Result};

pub const LOG_FLOOR: f64 = 1e-10;
const STD_EPS: f64 = 1e-8;

/// `ln(filterbank . power + 1e-10)`, one row per filter.
pub fn log_energies(power: &Matrix<f64>, fb: &Filterbank) -> Result<Matrix<f64>> {
    let w = &fb.weights;
    if w.cols != power.rows {
        return invalid(format!("filterbank has {} bins, spectrogram {}", w.cols, power.rows));
    }
    let mut out = Matrix::<f64>::zeros(w.rows, power.cols);
    for m in 0..w.rows {
        let wr = w.row(m);
        let orow = &mut out.data[m * power.cols..(m + 1) * power.cols];
        for (k, &wk) in wr.iter().enumerate() {
            if wk != 0.0 {
                for (o, &p) in orow.iter_mut().zip(power.row(k)) {
                    *o += wk * p;
                }
            }
        }
        for o in orow.iter_mut() {
            *o = (*o + LOG_FLOOR).ln();
        }
    }
    Ok(out)
}

/// Orthonormal DCT-II basis, `n x n`, row `k` is coefficient `k`.
pub fn dct_matrix(n: usize) -> Matrix<f64> {
    let mut d = Matrix::zeros(n, n);
    for k in 0..n {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            d.set(k, i, scale * (PI * (i as f64 + 0.5) * k as f64 / n as f64).cos());
        }
    }
    d
}

/// Orthonormal DCT-II down each column, keeping the first `n_coeff` rows.
pub fn dct_ii_orthonormal(m: &Matrix<f64>, n_coeff: usize) -> Result<Matrix<f64>> {
    if n_coeff > m.rows {
        return invalid(format!("{n_coeff} coefficients requested from {} rows", m.rows));
    }
    let d = dct_matrix(m.rows);
    let mut out = Matrix::zeros(n_coeff, m.cols);
    for k in 0..n_coeff {
        let orow = &mut out.data[k * m.cols..(k + 1) * m.cols];
        for i in 0..m.rows {
            let c = d.at(k, i);
            for (o, &v) in orow.iter_mut().zip(m.row(i)) {
                *o += c * v;
            }
        }
    }
    Ok(out)
}

/// Zero mean, unit (population) variance over the whole matrix.
pub fn standardise(m: &Matrix<f64>) -> Matrix<f64> {
    let n = m.data.len() as f64;
    let mean = m.data.iter().sum::<f64>() / n;
    let std = (m.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Matrix { rows: m.rows, cols: m.cols, data: m.data.iter().map(|v| (v - mean) / (std + STD_EPS)).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::filterbank::mel_filterbank;

    #[test]
    fn zero_spectrogram_hits_the_floor() {
        let fb = mel_filterbank(40, 0.0, 8000.0).unwrap();
        let e = log_energies(&Matrix::zeros(257, 5), &fb).unwrap();
        assert!(e.data.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn scaling_power_shifts_log_energy() {
        let fb = mel_filterbank(40, 0.0, 8000.0).unwrap();
        let p = Matrix::from_vec(257, 2, (0..514).map(|i| 1.0 + (i % 13) as f64).collect());
        let p10 = Matrix::from_vec(257, 2, p.data.iter().map(|v| v * 10.0).collect());
        let (a, b) = (log_energies(&p, &fb).unwrap(), log_energies(&p10, &fb).unwrap());
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((y - x - 10f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        let d = dct_matrix(40);
        for i in 0..40 {
            for j in 0..40 {
                let dot: f64 = (0..40).map(|k| d.at(i, k) * d.at(j, k)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_column_has_only_dc() {
        let m = Matrix::from_vec(40, 1, vec![3.0; 40]);
        let c = dct_ii_orthonormal(&m, 40).unwrap();
        assert!((c.at(0, 0) - 3.0 * 40f64.sqrt()).abs() < 1e-12);
        assert!(c.data[1..].iter().all(|v| v.abs() < 1e-12));
        assert!(dct_ii_orthonormal(&m, 41).is_err());
    }

    #[test]
    fn standardise_constant_matrix_is_zero() {
        let s = standardise(&Matrix::from_vec(2, 2, vec![5.0; 4]));
        assert!(s.data.iter().all(|&v| v == 0.0));
    }
}
