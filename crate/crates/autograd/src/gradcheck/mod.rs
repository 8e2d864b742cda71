//! Central finite-difference verification of analytic gradients.

pub mod suite;

use crate::error::Result;
use crate::real::Real;
use crate::tape::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_err: f64,
    /// `(input, element)` where the largest error occurred.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Relative error with unit floor, so tiny gradients are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Check every coordinate of every input.
pub fn grad_check<F, G>(f: G, inputs: &[Tensor<F>], eps: f64) -> Result<GradCheckReport>
where
    F: Real,
    G: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j))).collect();
    grad_check_coords(f, inputs, &coords, eps)
}

/// Check only the listed `(input, element)` coordinates.
pub fn grad_check_coords<F, G>(
    f: G,
    inputs: &[Tensor<F>],
    coords: &[(usize, usize)],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: Real,
    G: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor<F>]| -> Result<f64> {
        let mut tape = Tape::<F>::new();
        let vars = ins.iter().map(|t| tape.leaf(t.clone(), true)).collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out)[0].as_f64())
    };

    let mut tape = Tape::<F>::new();
    let vars = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match tape.grad(v) {
            Some(g) => g.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.len()],
        })
        .collect();

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: (0, 0), checked: 0 };
    let mut work = inputs.to_vec();
    for &(i, j) in coords {
        let orig = work[i].data[j];
        work[i].data[j] = F::from_f64_lossy(orig.as_f64() + eps);
        let plus = eval(&work)?;
        work[i].data[j] = F::from_f64_lossy(orig.as_f64() - eps);
        let minus = eval(&work)?;
        work[i].data[j] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = rel_err(analytic[i][j], numeric);
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst = (i, j);
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let r = grad_check(
            |t: &mut Tape<f64>, v: &[Var]| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            &[Tensor::new(vec![1], vec![3.0])],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-9, "{r:?}");
    }

    #[test]
    fn relu_indicator_pattern() {
        let x = Tensor::new(vec![4], vec![0.5, -0.3, 1.2, -2.0]);
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(x.clone(), true).unwrap();
        let r = tape.relu(v).unwrap();
        let s = tape.sum(r).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v).unwrap(), &[1.0, 0.0, 1.0, 0.0]);
        let rep = grad_check(|t: &mut Tape<f64>, v: &[Var]| {
            let r = t.relu(v[0])?;
            t.sum(r)
        }, &[x], 1e-5)
        .unwrap();
        assert!(rep.max_rel_err < 1e-9);
    }

    #[test]
    fn rel_err_has_unit_floor() {
        assert_eq!(rel_err(1e-3, 0.0), 1e-3);
        assert!((rel_err(100.0, 101.0) - 1.0 / 101.0).abs() < 1e-15);
    }
}
