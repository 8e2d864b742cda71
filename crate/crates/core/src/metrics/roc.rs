use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// ROC points from the strictest threshold to the loosest, starting at
/// (0, 0) and ending at (1, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `thresholds[i]` produces point `i + 1`; point 0 is "nothing positive".
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
}

/// Sweep the distinct scores in descending order (`score >= t` is positive);
/// equal scores move the curve in a single step.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return invalid(format!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return invalid("scores must be finite");
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return invalid("ROC needs both positive and negative samples");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut curve = RocCurve { thresholds: vec![], fpr: vec![0.0], tpr: vec![0.0] };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.thresholds.push(t);
        curve.fpr.push(fp as f64 / neg as f64);
        curve.tpr.push(tp as f64 / pos as f64);
    }
    Ok(curve)
}

/// Trapezoidal area under TPR over FPR.
pub fn auc(curve: &RocCurve) -> f64 {
    curve.fpr.windows(2).zip(curve.tpr.windows(2)).map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) / 2.0).sum()
}

/// Root of `f` on `[a, b]` by Brent's method: inverse quadratic
/// interpolation and secant steps guarded by bisection. `f(a)` and `f(b)`
/// must have opposite signs or one must be zero.
pub fn brent_root(f: impl Fn(f64) -> f64, a: f64, b: f64, ftol: f64, max_iter: usize) -> Option<f64> {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 1e-15;
        let m = 0.5 * (c - b);
        if fb.abs() < ftol || m.abs() <= tol {
            return Some(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Some(b)
}

/// Position along the curve's piecewise-linear interpolation: segment index
/// plus fraction.
fn interpolate(curve: &RocCurve, u: f64) -> (f64, f64) {
    let last = curve.fpr.len() - 1;
    let u = u.clamp(0.0, last as f64);
    let i = (u.floor() as usize).min(last.saturating_sub(1));
    let w = u - i as f64;
    let lerp = |v: &[f64]| v[i] + (v[(i + 1).min(last)] - v[i]) * w;
    (lerp(&curve.fpr), lerp(&curve.tpr))
}

/// Equal error rate: FPR at the root of FPR - FNR along the interpolated curve.
pub fn eer(curve: &RocCurve) -> f64 {
    let g = |u: f64| {
        let (fpr, tpr) = interpolate(curve, u);
        fpr - (1.0 - tpr)
    };
    let end = (curve.fpr.len() - 1) as f64;
    let root = brent_root(g, 0.0, end, 1e-12, 200).unwrap_or(0.0);
    interpolate(curve, root).0
}

/// Mean one-vs-rest AUC over classes; every class must occur in `labels`
/// and not be the only one.
pub fn macro_ovr_auc(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let n_classes = probs.first().map_or(0, Vec::len);
    if n_classes < 2 || probs.len() != labels.len() || probs.iter().any(|p| p.len() != n_classes) {
        return invalid("probability rows must share a class count of at least 2 and match the labels");
    }
    let mut total = 0.0;
    for c in 0..n_classes {
        if !labels.contains(&c) {
            return invalid(format!("class {c} absent from labels"));
        }
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let is_c: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        total += auc(&roc_curve(&scores, &is_c)?);
    }
    Ok(total / n_classes as f64)
}
