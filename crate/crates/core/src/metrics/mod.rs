//! ROC, AUC and EER, classification and localisation reports.

mod roc;

pub use roc::{auc, brent_root, eer, macro_ovr_auc, roc_curve, RocCurve};

use std::path::Path;

use cafnet_autograd::write_atomic;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassLabel, ClipLabel};
use crate::error::{invalid, CoreError, Result};
use crate::models::{trust_gate, Prediction};
use crate::training::target_class;
use crate::CLIP_SECONDS;

/// Real-vs-non-real score: `1 - p_Real`.
pub fn binary_score_from_ternary(probs: &[f64; 3]) -> f64 {
    1.0 - probs[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Confusion matrix and per-class scores with the 0/0 = 0 convention.
pub fn classification_report(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<ClassificationReport> {
    if preds.len() != labels.len() || preds.is_empty() {
        return invalid(format!("{} predictions for {} labels", preds.len(), labels.len()));
    }
    if let Some(&bad) = preds.iter().chain(labels).find(|&&c| c >= n_classes) {
        return invalid(format!("class {bad} outside [0, {n_classes})"));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let per_class: Vec<ClassScores> = (0..n_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..n_classes).map(|r| confusion[r][c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassScores { precision, recall, f1, support }
        })
        .collect();
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / n_classes as f64;
    Ok(ClassificationReport {
        accuracy: ratio((0..n_classes).map(|c| confusion[c][c]).sum(), preds.len()),
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        confusion,
        per_class,
    })
}

/// Percentile by linear interpolation between closest ranks.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub median: f64,
    pub p90: f64,
}

impl ErrorStats {
    fn of(errors: &[f64]) -> Self {
        Self {
            mae: errors.iter().sum::<f64>() / errors.len() as f64,
            median: percentile(errors, 50.0),
            p90: percentile(errors, 90.0),
        }
    }
}

/// Boundary errors in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalisationReport {
    pub count: usize,
    pub start: ErrorStats,
    pub end: ErrorStats,
    pub overall: ErrorStats,
    /// Share of clips whose boundaries pass the trust gate, when known.
    pub trusted_fraction: Option<f64>,
}

/// Per-clip start and end errors in seconds.
pub fn boundary_errors(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Vec<[f64; 2]> {
    pred.iter()
        .zip(truth)
        .map(|(p, t)| [(p[0] - t[0]).abs() * CLIP_SECONDS, (p[1] - t[1]).abs() * CLIP_SECONDS])
        .collect()
}

pub fn localisation_report(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<LocalisationReport> {
    if pred.is_empty() || pred.len() != truth.len() {
        return invalid(format!("{} predicted and {} true boundary pairs", pred.len(), truth.len()));
    }
    if pred.iter().chain(truth).flatten().any(|v| !(0.0..=1.0).contains(v)) {
        return invalid("normalised boundaries must lie in [0, 1]");
    }
    let errs = boundary_errors(pred, truth);
    let starts: Vec<f64> = errs.iter().map(|e| e[0]).collect();
    let ends: Vec<f64> = errs.iter().map(|e| e[1]).collect();
    let all: Vec<f64> = errs.iter().flatten().copied().collect();
    Ok(LocalisationReport {
        count: pred.len(),
        start: ErrorStats::of(&starts),
        end: ErrorStats::of(&ends),
        overall: ErrorStats::of(&all),
        trusted_fraction: None,
    })
}

/// Everything `eval` writes, as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub n_clips: usize,
    pub accuracy: f64,
    pub macro_auc: f64,
    /// Real versus non-real.
    pub eer: f64,
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub localisation: Option<LocalisationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trust_gate: Option<TrustGateReport>,
}

/// Mean boundary error on half-truth clips split by the trust gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustGateReport {
    pub trusted: usize,
    pub untrusted: usize,
    pub trusted_mean_error: Option<f64>,
    pub untrusted_mean_error: Option<f64>,
}

impl TrustGateReport {
    /// `items`: (trusted, mean start/end error in seconds).
    pub fn new(items: &[(bool, f64)]) -> Self {
        let mean = |want: bool| {
            let v: Vec<f64> = items.iter().filter(|(t, _)| *t == want).map(|(_, e)| *e).collect();
            (v.len(), (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64))
        };
        let (trusted, trusted_mean_error) = mean(true);
        let (untrusted, untrusted_mean_error) = mean(false);
        Self { trusted, untrusted, trusted_mean_error, untrusted_mean_error }
    }
}

/// Full evaluation report from per-clip predictions. Ternary models add
/// real-vs-non-real EER, localisation on half-truth clips and the trust-gate
/// split; binary models score the non-real probability.
pub fn build_report(model: &str, preds: &[Prediction], labels: &[ClipLabel]) -> Result<EvalReport> {
    if preds.is_empty() || preds.len() != labels.len() {
        return invalid(format!("{} predictions for {} labels", preds.len(), labels.len()));
    }
    let n_classes = preds[0].probs.len();
    let classes: Vec<usize> = labels.iter().map(|l| target_class(l, n_classes)).collect();
    let predicted: Vec<usize> = preds.iter().map(Prediction::class).collect();
    let cls = classification_report(&predicted, &classes, n_classes)?;
    let probs: Vec<Vec<f64>> = preds.iter().map(|p| p.probs.clone()).collect();
    let non_real: Vec<bool> = labels.iter().map(|l| l.class != ClassLabel::Real).collect();
    let score: Vec<f64> = probs.iter().map(|p| 1.0 - p[0]).collect();
    let macro_auc = if n_classes == 2 { auc(&roc_curve(&score, &non_real)?) } else { macro_ovr_auc(&probs, &classes)? };
    let eer_value = eer(&roc_curve(&score, &non_real)?);

    let (mut localisation, mut gate) = (None, None);
    if n_classes == 3 {
        let ht: Vec<(&Prediction, [f64; 2])> = preds
            .iter()
            .zip(labels)
            .filter_map(|(p, l)| l.boundaries.map(|(s, e)| (p, [s, e])))
            .filter(|(p, _)| p.boundaries.is_some())
            .collect();
        if !ht.is_empty() {
            let pred_b: Vec<[f64; 2]> = ht.iter().map(|(p, _)| p.boundaries.expect("filtered")).collect();
            let true_b: Vec<[f64; 2]> = ht.iter().map(|(_, t)| *t).collect();
            let trusted: Vec<bool> = ht.iter().map(|(p, _)| trust_gate(&[p.probs[0], p.probs[1], p.probs[2]])).collect();
            let mut report = localisation_report(&pred_b, &true_b)?;
            report.trusted_fraction = Some(trusted.iter().filter(|&&t| t).count() as f64 / trusted.len() as f64);
            let items: Vec<(bool, f64)> = boundary_errors(&pred_b, &true_b)
                .iter()
                .zip(&trusted)
                .map(|(e, &t)| (t, (e[0] + e[1]) / 2.0))
                .collect();
            gate = Some(TrustGateReport::new(&items));
            localisation = Some(report);
        }
    }
    Ok(EvalReport {
        model: model.to_string(),
        n_clips: preds.len(),
        accuracy: cls.accuracy,
        macro_auc,
        eer: eer_value,
        confusion: cls.confusion,
        per_class: cls.per_class,
        macro_precision: cls.macro_precision,
        macro_recall: cls.macro_recall,
        macro_f1: cls.macro_f1,
        localisation,
        trust_gate: gate,
    })
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serialises");
    write_atomic(path, json.as_bytes()).map_err(|e| CoreError::io(path, e))
}

/// `clip,score,label` rows for external plotting.
pub fn scores_csv(rows: &[(String, f64, usize)]) -> String {
    let mut out = String::from("clip,score,label\n");
    for (clip, score, label) in rows {
        out.push_str(&format!("{clip},{score},{label}\n"));
    }
    out
}
