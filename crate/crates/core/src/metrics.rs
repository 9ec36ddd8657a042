//! Evaluation metrics for semantically coherent OOD detection.
//!
//! All detection metrics treat a sample as "predicted ID" when its score is
//! `>= θ` for the relevant threshold θ, and all are rank-based.

use std::cmp::Ordering;

use crate::assignment::AssignmentPartition;
use crate::benchdata::HiddenFlag;
use crate::error::{PsaError, Result};
use crate::Scalar;

/// FPR levels reported for CCR@FPR.
pub const CCR_LEVELS: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalInputs<F> {
    /// Detection scores of ID test samples (higher = more ID).
    pub id_scores: Vec<F>,
    /// Whether the classifier's argmax matches the true class, per ID sample.
    pub id_correct: Vec<bool>,
    pub ood_scores: Vec<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Positive {
    Id,
    Ood,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub fpr95: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    /// CCR at each level of [`CCR_LEVELS`], in order.
    pub ccr: [f64; 4],
    pub acc: f64,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 9] = [
        "fpr95", "auroc", "aupr_in", "aupr_out", "ccr_1e-4", "ccr_1e-3", "ccr_1e-2", "ccr_1e-1",
        "acc",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.fpr95,
            self.auroc,
            self.aupr_in,
            self.aupr_out,
            self.ccr[0],
            self.ccr[1],
            self.ccr[2],
            self.ccr[3],
            self.acc,
        ]
    }

    pub fn from_values(v: [f64; 9]) -> Self {
        MetricsReport {
            fpr95: v[0],
            auroc: v[1],
            aupr_in: v[2],
            aupr_out: v[3],
            ccr: [v[4], v[5], v[6], v[7]],
            acc: v[8],
        }
    }
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    s
}

impl<F: Scalar> EvalInputs<F> {
    fn check_detection(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.id_scores.len() != self.id_correct.len() {
            return Err(PsaError::Shape(
                "id_scores and id_correct differ in length".into(),
            ));
        }
        if self.id_scores.is_empty() {
            return Err(PsaError::Empty("no ID scores".into()));
        }
        if self.ood_scores.is_empty() {
            return Err(PsaError::Empty("no OOD scores".into()));
        }
        let id: Vec<f64> = self.id_scores.iter().map(|v| v.as_f64()).collect();
        let ood: Vec<f64> = self.ood_scores.iter().map(|v| v.as_f64()).collect();
        if id.iter().chain(&ood).any(|v| v.is_nan()) {
            return Err(PsaError::NonFinite("detection scores".into()));
        }
        Ok((id, ood))
    }
}

/// Probability that a random ID score beats a random OOD score, ties
/// counting one half (Mann-Whitney statistic via mid-ranks).
pub fn auroc<F: Scalar>(e: &EvalInputs<F>) -> Result<f64> {
    let (id, ood) = e.check_detection()?;
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, true))
        .chain(ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (n1, n0) = (id.len() as f64, ood.len() as f64);
    Ok((rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

// `count >= tpr * n` is evaluated with this slack so that e.g. 19 of 20 meets 0.95.
const RATE_SLACK: f64 = 1e-9;

/// OOD false-positive rate at the largest threshold θ keeping at least a
/// `tpr` fraction of ID samples (`id >= θ`).
pub fn fpr_at_tpr<F: Scalar>(e: &EvalInputs<F>, tpr: f64) -> Result<f64> {
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(PsaError::invalid("tpr must lie in (0, 1]"));
    }
    let (id, ood) = e.check_detection()?;
    let desc = sorted_desc(&id);
    let need = tpr * desc.len() as f64;
    let k = (1..=desc.len())
        .find(|&k| k as f64 + RATE_SLACK >= need)
        .unwrap_or(desc.len());
    let theta = desc[k - 1];
    Ok(ood.iter().filter(|&&s| s >= theta).count() as f64 / ood.len() as f64)
}

/// Step-wise average precision `Σ (R_k - R_{k-1}) P_k` over descending
/// distinct thresholds. For `Positive::Ood` the scores are negated.
pub fn aupr<F: Scalar>(e: &EvalInputs<F>, positive: Positive) -> Result<f64> {
    let (id, ood) = e.check_detection()?;
    let (pos, neg): (Vec<f64>, Vec<f64>) = match positive {
        Positive::Id => (id, ood),
        Positive::Ood => (
            ood.iter().map(|s| -s).collect(),
            id.iter().map(|s| -s).collect(),
        ),
    };
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let n_pos = pos.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / n_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

/// Fraction of ID samples that are both correctly classified and retained
/// at the smallest observed score θ with OOD false-positive rate `<= fpr`.
/// If no observed score qualifies, θ = +∞ and the result is 0.
pub fn ccr_at_fpr<F: Scalar>(e: &EvalInputs<F>, fpr: f64) -> Result<f64> {
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(PsaError::invalid("fpr level must lie in (0, 1)"));
    }
    let (id, ood) = e.check_detection()?;
    let ood_desc = sorted_desc(&ood);
    let allowed = (fpr * ood.len() as f64 + RATE_SLACK).floor() as usize;
    let kept = |pass: &dyn Fn(f64) -> bool| {
        id.iter()
            .zip(&e.id_correct)
            .filter(|(&s, &c)| c && pass(s))
            .count() as f64
            / id.len() as f64
    };
    if allowed >= ood.len() {
        return Ok(kept(&|_| true));
    }
    // θ must exceed the (allowed+1)-th largest OOD score
    let bar = ood_desc[allowed];
    Ok(kept(&|s| s > bar))
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(PsaError::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(PsaError::Empty("accuracy of an empty set".into()));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// ACC from the per-sample correctness flags alone; available even without OOD scores.
pub fn accuracy_from_flags(correct: &[bool]) -> Result<f64> {
    if correct.is_empty() {
        return Err(PsaError::Empty("accuracy of an empty set".into()));
    }
    Ok(correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
}

pub fn evaluate<F: Scalar>(e: &EvalInputs<F>) -> Result<MetricsReport> {
    let mut ccr = [0.0; 4];
    for (slot, &level) in ccr.iter_mut().zip(&CCR_LEVELS) {
        *slot = ccr_at_fpr(e, level)?;
    }
    Ok(MetricsReport {
        fpr95: fpr_at_tpr(e, 0.95)?,
        auroc: auroc(e)?,
        aupr_in: aupr(e, Positive::Id)?,
        aupr_out: aupr(e, Positive::Ood)?,
        ccr,
        acc: accuracy_from_flags(&e.id_correct)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionStats {
    pub id_count: usize,
    /// Fraction of selected-ID samples that are truly ID with the right
    /// pseudo-label; 1.0 when nothing was selected.
    pub id_purity: f64,
    pub ood_count: usize,
    /// Fraction of selected-OOD samples that are truly OOD; 1.0 when empty.
    pub ood_purity: f64,
    pub unconfident_count: usize,
}

pub fn selection_stats(part: &AssignmentPartition, truth: &[HiddenFlag]) -> Result<SelectionStats> {
    if !part.is_partition_of(truth.len()) {
        return Err(PsaError::invalid(
            "partition does not match the truth vector",
        ));
    }
    let ratio = |hits: usize, n: usize| if n == 0 { 1.0 } else { hits as f64 / n as f64 };
    let id_hits = part
        .selected_id
        .iter()
        .filter(|&&(i, y)| truth[i] == HiddenFlag::Id(y))
        .count();
    let ood_hits = part
        .selected_ood
        .iter()
        .filter(|&&i| !truth[i].is_id())
        .count();
    Ok(SelectionStats {
        id_count: part.selected_id.len(),
        id_purity: ratio(id_hits, part.selected_id.len()),
        ood_count: part.selected_ood.len(),
        ood_purity: ratio(ood_hits, part.selected_ood.len()),
        unconfident_count: part.unconfident.len(),
    })
}
