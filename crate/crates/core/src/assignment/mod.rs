//! Splitting the unlabeled pool into confident ID, confident OOD and
//! unconfident samples.
//!
//! The primary rule is the dual-threshold ternary split on detection scores
//! with thresholds taken as quantiles of the labeled-set scores. Fixed
//! softmax thresholds, rank-based (sort) selection and the cluster-purity
//! in-distribution filter (IDF) are provided as alternatives.

pub mod kmeans;

use ndarray::{concatenate, ArrayView2, Axis};

use crate::benchdata::{LabeledSet, UnlabeledPool};
use crate::error::{PsaError, Result};
use crate::scoring::argmax;
use crate::Scalar;

pub use kmeans::{kmeans, KMeansResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds<F> {
    pub delta_id: F,
    pub delta_ood: F,
    pub q_id: F,
    pub q_ood: F,
}

/// Disjoint cover of the pool indices. Each list is sorted by pool index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssignmentPartition {
    /// `(pool index, pseudo-label)`
    pub selected_id: Vec<(usize, usize)>,
    pub selected_ood: Vec<usize>,
    pub unconfident: Vec<usize>,
}

impl AssignmentPartition {
    pub fn len(&self) -> usize {
        self.selected_id.len() + self.selected_ood.len() + self.unconfident.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when the three sets are pairwise disjoint and cover `0..pool_size`.
    pub fn is_partition_of(&self, pool_size: usize) -> bool {
        let mut seen = vec![false; pool_size];
        let all = self
            .selected_id
            .iter()
            .map(|&(i, _)| i)
            .chain(self.selected_ood.iter().copied())
            .chain(self.unconfident.iter().copied());
        for i in all {
            if i >= pool_size || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Linear-interpolation quantile: with `S` sorted ascending and
/// `h = (n-1)q`, returns `S[⌊h⌋] + (h-⌊h⌋)(S[⌊h⌋+1] - S[⌊h⌋])`.
pub fn quantile<F: Scalar>(values: &[F], q: F) -> Result<F> {
    if values.is_empty() {
        return Err(PsaError::Empty("quantile of an empty set".into()));
    }
    if !(q > F::zero() && q < F::one()) {
        return Err(PsaError::invalid(format!(
            "quantile level {q} outside (0, 1)"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(PsaError::NonFinite("quantile input".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("NaN excluded"));
    let h = F::from_usize_lossy(s.len() - 1) * q;
    let lo = h.floor();
    let i = lo.to_usize().expect("index fits");
    if i + 1 >= s.len() {
        return Ok(s[s.len() - 1]);
    }
    // clamped so rounding never leaves the segment, keeping q ↦ value monotone
    let v = s[i] + (h - lo) * (s[i + 1] - s[i]);
    Ok(v.max(s[i]).min(s[i + 1]))
}

/// `δ_id = Q(S; q_id)`, `δ_ood = Q(S; q_ood)` over labeled-set scores.
pub fn compute_thresholds<F: Scalar>(
    labeled_scores: &[F],
    q_id: F,
    q_ood: F,
) -> Result<Thresholds<F>> {
    Ok(Thresholds {
        delta_id: quantile(labeled_scores, q_id)?,
        delta_ood: quantile(labeled_scores, q_ood)?,
        q_id,
        q_ood,
    })
}

fn check_rows<F: Scalar>(scores: &[F], logits: &ArrayView2<F>) -> Result<()> {
    if scores.len() != logits.nrows() {
        return Err(PsaError::Shape(format!(
            "{} scores for {} logit rows",
            scores.len(),
            logits.nrows()
        )));
    }
    Ok(())
}

/// `s > δ_id` → ID (pseudo-labeled by argmax), `s < δ_ood` → OOD,
/// anything else, including equality with either threshold, is unconfident.
fn ternary_rule<F: Scalar>(
    scores: &[F],
    logits: ArrayView2<F>,
    delta_id: F,
    delta_ood: F,
) -> Result<AssignmentPartition> {
    check_rows(scores, &logits)?;
    if delta_id < delta_ood || delta_id.is_nan() || delta_ood.is_nan() {
        return Err(PsaError::InvertedThresholds {
            delta_id: delta_id.as_f64(),
            delta_ood: delta_ood.as_f64(),
        });
    }
    let mut part = AssignmentPartition::default();
    for (i, &s) in scores.iter().enumerate() {
        if s > delta_id {
            part.selected_id.push((i, argmax(logits.row(i))));
        } else if s < delta_ood {
            part.selected_ood.push(i);
        } else {
            part.unconfident.push(i);
        }
    }
    Ok(part)
}

pub fn ternary_assign<F: Scalar>(
    pool_scores: &[F],
    pool_logits: ArrayView2<F>,
    thr: &Thresholds<F>,
) -> Result<AssignmentPartition> {
    ternary_rule(pool_scores, pool_logits, thr.delta_id, thr.delta_ood)
}

/// Ternary rule on maximum-softmax scores with fixed thresholds
/// `1/C ≤ δ_ood ≤ δ_id ≤ 1`.
pub fn softmax_threshold_assign<F: Scalar>(
    pool_msp: &[F],
    delta_id: F,
    delta_ood: F,
    pool_logits: ArrayView2<F>,
) -> Result<AssignmentPartition> {
    let floor = F::one() / F::from_usize_lossy(pool_logits.ncols().max(1));
    if delta_ood < floor || delta_id > F::one() {
        return Err(PsaError::invalid(format!(
            "softmax thresholds must satisfy 1/C <= delta_ood <= delta_id <= 1 (got {delta_ood}, {delta_id})"
        )));
    }
    ternary_rule(pool_msp, pool_logits, delta_id, delta_ood)
}

// Guards `floor((1 - 0.9) * 10)` against landing on 0.999...
const COUNT_SLACK: f64 = 1e-9;

/// Rank-based selection: the top `⌊(1-q_id)m⌋` scores become ID, the bottom
/// `⌊q_ood·m⌋` become OOD. Ties are ordered by ascending pool index.
pub fn sort_assign<F: Scalar>(
    pool_scores: &[F],
    q_id: F,
    q_ood: F,
    pool_logits: ArrayView2<F>,
) -> Result<AssignmentPartition> {
    check_rows(pool_scores, &pool_logits)?;
    let unit = |q: F| q >= F::zero() && q <= F::one();
    if !unit(q_id) || !unit(q_ood) {
        return Err(PsaError::invalid("q_id and q_ood must lie in [0, 1]"));
    }
    if pool_scores.iter().any(|s| s.is_nan()) {
        return Err(PsaError::NonFinite("sort_assign scores".into()));
    }
    let m = pool_scores.len();
    let mf = m as f64;
    let n_id = (((F::one() - q_id).as_f64() * mf) + COUNT_SLACK).floor() as usize;
    let n_ood = ((q_ood.as_f64() * mf) + COUNT_SLACK).floor() as usize;
    let (n_id, n_ood) = (n_id.min(m), n_ood.min(m));
    if n_id + n_ood > m {
        return Err(PsaError::invalid(format!(
            "top {n_id} and bottom {n_ood} windows overlap in a pool of {m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        pool_scores[b]
            .partial_cmp(&pool_scores[a])
            .expect("NaN excluded")
            .then(a.cmp(&b))
    });
    let mut part = AssignmentPartition::default();
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_id {
            part.selected_id.push((i, argmax(pool_logits.row(i))));
        } else if rank >= m - n_ood {
            part.selected_ood.push(i);
        } else {
            part.unconfident.push(i);
        }
    }
    part.selected_id.sort_unstable();
    part.selected_ood.sort_unstable();
    part.unconfident.sort_unstable();
    Ok(part)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdfConfig {
    pub k: usize,
    pub tau: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for IdfConfig {
    fn default() -> Self {
        IdfConfig {
            k: 16,
            tau: 0.5,
            max_iters: 50,
            seed: 0,
        }
    }
}

impl IdfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(PsaError::invalid("IDF k must be >= 2"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(PsaError::invalid("IDF tau must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(PsaError::invalid("IDF max_iters must be >= 1"));
        }
        Ok(())
    }
}

/// Binary cluster-purity filter. For cluster `k` and class `c`,
/// `rate = |labeled members of class c| / |cluster k|`; when the best rate
/// exceeds `tau`, every pool member of the cluster becomes ID with that
/// class (ties to the smaller class id). All other pool samples are OOD and
/// nothing is left unconfident.
pub fn idf_filter(
    labeled_clusters: &[usize],
    labeled_labels: &[usize],
    pool_clusters: &[usize],
    num_classes: usize,
    tau: f64,
) -> Result<AssignmentPartition> {
    if labeled_clusters.len() != labeled_labels.len() {
        return Err(PsaError::Shape(
            "labeled cluster ids and labels differ in length".into(),
        ));
    }
    let k = labeled_clusters
        .iter()
        .chain(pool_clusters)
        .max()
        .map_or(0, |&m| m + 1);
    let mut size = vec![0usize; k];
    let mut class_count = vec![vec![0usize; num_classes]; k];
    for (&c, &y) in labeled_clusters.iter().zip(labeled_labels) {
        if y >= num_classes {
            return Err(PsaError::invalid(format!("label {y} out of range")));
        }
        size[c] += 1;
        class_count[c][y] += 1;
    }
    for &c in pool_clusters {
        size[c] += 1;
    }
    let cluster_label: Vec<Option<usize>> = (0..k)
        .map(|c| {
            let (best, count) = class_count[c]
                .iter()
                .enumerate()
                .fold((0, 0), |acc, (y, &n)| if n > acc.1 { (y, n) } else { acc });
            (size[c] > 0 && count as f64 / size[c] as f64 > tau).then_some(best)
        })
        .collect();
    let mut part = AssignmentPartition::default();
    for (i, &c) in pool_clusters.iter().enumerate() {
        match cluster_label[c] {
            Some(y) => part.selected_id.push((i, y)),
            None => part.selected_ood.push(i),
        }
    }
    Ok(part)
}

/// Clusters labeled and pool features jointly and applies [`idf_filter`].
pub fn idf_assign<F: Scalar>(
    labeled_features: ArrayView2<F>,
    labeled_labels: &[usize],
    pool_features: ArrayView2<F>,
    num_classes: usize,
    cfg: &IdfConfig,
) -> Result<AssignmentPartition> {
    cfg.validate()?;
    let all = concatenate(Axis(0), &[labeled_features, pool_features])
        .map_err(|e| PsaError::Shape(e.to_string()))?;
    let k = cfg.k.min(all.nrows());
    if k == 0 {
        return Ok(AssignmentPartition::default());
    }
    let clusters = kmeans(all.view(), k, cfg.seed, cfg.max_iters)?.assignments;
    let (lab, pool) = clusters.split_at(labeled_features.nrows());
    idf_filter(lab, labeled_labels, pool, num_classes, cfg.tau)
}

/// `D_L ∪ selected ID (pseudo-labeled)` and `selected OOD ⊆ D_U`;
/// unconfident samples are dropped from both.
pub fn update_datasets<F: Scalar>(
    labeled: &LabeledSet<F>,
    pool: &UnlabeledPool<F>,
    part: &AssignmentPartition,
) -> Result<(LabeledSet<F>, UnlabeledPool<F>)> {
    let m = pool.len();
    if !part.is_partition_of(m) {
        return Err(PsaError::invalid("partition does not cover the pool"));
    }
    let idx: Vec<usize> = part.selected_id.iter().map(|&(i, _)| i).collect();
    let features = concatenate(
        Axis(0),
        &[
            labeled.features.view(),
            pool.features.select(Axis(0), &idx).view(),
        ],
    )
    .map_err(|e| PsaError::Shape(e.to_string()))?;
    let labels = labeled
        .labels
        .iter()
        .copied()
        .chain(part.selected_id.iter().map(|&(_, y)| y))
        .collect();
    Ok((
        LabeledSet::new(features, labels)?,
        pool.subset(&part.selected_ood),
    ))
}
