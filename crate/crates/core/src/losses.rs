//! Training objectives. Each loss returns its value and the gradient with
//! respect to its input (logits or normalized embeddings); chaining into the
//! network is done by [`crate::netcore::backward`].

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{PsaError, Result};
use crate::Scalar;

/// Semantic concept of a sample for the contrastive loss. All selected OOD
/// samples share one concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Concept {
    IdClass(usize),
    Ood,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<F> {
    /// Outlier-exposure weight.
    pub gamma: F,
    /// Auxiliary (contrastive) weight.
    pub lambda: F,
    /// Contrastive temperature.
    pub tau_s: F,
}

impl<F: Scalar> Default for LossWeights<F> {
    fn default() -> Self {
        LossWeights {
            gamma: F::lit(0.5),
            lambda: F::lit(0.1),
            tau_s: F::lit(0.1),
        }
    }
}

impl<F: Scalar> LossWeights<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= F::zero() && self.lambda >= F::zero()) {
            return Err(PsaError::invalid("gamma and lambda must be >= 0"));
        }
        if self.tau_s.is_nan() || self.tau_s <= F::zero() {
            return Err(PsaError::invalid("tau_s must be > 0"));
        }
        Ok(())
    }
}

/// Returns `(m, log Σ exp(v - m))` with `m = max v`. The max term
/// contributes exactly 1, so the log is taken with `ln_1p` over the rest.
pub(crate) fn shifted_lse<F: Scalar>(vals: impl Iterator<Item = F> + Clone) -> (F, F) {
    let (arg, m) = vals
        .clone()
        .enumerate()
        .fold((usize::MAX, F::neg_infinity()), |acc, (i, v)| {
            if v > acc.1 {
                (i, v)
            } else {
                acc
            }
        });
    if arg == usize::MAX {
        return (m, F::zero());
    }
    let rest: F = vals
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, v)| (v - m).exp())
        .sum();
    (m, rest.ln_1p())
}

/// Max-shifted log-sum-exp.
pub(crate) fn log_sum_exp<F: Scalar>(row: ArrayView1<F>) -> F {
    let (m, log_z) = shifted_lse(row.iter().copied());
    m + log_z
}

/// Mean cross-entropy of `softmax(logits)` against integer labels.
/// An empty batch yields loss 0 and an empty gradient.
pub fn cross_entropy<F: Scalar>(logits: ArrayView2<F>, labels: &[usize]) -> Result<(F, Array2<F>)> {
    let (n, c) = logits.dim();
    if labels.len() != n {
        return Err(PsaError::Shape(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(PsaError::invalid(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let mut grad = Array2::zeros((n, c));
    if n == 0 {
        return Ok((F::zero(), grad));
    }
    let inv_n = F::one() / F::from_usize_lossy(n);
    let mut loss = F::zero();
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let (m, log_z) = shifted_lse(row.iter().copied());
        // (m - l_y) + log Σ exp(l - m) keeps full precision when l_y is the max
        loss += (m - row[y]) + log_z;
        for (g, &l) in grad.row_mut(i).iter_mut().zip(row.iter()) {
            *g = (l - m - log_z).exp() * inv_n;
        }
        grad[[i, y]] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// Outlier exposure: mean over samples of the cross-entropy against the
/// uniform distribution over classes. Minimum `ln C` at uniform prediction.
pub fn outlier_exposure<F: Scalar>(logits: ArrayView2<F>) -> Result<(F, Array2<F>)> {
    let (n, c) = logits.dim();
    let mut grad = Array2::zeros((n, c));
    if n == 0 {
        return Ok((F::zero(), grad));
    }
    let inv_n = F::one() / F::from_usize_lossy(n);
    let inv_c = F::one() / F::from_usize_lossy(c);
    let mut loss = F::zero();
    for i in 0..n {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        let mean_logit = row.iter().copied().sum::<F>() * inv_c;
        loss += lse - mean_logit;
        for (g, &l) in grad.row_mut(i).iter_mut().zip(row.iter()) {
            *g = ((l - lse).exp() - inv_c) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Concept contrastive loss over unit-norm embeddings.
///
/// For each anchor `i` with at least one same-concept batch mate, the term is
/// the mean over positives `q` of `-log(exp(z_i·z_q/τ) / Σ_{n≠i} exp(z_i·z_n/τ))`.
/// Anchors without positives are skipped; the loss is the mean over the
/// remaining anchors.
pub fn concept_contrastive<F: Scalar>(
    embeddings: ArrayView2<F>,
    concepts: &[Concept],
    tau_s: F,
) -> Result<(F, Array2<F>)> {
    let keys: Vec<Option<Concept>> = concepts.iter().copied().map(Some).collect();
    contrastive(embeddings, &keys, tau_s)
}

/// Supervised-contrastive variant: only labeled ID samples (`Some(class)`)
/// act as anchors or positives; `None` entries (OOD) appear only as
/// negatives in the denominators.
pub fn supervised_contrastive<F: Scalar>(
    embeddings: ArrayView2<F>,
    labels: &[Option<usize>],
    tau_s: F,
) -> Result<(F, Array2<F>)> {
    let keys: Vec<Option<Concept>> = labels.iter().map(|l| l.map(Concept::IdClass)).collect();
    contrastive(embeddings, &keys, tau_s)
}

fn contrastive<F: Scalar>(
    z: ArrayView2<F>,
    keys: &[Option<Concept>],
    tau_s: F,
) -> Result<(F, Array2<F>)> {
    let (n, d) = z.dim();
    if keys.len() != n {
        return Err(PsaError::Shape(format!(
            "{} concepts for {n} embeddings",
            keys.len()
        )));
    }
    if tau_s.is_nan() || tau_s <= F::zero() {
        return Err(PsaError::invalid("tau_s must be > 0"));
    }
    let mut grad = Array2::zeros((n, d));
    if n < 2 {
        return Ok((F::zero(), grad));
    }

    let positives: Vec<Vec<usize>> = (0..n)
        .map(|i| match keys[i] {
            None => Vec::new(),
            Some(k) => (0..n).filter(|&q| q != i && keys[q] == Some(k)).collect(),
        })
        .collect();
    let anchors = positives.iter().filter(|p| !p.is_empty()).count();
    if anchors == 0 {
        return Ok((F::zero(), grad));
    }

    let inv_tau = F::one() / tau_s;
    let sim = z.dot(&z.t()).mapv(|v| v * inv_tau);
    let inv_anchors = F::one() / F::from_usize_lossy(anchors);
    // dL/dsim, then dz = (dsim + dsimᵀ) z / τ
    let mut dsim = Array2::<F>::zeros((n, n));
    let mut loss = F::zero();
    for (i, pos) in positives.iter().enumerate() {
        if pos.is_empty() {
            continue;
        }
        let row = sim.row(i);
        let (m, log_z) = shifted_lse((0..n).filter(|&k| k != i).map(|k| row[k]));
        let inv_p = F::one() / F::from_usize_lossy(pos.len());
        let mean_pos = pos.iter().map(|&q| row[q]).sum::<F>() * inv_p;
        loss += (m - mean_pos) + log_z;
        for k in (0..n).filter(|&k| k != i) {
            dsim[[i, k]] = (row[k] - m - log_z).exp() * inv_anchors;
        }
        for &q in pos {
            dsim[[i, q]] -= inv_p * inv_anchors;
        }
    }
    let sym = &dsim + &dsim.t();
    grad.assign(&sym.dot(&z));
    grad.mapv_inplace(|v| v * inv_tau);
    Ok((loss * inv_anchors, grad))
}

/// `ce + γ·oe + λ·aux`. Serves both the selection-stage and the retraining
/// objective; the stages differ only in which data feed the components.
pub fn total_objective<F: Scalar>(ce: F, oe: F, aux: F, w: &LossWeights<F>) -> F {
    ce + w.gamma * oe + w.lambda * aux
}
