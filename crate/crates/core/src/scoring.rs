//! Per-sample detection scores. Convention: higher score means more
//! in-distribution.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{PsaError, Result};
use crate::losses::log_sum_exp;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Maximum softmax probability.
    Msp,
    /// Negative energy, `T·log Σ exp(l/T)`.
    NegativeEnergy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreMethod<F> {
    pub kind: ScoreKind,
    pub temperature: F,
}

impl<F: Scalar> ScoreMethod<F> {
    pub fn msp() -> Self {
        ScoreMethod {
            kind: ScoreKind::Msp,
            temperature: F::one(),
        }
    }

    pub fn energy(temperature: F) -> Self {
        ScoreMethod {
            kind: ScoreKind::NegativeEnergy,
            temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature <= F::zero() {
            return Err(PsaError::invalid("temperature must be > 0"));
        }
        Ok(())
    }
}

pub fn softmax<F: Scalar>(logits: ArrayView1<F>, temperature: F) -> Array1<F> {
    let scaled = logits.mapv(|l| l / temperature);
    let lse = log_sum_exp(scaled.view());
    scaled.mapv(|s| (s - lse).exp())
}

/// `E = -T · log Σ_c exp(l_c / T)`.
pub fn energy<F: Scalar>(logits: ArrayView1<F>, temperature: F) -> F {
    let scaled = logits.mapv(|l| l / temperature);
    -temperature * log_sum_exp(scaled.view())
}

pub fn detection_score<F: Scalar>(logits: ArrayView1<F>, method: &ScoreMethod<F>) -> F {
    match method.kind {
        // argmax of the softmax is exp(max - lse) with T = 1
        ScoreKind::Msp => {
            let m = logits.iter().copied().fold(F::neg_infinity(), F::max);
            (m - log_sum_exp(logits)).exp()
        }
        ScoreKind::NegativeEnergy => -energy(logits, method.temperature),
    }
}

/// Scores every row of a logit matrix.
pub fn detection_scores<F: Scalar>(logits: ArrayView2<F>, method: &ScoreMethod<F>) -> Vec<F> {
    logits
        .rows()
        .into_iter()
        .map(|row| detection_score(row, method))
        .collect()
}

/// Index of the largest logit; ties resolve to the smaller class id.
pub fn argmax<F: Scalar>(row: ArrayView1<F>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
