//! SGD with momentum and coupled weight decay, and learning-rate schedules.

use crate::error::{PsaError, Result};
use crate::netcore::{ModelParameters, ParamSet};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Linear ramp over the warm-up epochs, then one cosine decay to 0.
    CosineWithWarmup,
    /// Two consecutive periods of `max_epochs` each: the first is
    /// `CosineWithWarmup`, the second restarts a plain cosine at `lr_init`.
    WarmRestarts,
}

impl Schedule {
    pub fn total_epochs(self, max_epochs: usize) -> usize {
        match self {
            Schedule::CosineWithWarmup => max_epochs,
            Schedule::WarmRestarts => 2 * max_epochs,
        }
    }
}

/// `v ← μ·v + (g + wd·w)`, `w ← w − lr·v`. The update is rejected before
/// touching the parameters if any gradient is non-finite.
pub fn sgd_step<F: Scalar>(
    params: &mut ModelParameters<F>,
    grads: &ParamSet<F>,
    lr: F,
    momentum: F,
    weight_decay: F,
) -> Result<()> {
    if grads.len() != params.weights.len() {
        return Err(PsaError::Shape(
            "gradient layout differs from parameters".into(),
        ));
    }
    if !grads.all_finite() {
        return Err(PsaError::NonFinite("gradient".into()));
    }
    let ModelParameters {
        weights, velocity, ..
    } = params;
    for ((w, v), &g) in weights
        .values_mut()
        .zip(velocity.values_mut())
        .zip(grads.values())
    {
        *v = momentum * *v + (g + weight_decay * *w);
        *w -= lr * *v;
    }
    Ok(())
}

fn cosine<F: Scalar>(lr_init: F, progress: F) -> F {
    lr_init * F::lit(0.5) * (F::one() + (F::PI() * progress).cos())
}

/// Learning rate for the 0-based `epoch`. `epoch == max_epochs` (one past
/// the last trained epoch of a period) evaluates the end of the cosine, 0.
pub fn lr_at<F: Scalar>(
    schedule: Schedule,
    epoch: usize,
    lr_init: F,
    warmup_epochs: usize,
    max_epochs: usize,
) -> F {
    let warm_cosine = |e: usize| {
        if e < warmup_epochs {
            lr_init * F::from_usize_lossy(e + 1) / F::from_usize_lossy(warmup_epochs)
        } else {
            let span = F::from_usize_lossy((max_epochs - warmup_epochs).max(1));
            let p = F::from_usize_lossy(e - warmup_epochs) / span;
            cosine(lr_init, p.min(F::one()))
        }
    };
    match schedule {
        Schedule::CosineWithWarmup => warm_cosine(epoch),
        Schedule::WarmRestarts => {
            if epoch < max_epochs {
                warm_cosine(epoch)
            } else {
                let local = F::from_usize_lossy(epoch - max_epochs);
                let p = local / F::from_usize_lossy(max_epochs.max(1));
                cosine(lr_init, p.min(F::one()))
            }
        }
    }
}
