//! Finite-difference checks of every loss through the full network.

use ndarray::{concatenate, s, Array2, Axis};
use psa_core::losses::{self, Concept, LossWeights};
use psa_core::netcore::{backward, forward, grad_check, init_params};
use psa_core::{Architecture, ModelParameters, ParamSet, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const POINTS: u64 = 10;
const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn arch() -> Architecture {
    Architecture::new(5, vec![7], 3, 4).unwrap()
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Glorot init plus Gaussian noise on every value, biases included, so the
/// point lies away from the zero-bias starting configuration.
fn random_params(arch: &Architecture, seed: u64, rng: &mut ChaCha8Rng) -> ModelParameters<f64> {
    let mut params = init_params::<f64>(arch, seed).unwrap();
    for v in params.weights.values_mut() {
        *v += 0.2 * rng.sample::<f64, _>(StandardNormal);
    }
    params
}

/// Checks the objective built by `make` at `POINTS` random (parameters, batch) pairs and returns the
/// worst relative error seen.
fn worst_over_points<O>(n: usize, mut make: impl FnMut(Array2<f64>, Vec<usize>) -> O) -> f64
where
    O: FnMut(&ModelParameters<f64>) -> Result<(f64, ParamSet<f64>)>,
{
    let mut worst = 0.0f64;
    for point in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + point);
        let params = random_params(&arch(), point, &mut rng);
        let x = random_batch(&mut rng, n, 5);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let err = grad_check(make(x, labels), &params, EPS).unwrap();
        worst = worst.max(err);
    }
    worst
}

#[test]
fn cross_entropy_gradient() {
    let worst = worst_over_points(6, |x, labels| {
        move |p: &ModelParameters<f64>| {
            let out = forward(p, x.view())?;
            let (v, g) = losses::cross_entropy(out.logits.view(), &labels)?;
            Ok((v, backward(p, &out, g.view(), None)?))
        }
    });
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn outlier_exposure_gradient() {
    let worst = worst_over_points(6, |x, _| {
        move |p: &ModelParameters<f64>| {
            let out = forward(p, x.view())?;
            let (v, g) = losses::outlier_exposure(out.logits.view())?;
            Ok((v, backward(p, &out, g.view(), None)?))
        }
    });
    assert!(worst < TOL, "worst relative error {worst:e}");
}

fn embedding_objective<L>(
    x: Array2<f64>,
    loss: L,
) -> impl FnMut(&ModelParameters<f64>) -> Result<(f64, ParamSet<f64>)>
where
    L: Fn(ndarray::ArrayView2<f64>) -> Result<(f64, Array2<f64>)>,
{
    move |p: &ModelParameters<f64>| {
        let out = forward(p, x.view())?;
        let (v, dz) = loss(out.embeddings.view())?;
        let zero = Array2::zeros(out.logits.dim());
        Ok((v, backward(p, &out, zero.view(), Some(dz.view()))?))
    }
}

#[test]
fn concept_contrastive_gradient() {
    let worst = worst_over_points(8, |x, labels| {
        let concepts: Vec<Concept> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                if i >= 5 {
                    Concept::Ood
                } else {
                    Concept::IdClass(y % 2)
                }
            })
            .collect();
        embedding_objective(x, move |z| losses::concept_contrastive(z, &concepts, 0.1))
    });
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn supervised_contrastive_gradient() {
    let worst = worst_over_points(8, |x, labels| {
        let keys: Vec<Option<usize>> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| (i < 5).then_some(y % 2))
            .collect();
        embedding_objective(x, move |z| losses::supervised_contrastive(z, &keys, 0.1))
    });
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn combined_objective_gradient() {
    let w = LossWeights::<f64>::default();
    let n_lab = 5;
    let worst = worst_over_points(9, |x, labels| {
        let labels = labels[..n_lab].to_vec();
        let concepts: Vec<Concept> = labels
            .iter()
            .map(|&y| Concept::IdClass(y))
            .chain(std::iter::repeat_n(Concept::Ood, 9 - n_lab))
            .collect();
        move |p: &ModelParameters<f64>| {
            let out = forward(p, x.view())?;
            let (ce, dce) = losses::cross_entropy(out.logits.slice(s![..n_lab, ..]), &labels)?;
            let (oe, doe) = losses::outlier_exposure(out.logits.slice(s![n_lab.., ..]))?;
            let (aux, daux) =
                losses::concept_contrastive(out.embeddings.view(), &concepts, w.tau_s)?;
            let dlogits = concatenate(Axis(0), &[dce.view(), (doe * w.gamma).view()]).unwrap();
            let dz = daux * w.lambda;
            let v = losses::total_objective(ce, oe, aux, &w);
            Ok((v, backward(p, &out, dlogits.view(), Some(dz.view()))?))
        }
    });
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn deeper_network_gradient() {
    let arch = Architecture::new(3, vec![6, 5], 4, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = random_params(&arch, 3, &mut rng);
    let x = random_batch(&mut rng, 6, 3);
    let labels = vec![0, 1, 2, 3, 0, 1];
    let concepts: Vec<Concept> = labels.iter().map(|&y| Concept::IdClass(y % 2)).collect();
    let err = grad_check(
        |p: &ModelParameters<f64>| {
            let out = forward(p, x.view())?;
            let (ce, dce) = losses::cross_entropy(out.logits.view(), &labels)?;
            let (aux, dz) = losses::concept_contrastive(out.embeddings.view(), &concepts, 0.5)?;
            Ok((ce + aux, backward(p, &out, dce.view(), Some(dz.view()))?))
        },
        &params,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "relative error {err:e}");
}
