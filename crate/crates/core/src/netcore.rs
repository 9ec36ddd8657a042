//! A small fully differentiable classifier: MLP backbone `f`, linear
//! classification head `l` and a linear projection head `g` whose output is
//! L2-normalized. Gradients are computed analytically; [`grad_check`]
//! compares them against central finite differences.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{PsaError, Result};
use crate::rng::{self, Stream};
use crate::Scalar;

/// Added to the projection norm before dividing.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    /// Backbone layer widths, ReLU after each.
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub embed_dim: usize,
}

impl Architecture {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        num_classes: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        let arch = Architecture {
            input_dim,
            hidden_dims,
            num_classes,
            embed_dim,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(PsaError::invalid("all layer dimensions must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(PsaError::invalid("num_classes must be >= 2"));
        }
        Ok(())
    }

    /// Width of the backbone output feeding both heads.
    pub fn feature_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }
}

/// Affine layer `y = x W + b` with `W` stored as `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    fn values(&self) -> impl Iterator<Item = &F> {
        self.weight.iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }

    /// Row-by-row affine map. Each output row depends only on its input row
    /// and is accumulated in a fixed order, so permuting the batch permutes
    /// the result exactly.
    fn apply(&self, x: ArrayView2<F>) -> Array2<F> {
        let dout = self.fan_out();
        let w = self.weight.as_slice().expect("weights in standard layout");
        let b = self.bias.as_slice().expect("bias in standard layout");
        let mut out = Array2::zeros((x.nrows(), dout));
        for (xi, mut oi) in x.rows().into_iter().zip(out.rows_mut()) {
            let o = oi.as_slice_mut().expect("fresh array is contiguous");
            o.copy_from_slice(b);
            for (k, &xk) in xi.iter().enumerate() {
                if xk == F::zero() {
                    continue;
                }
                let wk = &w[k * dout..(k + 1) * dout];
                for (oj, &wkj) in o.iter_mut().zip(wk) {
                    *oj += xk * wkj;
                }
            }
        }
        out
    }
}

/// One value (or gradient, or momentum buffer) per trainable parameter,
/// laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    pub backbone: Vec<Dense<F>>,
    pub cls_head: Dense<F>,
    pub proj_head: Dense<F>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn zeros(arch: &Architecture) -> Self {
        let mut backbone = Vec::with_capacity(arch.hidden_dims.len());
        let mut fan_in = arch.input_dim;
        for &h in &arch.hidden_dims {
            backbone.push(Dense::zeros(fan_in, h));
            fan_in = h;
        }
        ParamSet {
            backbone,
            cls_head: Dense::zeros(fan_in, arch.num_classes),
            proj_head: Dense::zeros(fan_in, arch.embed_dim),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense<F>> {
        self.backbone
            .iter()
            .chain(std::iter::once(&self.cls_head))
            .chain(std::iter::once(&self.proj_head))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense<F>> {
        self.backbone
            .iter_mut()
            .chain(std::iter::once(&mut self.cls_head))
            .chain(std::iter::once(&mut self.proj_head))
    }

    /// All scalars in a fixed order: per layer, weights row-major then biases.
    pub fn values(&self) -> impl Iterator<Item = &F> {
        self.layers().flat_map(Dense::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.layers_mut().flat_map(Dense::values_mut)
    }

    pub fn len(&self) -> usize {
        self.layers().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ParamSet<F>, scale: F) {
        for (a, &b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }
}

/// Network weights plus the SGD momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<F> {
    pub arch: Architecture,
    pub weights: ParamSet<F>,
    pub velocity: ParamSet<F>,
}

impl<F: Scalar> ModelParameters<F> {
    pub fn zeros(arch: &Architecture) -> Self {
        ModelParameters {
            arch: arch.clone(),
            weights: ParamSet::zeros(arch),
            velocity: ParamSet::zeros(arch),
        }
    }
}

/// Glorot-uniform weights, zero biases, zero momentum. Draws are made in
/// `f64` so the same seed gives the same network in every precision.
pub fn init_params<F: Scalar>(arch: &Architecture, seed: u64) -> Result<ModelParameters<F>> {
    arch.validate()?;
    let mut params = ModelParameters::zeros(arch);
    let mut rng = rng::stream(seed, Stream::Init, 0);
    for layer in params.weights.layers_mut() {
        let bound = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
        for w in layer.weight.iter_mut() {
            *w = F::lit(rng.random_range(-bound..bound));
        }
    }
    Ok(params)
}

#[derive(Debug, Clone)]
struct ForwardCache<F> {
    input: Array2<F>,
    /// Post-ReLU output of each backbone layer; the last one feeds the heads.
    activations: Vec<Array2<F>>,
    /// Projection output before normalization.
    proj_raw: Array2<F>,
    proj_norm: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutputs<F> {
    pub logits: Array2<F>,
    /// Unit-norm rows `z = g(f(x)) / ‖g(f(x))‖`.
    pub embeddings: Array2<F>,
    cache: ForwardCache<F>,
}

impl<F: Scalar> ForwardOutputs<F> {
    /// Backbone features `f(x)`.
    pub fn features(&self) -> ArrayView2<'_, F> {
        self.cache
            .activations
            .last()
            .unwrap_or(&self.cache.input)
            .view()
    }

    pub fn len(&self) -> usize {
        self.logits.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.nrows() == 0
    }
}

pub fn forward<F: Scalar>(
    params: &ModelParameters<F>,
    batch: ArrayView2<F>,
) -> Result<ForwardOutputs<F>> {
    let arch = &params.arch;
    if batch.ncols() != arch.input_dim {
        return Err(PsaError::Shape(format!(
            "batch has {} columns, network expects {}",
            batch.ncols(),
            arch.input_dim
        )));
    }
    if let Some((row, _)) = batch
        .rows()
        .into_iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
    {
        return Err(PsaError::NonFinite(format!("forward input row {row}")));
    }

    let input = batch.as_standard_layout().into_owned();
    let mut activations = Vec::with_capacity(params.weights.backbone.len());
    for layer in &params.weights.backbone {
        let prev = activations.last().unwrap_or(&input);
        let mut h = layer.apply(prev.view());
        h.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
        activations.push(h);
    }
    let feats = activations.last().unwrap_or(&input);
    let logits = params.weights.cls_head.apply(feats.view());
    let proj_raw = params.weights.proj_head.apply(feats.view());

    let eps = F::lit(NORM_EPS);
    let proj_norm: Array1<F> = proj_raw
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v * v).sum::<F>().sqrt())
        .collect();
    let mut embeddings = proj_raw.clone();
    for (mut row, &n) in embeddings.rows_mut().into_iter().zip(proj_norm.iter()) {
        let inv = F::one() / (n + eps);
        row.mapv_inplace(|v| v * inv);
    }

    Ok(ForwardOutputs {
        logits,
        embeddings,
        cache: ForwardCache {
            input,
            activations,
            proj_raw,
            proj_norm,
        },
    })
}

/// Backpropagates upstream gradients w.r.t. logits and (optionally)
/// normalized embeddings into parameter gradients.
pub fn backward<F: Scalar>(
    params: &ModelParameters<F>,
    out: &ForwardOutputs<F>,
    dlogits: ArrayView2<F>,
    dembed: Option<ArrayView2<F>>,
) -> Result<ParamSet<F>> {
    let n = out.len();
    if dlogits.dim() != out.logits.dim() {
        return Err(PsaError::Shape("dlogits does not match logits".into()));
    }
    let w = &params.weights;
    let mut grads = ParamSet::zeros(&params.arch);
    let feats = out.features();

    grads.cls_head.weight = feats.t().dot(&dlogits);
    grads.cls_head.bias = dlogits.sum_axis(Axis(0));
    let mut dfeat = dlogits.dot(&w.cls_head.weight.t());

    if let Some(dz) = dembed {
        if dz.dim() != out.embeddings.dim() {
            return Err(PsaError::Shape("dembed does not match embeddings".into()));
        }
        // z = u / (‖u‖ + eps)  =>  du = (dz - z (z·dz)) / (‖u‖ + eps)
        let eps = F::lit(NORM_EPS);
        let mut du = Array2::zeros(out.cache.proj_raw.dim());
        for i in 0..n {
            let z = out.embeddings.row(i);
            let g = dz.row(i);
            let zg = z.dot(&g);
            let inv = F::one() / (out.cache.proj_norm[i] + eps);
            for (d, (&zj, &gj)) in du.row_mut(i).iter_mut().zip(z.iter().zip(g.iter())) {
                *d = (gj - zj * zg) * inv;
            }
        }
        grads.proj_head.weight = feats.t().dot(&du);
        grads.proj_head.bias = du.sum_axis(Axis(0));
        dfeat += &du.dot(&w.proj_head.weight.t());
    }

    let mut upstream = dfeat;
    for li in (0..w.backbone.len()).rev() {
        let act = &out.cache.activations[li];
        // ReLU mask from the post-activation: subgradient 0 at 0.
        ndarray::Zip::from(&mut upstream)
            .and(act)
            .for_each(|g, &a| {
                if a <= F::zero() {
                    *g = F::zero();
                }
            });
        let prev = if li == 0 {
            out.cache.input.view()
        } else {
            out.cache.activations[li - 1].view()
        };
        grads.backbone[li].weight = prev.t().dot(&upstream);
        grads.backbone[li].bias = upstream.sum_axis(Axis(0));
        if li > 0 {
            upstream = upstream.dot(&w.backbone[li].weight.t());
        }
    }
    Ok(grads)
}

/// Maximum relative error between the analytic gradient returned by
/// `objective` and a central finite difference, over every parameter:
/// `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check<F, O>(mut objective: O, params: &ModelParameters<F>, eps: F) -> Result<F>
where
    F: Scalar,
    O: FnMut(&ModelParameters<F>) -> Result<(F, ParamSet<F>)>,
{
    if !(eps > F::zero() && eps <= F::lit(1e-2)) {
        return Err(PsaError::invalid("grad_check eps must lie in (0, 1e-2]"));
    }
    let (value, analytic) = objective(params)?;
    if !value.is_finite() {
        return Err(PsaError::NonFinite("objective value".into()));
    }
    let mut probe = params.clone();
    let count = params.weights.len();
    let two = F::lit(2.0);
    let mut worst = F::zero();
    for (idx, &a) in analytic.values().enumerate().take(count) {
        let orig = *probe.weights.values().nth(idx).expect("index in range");
        set_nth(&mut probe.weights, idx, orig + eps);
        let (plus, _) = objective(&probe)?;
        set_nth(&mut probe.weights, idx, orig - eps);
        let (minus, _) = objective(&probe)?;
        set_nth(&mut probe.weights, idx, orig);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(PsaError::NonFinite(format!("objective at parameter {idx}")));
        }
        let numeric = (plus - minus) / (two * eps);
        let denom = F::one().max(a.abs()).max(numeric.abs());
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

fn set_nth<F: Scalar>(set: &mut ParamSet<F>, idx: usize, v: F) {
    *set.values_mut().nth(idx).expect("index in range") = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_arch() -> Architecture {
        Architecture::new(2, vec![8], 3, 4).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a: ModelParameters<f64> = init_params(&small_arch(), 7).unwrap();
        let b: ModelParameters<f64> = init_params(&small_arch(), 7).unwrap();
        assert_eq!(a, b);
        let c: ModelParameters<f64> = init_params(&small_arch(), 8).unwrap();
        assert_ne!(a.weights, c.weights);
        for layer in a.weights.layers() {
            assert!(layer.bias.iter().all(|&v| v == 0.0));
            let bound = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
            assert!(layer.weight.iter().all(|w| w.abs() <= bound));
        }
        assert!(a.velocity.values().all(|&v| v == 0.0));
    }

    #[test]
    fn init_shapes() {
        let p: ModelParameters<f64> = init_params(&small_arch(), 0).unwrap();
        assert_eq!(p.weights.backbone[0].weight.dim(), (2, 8));
        assert_eq!(p.weights.cls_head.weight.dim(), (8, 3));
        assert_eq!(p.weights.proj_head.weight.dim(), (8, 4));
        assert_eq!(p.weights.backbone[0].bias.len(), 8);
        assert_eq!(p.weights.cls_head.bias.len(), 3);
        assert_eq!(p.weights.proj_head.bias.len(), 4);
    }

    #[test]
    fn invalid_architecture() {
        assert!(Architecture::new(0, vec![4], 3, 4).is_err());
        assert!(Architecture::new(2, vec![0], 3, 4).is_err());
        assert!(Architecture::new(2, vec![4], 1, 4).is_err());
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let p = ModelParameters::<f64>::zeros(&small_arch());
        let out = forward(&p, array![[1.0, -3.0], [0.5, 2.0]].view()).unwrap();
        assert!(out.logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let p: ModelParameters<f64> = init_params(&small_arch(), 3).unwrap();
        let x = array![[1.0, 2.0], [-0.3, 0.7], [5.0, -4.0]];
        let out = forward(&p, x.view()).unwrap();
        for row in out.embeddings.rows() {
            let n = row.dot(&row).sqrt();
            assert!((n - 1.0).abs() < 1e-9, "norm {n}");
        }
    }

    #[test]
    fn hand_computed_two_four_two() {
        // backbone 2 -> 4 (ReLU), head 4 -> 2
        let arch = Architecture::new(2, vec![4], 2, 2).unwrap();
        let mut p = ModelParameters::<f64>::zeros(&arch);
        p.weights.backbone[0].weight = array![[1.0, -1.0, 2.0, 0.5], [3.0, 1.0, -2.0, 4.0]];
        p.weights.backbone[0].bias = array![0.0, 0.5, -1.0, 0.25];
        p.weights.cls_head.weight = array![[1.0, 0.0], [2.0, -1.0], [-1.0, 1.0], [0.5, 3.0]];
        p.weights.cls_head.bias = array![0.1, -0.2];
        p.weights.proj_head.weight = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]];
        let out = forward(&p, array![[1.0, 0.0]].view()).unwrap();
        // pre = (1, -0.5, 1, 0.75); relu -> h = (1, 0, 1, 0.75)
        // logit0 = 1*1 + 0*2 + 1*(-1) + 0.75*0.5 + 0.1 = 0.475
        // logit1 = 1*0 + 0*(-1) + 1*1 + 0.75*3 - 0.2 = 3.05
        assert!((out.logits[[0, 0]] - 0.475).abs() < 1e-15);
        assert!((out.logits[[0, 1]] - 3.05).abs() < 1e-15);
        // u = (1, 0) -> z = (1, 0)
        assert!((out.embeddings[[0, 0]] - 1.0).abs() < 1e-11);
        assert_eq!(out.embeddings[[0, 1]], 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let p: ModelParameters<f64> = init_params(&small_arch(), 0).unwrap();
        assert!(matches!(
            forward(&p, array![[1.0, f64::NAN]].view()),
            Err(PsaError::NonFinite(_))
        ));
        assert!(matches!(
            forward(&p, array![[1.0, 2.0, 3.0]].view()),
            Err(PsaError::Shape(_))
        ));
    }

    #[test]
    fn batch_permutation_equivariance() {
        let arch = Architecture::new(3, vec![6, 5], 3, 4).unwrap();
        let p: ModelParameters<f64> = init_params(&arch, 11).unwrap();
        let x = array![
            [0.1, 2.0, -1.0],
            [3.0, -0.5, 0.2],
            [-1.5, 0.7, 0.9],
            [0.0, 0.0, 1.0]
        ];
        let perm = [2usize, 0, 3, 1];
        let xp = x.select(Axis(0), &perm);
        let a = forward(&p, x.view()).unwrap();
        let b = forward(&p, xp.view()).unwrap();
        assert_eq!(a.logits.select(Axis(0), &perm), b.logits);
        assert_eq!(a.embeddings.select(Axis(0), &perm), b.embeddings);
    }

    #[test]
    fn grad_check_linear_objective_is_exact() {
        let p: ModelParameters<f64> = init_params(&small_arch(), 1).unwrap();
        let obj = |m: &ModelParameters<f64>| {
            let value: f64 = m.weights.values().sum();
            let mut g = ParamSet::zeros(&m.arch);
            g.values_mut().for_each(|v| *v = 1.0);
            Ok((value, g))
        };
        let err = grad_check(obj, &p, 1e-3).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn grad_check_rejects_bad_eps_and_nan() {
        let p: ModelParameters<f64> = init_params(&small_arch(), 1).unwrap();
        let ok = |m: &ModelParameters<f64>| Ok((0.0, ParamSet::zeros(&m.arch)));
        assert!(grad_check(ok, &p, 0.5).is_err());
        let nan = |m: &ModelParameters<f64>| Ok((f64::NAN, ParamSet::zeros(&m.arch)));
        assert!(matches!(
            grad_check(nan, &p, 1e-5),
            Err(PsaError::NonFinite(_))
        ));
    }

    #[test]
    fn f32_forward_runs() {
        let p: ModelParameters<f32> = init_params(&small_arch(), 3).unwrap();
        let out = forward(&p, array![[1.0f32, 2.0]].view()).unwrap();
        let n: f32 = out.embeddings.row(0).dot(&out.embeddings.row(0)).sqrt();
        assert!((n - 1.0).abs() < 1e-5);
    }
}
