//! The two-stage training procedure: warm-up on labeled data, per-epoch
//! pool assignment with outlier exposure and contrastive training, then
//! retraining from scratch on the last epoch's selection (or, in the joint
//! variant, a second learning-rate period on that selection).

pub mod optim;

use std::fmt::Write as _;

use ndarray::{concatenate, s, Array2, Axis};

use crate::assignment::{
    self, compute_thresholds, idf_assign, softmax_threshold_assign, sort_assign, ternary_assign,
    AssignmentPartition, IdfConfig, Thresholds,
};
use crate::benchdata::{epoch_batches, LabeledSet, UnlabeledPool};
use crate::error::{PsaError, Result};
use crate::losses::{self, Concept, LossWeights};
use crate::metrics::{self, selection_stats, EvalInputs, MetricsReport};
use crate::netcore::{self, init_params, Architecture, ModelParameters};
use crate::scoring::{argmax, detection_scores, ScoreMethod};
use crate::Scalar;

pub use optim::{lr_at, sgd_step, Schedule};

/// How the pool is split each selection epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Dual thresholds from quantiles of labeled negative-energy scores.
    Energy,
    /// Fixed thresholds on the maximum softmax probability.
    SoftmaxFixed,
    /// Fixed fractions of the pool ranked by maximum softmax probability.
    Sort,
    /// Binary cluster-purity filtering (baseline).
    Idf,
}

/// Auxiliary representation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxLoss {
    /// Concept contrastive: selected OOD samples form one shared concept.
    Ccl,
    /// Supervised contrastive over ID classes only; OOD samples are negatives.
    Scl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<F> {
    pub max_epochs: usize,
    pub warmup_epochs: usize,
    pub lr_init: F,
    pub momentum: F,
    pub weight_decay: F,
    pub labeled_batch: usize,
    pub pool_batch: usize,
    pub weights: LossWeights<F>,
    pub aux_loss: AuxLoss,
    pub q_id: F,
    pub q_ood: F,
    pub schedule: Schedule,
    pub strategy: Strategy,
    pub softmax_delta_id: F,
    pub softmax_delta_ood: F,
    pub idf: IdfConfig,
    pub freeze_thresholds_at_warmup: bool,
    /// Second stage from fresh parameters on the final selection.
    pub retrain: bool,
    /// Whether retraining starts with labeled-only warm-up epochs.
    pub retrain_warmup: bool,
    /// Score used to select pool samples under [`Strategy::Energy`].
    pub selection_score: ScoreMethod<F>,
    /// Score used for test-time detection metrics.
    pub eval_score: ScoreMethod<F>,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub seed: u64,
}

impl<F: Scalar> Default for TrainConfig<F> {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            warmup_epochs: 30,
            lr_init: F::lit(0.1),
            momentum: F::lit(0.9),
            weight_decay: F::lit(5e-4),
            labeled_batch: 64,
            pool_batch: 128,
            weights: LossWeights::default(),
            aux_loss: AuxLoss::Ccl,
            q_id: F::lit(0.9),
            q_ood: F::lit(0.3),
            schedule: Schedule::CosineWithWarmup,
            strategy: Strategy::Energy,
            softmax_delta_id: F::lit(0.95),
            softmax_delta_ood: F::lit(0.6),
            idf: IdfConfig::default(),
            freeze_thresholds_at_warmup: false,
            retrain: true,
            retrain_warmup: true,
            selection_score: ScoreMethod::energy(F::one()),
            eval_score: ScoreMethod::msp(),
            hidden_dims: vec![64],
            embed_dim: 128,
            seed: 0,
        }
    }
}

impl<F: Scalar> TrainConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_epochs > 0 && self.warmup_epochs < self.max_epochs) {
            return Err(PsaError::invalid("need 0 < warmup_epochs < max_epochs"));
        }
        if self.labeled_batch == 0 || self.pool_batch == 0 {
            return Err(PsaError::invalid("batch sizes must be >= 1"));
        }
        if self.lr_init.is_nan()
            || self.lr_init <= F::zero()
            || self.momentum < F::zero()
            || self.weight_decay < F::zero()
        {
            return Err(PsaError::invalid(
                "lr_init must be > 0, momentum and weight_decay >= 0",
            ));
        }
        self.weights.validate()?;
        let open = |q: F| q > F::zero() && q < F::one();
        if !open(self.q_id) || !open(self.q_ood) {
            return Err(PsaError::invalid("q_id and q_ood must lie in (0, 1)"));
        }
        if self.q_id < self.q_ood {
            return Err(PsaError::invalid("q_id must be >= q_ood"));
        }
        if self.softmax_delta_id < self.softmax_delta_ood {
            return Err(PsaError::invalid(
                "softmax_delta_id must be >= softmax_delta_ood",
            ));
        }
        self.selection_score.validate()?;
        self.eval_score.validate()?;
        self.idf.validate()?;
        if self.embed_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(PsaError::invalid("layer widths must be >= 1"));
        }
        Ok(())
    }

    /// The same configuration at another precision.
    pub fn cast<G: Scalar>(&self) -> TrainConfig<G> {
        let c = |v: F| G::lit(v.as_f64());
        TrainConfig {
            max_epochs: self.max_epochs,
            warmup_epochs: self.warmup_epochs,
            lr_init: c(self.lr_init),
            momentum: c(self.momentum),
            weight_decay: c(self.weight_decay),
            labeled_batch: self.labeled_batch,
            pool_batch: self.pool_batch,
            weights: LossWeights {
                gamma: c(self.weights.gamma),
                lambda: c(self.weights.lambda),
                tau_s: c(self.weights.tau_s),
            },
            aux_loss: self.aux_loss,
            q_id: c(self.q_id),
            q_ood: c(self.q_ood),
            schedule: self.schedule,
            strategy: self.strategy,
            softmax_delta_id: c(self.softmax_delta_id),
            softmax_delta_ood: c(self.softmax_delta_ood),
            idf: self.idf.clone(),
            freeze_thresholds_at_warmup: self.freeze_thresholds_at_warmup,
            retrain: self.retrain,
            retrain_warmup: self.retrain_warmup,
            selection_score: ScoreMethod {
                kind: self.selection_score.kind,
                temperature: c(self.selection_score.temperature),
            },
            eval_score: ScoreMethod {
                kind: self.eval_score.kind,
                temperature: c(self.eval_score.temperature),
            },
            hidden_dims: self.hidden_dims.clone(),
            embed_dim: self.embed_dim,
            seed: self.seed,
        }
    }

    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> Result<Architecture> {
        Architecture::new(
            input_dim,
            self.hidden_dims.clone(),
            num_classes,
            self.embed_dim,
        )
    }

    fn lr(&self, epoch: usize) -> F {
        lr_at(
            self.schedule,
            epoch,
            self.lr_init,
            self.warmup_epochs,
            self.max_epochs,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Warmup,
    Select,
    RetrainWarmup,
    Retrain,
    Joint,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Warmup => "warmup",
            Stage::Select => "select",
            Stage::RetrainWarmup => "retrain_warmup",
            Stage::Retrain => "retrain",
            Stage::Joint => "joint",
        }
    }
}

/// Per-epoch diagnostics. Purities are `None` when the pool carries no
/// hidden truth; thresholds are `None` for strategies without them.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    pub lr: f64,
    pub delta_id: Option<f64>,
    pub delta_ood: Option<f64>,
    pub id_count: usize,
    pub ood_count: usize,
    pub unconfident_count: usize,
    pub id_purity: Option<f64>,
    pub ood_purity: Option<f64>,
    pub labeled_size: usize,
    pub ce: f64,
    pub oe: f64,
    pub aux: f64,
    pub total: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,stage,lr,delta_id,delta_ood,id_count,ood_count,unconfident_count,id_purity,ood_purity,labeled_size,ce,oe,aux,total";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut row = String::new();
        let _ = write!(
            row,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.stage.as_str(),
            self.lr,
            opt(self.delta_id),
            opt(self.delta_ood),
            self.id_count,
            self.ood_count,
            self.unconfident_count,
            opt(self.id_purity),
            opt(self.ood_purity),
            self.labeled_size,
            self.ce,
            self.oe,
            self.aux,
            self.total
        );
        row
    }

    fn training(epoch: usize, stage: Stage, lr: f64, labeled_size: usize, l: &EpochLosses) -> Self {
        EpochLog {
            epoch,
            stage,
            lr,
            delta_id: None,
            delta_ood: None,
            id_count: 0,
            ood_count: 0,
            unconfident_count: 0,
            id_purity: None,
            ood_purity: None,
            labeled_size,
            ce: l.ce,
            oe: l.oe,
            aux: l.aux,
            total: l.total,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct EpochLosses {
    ce: f64,
    oe: f64,
    aux: f64,
    total: f64,
}

/// Inference over a whole matrix (used for scoring passes). Overflowing
/// outputs are reported rather than turned into NaN scores.
fn infer<F: Scalar>(
    params: &ModelParameters<F>,
    x: &Array2<F>,
) -> Result<netcore::ForwardOutputs<F>> {
    let out = netcore::forward(params, x.view())?;
    if out.logits.iter().any(|v| !v.is_finite()) {
        return Err(PsaError::NonFinite("model logits".into()));
    }
    Ok(out)
}

/// One optimizer step on `labeled ∪ ood`: CE on the labeled rows, OE on the
/// OOD rows, the auxiliary contrastive loss over the combined batch.
fn train_step<F: Scalar>(
    params: &mut ModelParameters<F>,
    cfg: &TrainConfig<F>,
    x: &Array2<F>,
    labels: &[usize],
    lr: F,
) -> std::result::Result<EpochLosses, String> {
    let n_lab = labels.len();
    let out = netcore::forward(params, x.view()).map_err(|e| e.to_string())?;
    let w = &cfg.weights;
    let (ce, dce) = losses::cross_entropy(out.logits.slice(s![..n_lab, ..]), labels)
        .map_err(|e| e.to_string())?;
    let (oe, doe) =
        losses::outlier_exposure(out.logits.slice(s![n_lab.., ..])).map_err(|e| e.to_string())?;
    let (aux, daux) = if w.lambda > F::zero() {
        let r = match cfg.aux_loss {
            AuxLoss::Ccl => {
                let concepts: Vec<Concept> = labels
                    .iter()
                    .map(|&y| Concept::IdClass(y))
                    .chain(std::iter::repeat_n(Concept::Ood, x.nrows() - n_lab))
                    .collect();
                losses::concept_contrastive(out.embeddings.view(), &concepts, w.tau_s)
            }
            AuxLoss::Scl => {
                let keys: Vec<Option<usize>> = labels
                    .iter()
                    .map(|&y| Some(y))
                    .chain(std::iter::repeat_n(None, x.nrows() - n_lab))
                    .collect();
                losses::supervised_contrastive(out.embeddings.view(), &keys, w.tau_s)
            }
        };
        let (v, g) = r.map_err(|e| e.to_string())?;
        (v, Some(g))
    } else {
        (F::zero(), None)
    };
    let total = losses::total_objective(ce, oe, aux, w);
    if !total.is_finite() {
        return Err(format!("loss = {total} (ce {ce}, oe {oe}, aux {aux})"));
    }

    let dlogits = concatenate(Axis(0), &[dce.view(), doe.mapv(|v| v * w.gamma).view()])
        .map_err(|e| e.to_string())?;
    let dembed = daux.map(|g| g.mapv(|v| v * w.lambda));
    let grads = netcore::backward(
        params,
        &out,
        dlogits.view(),
        dembed.as_ref().map(|g| g.view()),
    )
    .map_err(|e| e.to_string())?;
    sgd_step(params, &grads, lr, cfg.momentum, cfg.weight_decay).map_err(|e| e.to_string())?;
    if !params.weights.all_finite() {
        return Err("parameters diverged to non-finite values".into());
    }
    Ok(EpochLosses {
        ce: ce.as_f64(),
        oe: oe.as_f64(),
        aux: aux.as_f64(),
        total: total.as_f64(),
    })
}

/// Trains one epoch: shuffled labeled batches, each paired with the next
/// window of a shuffled cycle over the OOD set (when present).
fn train_epoch<F: Scalar>(
    params: &mut ModelParameters<F>,
    cfg: &TrainConfig<F>,
    labeled: &LabeledSet<F>,
    ood: Option<&UnlabeledPool<F>>,
    lr: F,
    shuffle_seed: u64,
    epoch: usize,
) -> Result<EpochLosses> {
    let batches = epoch_batches(
        labeled.len(),
        cfg.labeled_batch,
        shuffle_seed,
        2 * epoch as u64,
    );
    let ood = ood.filter(|p| !p.is_empty());
    let ood_order: Vec<usize> = ood
        .map(|p| epoch_batches(p.len(), p.len(), shuffle_seed, 2 * epoch as u64 + 1).concat())
        .unwrap_or_default();
    let ood_take = ood.map_or(0, |p| cfg.pool_batch.min(p.len()));
    let mut cursor = 0;
    let mut acc = EpochLosses::default();
    for (step, idx) in batches.iter().enumerate() {
        let lab = labeled.features.select(Axis(0), idx);
        let labels: Vec<usize> = idx.iter().map(|&i| labeled.labels[i]).collect();
        let x = match ood {
            Some(pool) => {
                let oidx: Vec<usize> = (0..ood_take)
                    .map(|j| ood_order[(cursor + j) % ood_order.len()])
                    .collect();
                cursor = (cursor + ood_take) % ood_order.len();
                concatenate(
                    Axis(0),
                    &[lab.view(), pool.features.select(Axis(0), &oidx).view()],
                )
                .map_err(|e| PsaError::Shape(e.to_string()))?
            }
            None => lab,
        };
        let l =
            train_step(params, cfg, &x, &labels, lr).map_err(|what| PsaError::NonFiniteLoss {
                epoch,
                step: Some(step),
                what,
                logs: Vec::new(),
            })?;
        acc.ce += l.ce;
        acc.oe += l.oe;
        acc.aux += l.aux;
        acc.total += l.total;
    }
    let n = batches.len().max(1) as f64;
    Ok(EpochLosses {
        ce: acc.ce / n,
        oe: acc.oe / n,
        aux: acc.aux / n,
        total: acc.total / n,
    })
}

/// Turns a non-finite scoring result at `epoch` into the divergence
/// diagnostic, keeping the logs so far.
fn scoring_diverged<T>(r: Result<T>, epoch: usize, logs: &[EpochLog]) -> Result<T> {
    r.map_err(|e| match e {
        PsaError::NonFinite(what) => PsaError::NonFiniteLoss {
            epoch,
            step: None,
            what: format!("non-finite {what}"),
            logs: logs.to_vec(),
        },
        other => other,
    })
}

fn with_logs<T>(r: Result<T>, logs: &[EpochLog]) -> Result<T> {
    r.map_err(|e| match e {
        PsaError::NonFiniteLoss {
            epoch, step, what, ..
        } => PsaError::NonFiniteLoss {
            epoch,
            step,
            what,
            logs: logs.to_vec(),
        },
        other => other,
    })
}

/// One selection pass over the pool with the current model.
pub fn assign_pool<F: Scalar>(
    params: &ModelParameters<F>,
    cfg: &TrainConfig<F>,
    labeled: &LabeledSet<F>,
    pool: &UnlabeledPool<F>,
    frozen: Option<Thresholds<F>>,
    epoch: usize,
) -> Result<(AssignmentPartition, Option<Thresholds<F>>)> {
    if pool.is_empty() {
        return Ok((AssignmentPartition::default(), frozen));
    }
    let pool_out = infer(params, &pool.features)?;
    let msp = ScoreMethod::msp();
    match cfg.strategy {
        Strategy::Energy => {
            let thr = match frozen {
                Some(t) => t,
                None => {
                    let lab_out = infer(params, &labeled.features)?;
                    let lab_scores = detection_scores(lab_out.logits.view(), &cfg.selection_score);
                    compute_thresholds(&lab_scores, cfg.q_id, cfg.q_ood)?
                }
            };
            let scores = detection_scores(pool_out.logits.view(), &cfg.selection_score);
            let part = ternary_assign(&scores, pool_out.logits.view(), &thr)?;
            Ok((part, Some(thr)))
        }
        Strategy::SoftmaxFixed => {
            let scores = detection_scores(pool_out.logits.view(), &msp);
            let part = softmax_threshold_assign(
                &scores,
                cfg.softmax_delta_id,
                cfg.softmax_delta_ood,
                pool_out.logits.view(),
            )?;
            let thr = Thresholds {
                delta_id: cfg.softmax_delta_id,
                delta_ood: cfg.softmax_delta_ood,
                q_id: F::nan(),
                q_ood: F::nan(),
            };
            Ok((part, Some(thr)))
        }
        Strategy::Sort => {
            let scores = detection_scores(pool_out.logits.view(), &msp);
            let part = sort_assign(&scores, cfg.q_id, cfg.q_ood, pool_out.logits.view())?;
            Ok((part, None))
        }
        Strategy::Idf => {
            let lab_out = infer(params, &labeled.features)?;
            let idf = IdfConfig {
                seed: cfg.seed.wrapping_add(epoch as u64),
                ..cfg.idf.clone()
            };
            let part = idf_assign(
                lab_out.features(),
                &labeled.labels,
                pool_out.features(),
                params.arch.num_classes,
                &idf,
            )?;
            Ok((part, None))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome<F> {
    pub params: ModelParameters<F>,
    /// `D_L^(last)`: labeled set plus the final epoch's pseudo-labeled pool samples.
    pub labeled_last: LabeledSet<F>,
    /// `D_U^(last)`: the final epoch's selected OOD samples.
    pub pool_last: UnlabeledPool<F>,
    pub partition_last: AssignmentPartition,
    pub logs: Vec<EpochLog>,
}

/// Warm-up on labeled data, then per-epoch assignment and training.
pub fn run_selection_stage<F: Scalar>(
    cfg: &TrainConfig<F>,
    labeled: &LabeledSet<F>,
    pool: &UnlabeledPool<F>,
    num_classes: usize,
) -> Result<SelectionOutcome<F>> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(PsaError::Empty("labeled set".into()));
    }
    if !pool.is_empty() && pool.dim() != labeled.dim() {
        return Err(PsaError::Shape(
            "pool and labeled features differ in width".into(),
        ));
    }
    let arch = cfg.architecture(labeled.dim(), num_classes)?;
    let mut params = init_params::<F>(&arch, cfg.seed)?;
    let mut logs = Vec::with_capacity(cfg.max_epochs);
    let mut frozen: Option<Thresholds<F>> = None;
    let mut labeled_t = labeled.clone();
    let mut pool_t = UnlabeledPool::empty(labeled.dim());
    let mut partition = AssignmentPartition {
        unconfident: (0..pool.len()).collect(),
        ..Default::default()
    };

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr(epoch);
        if epoch < cfg.warmup_epochs {
            let l = with_logs(
                train_epoch(&mut params, cfg, labeled, None, lr, cfg.seed, epoch),
                &logs,
            )?;
            logs.push(EpochLog::training(
                epoch,
                Stage::Warmup,
                lr.as_f64(),
                labeled.len(),
                &l,
            ));
            continue;
        }

        let (part, thr) = scoring_diverged(
            assign_pool(&params, cfg, labeled, pool, frozen, epoch),
            epoch,
            &logs,
        )?;
        if cfg.freeze_thresholds_at_warmup && cfg.strategy == Strategy::Energy {
            frozen = thr;
        }
        let (lab_t, ood_t) = assignment::update_datasets(labeled, pool, &part)?;
        let l = with_logs(
            train_epoch(&mut params, cfg, &lab_t, Some(&ood_t), lr, cfg.seed, epoch),
            &logs,
        )?;
        let stats = match &pool.truth {
            Some(t) => Some(selection_stats(&part, t)?),
            None => None,
        };
        logs.push(EpochLog {
            delta_id: thr.map(|t| t.delta_id.as_f64()),
            delta_ood: thr.map(|t| t.delta_ood.as_f64()),
            id_count: part.selected_id.len(),
            ood_count: part.selected_ood.len(),
            unconfident_count: part.unconfident.len(),
            id_purity: stats.map(|s| s.id_purity),
            ood_purity: stats.map(|s| s.ood_purity),
            ..EpochLog::training(epoch, Stage::Select, lr.as_f64(), lab_t.len(), &l)
        });
        labeled_t = lab_t;
        pool_t = ood_t;
        partition = part;
    }
    Ok(SelectionOutcome {
        params,
        labeled_last: labeled_t,
        pool_last: pool_t,
        partition_last: partition,
        logs,
    })
}

/// Fresh model (seed + 1) trained for the full schedule on the fixed final
/// selection; no re-selection takes place.
pub fn run_retraining<F: Scalar>(
    cfg: &TrainConfig<F>,
    labeled_last: &LabeledSet<F>,
    pool_last: &UnlabeledPool<F>,
    num_classes: usize,
) -> Result<(ModelParameters<F>, Vec<EpochLog>)> {
    cfg.validate()?;
    let seed = cfg.seed.wrapping_add(1);
    let arch = cfg.architecture(labeled_last.dim(), num_classes)?;
    let mut params = init_params::<F>(&arch, seed)?;
    let mut logs = Vec::with_capacity(cfg.max_epochs);
    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(
            Schedule::CosineWithWarmup,
            epoch,
            cfg.lr_init,
            cfg.warmup_epochs,
            cfg.max_epochs,
        );
        let warm = cfg.retrain_warmup && epoch < cfg.warmup_epochs;
        let ood = (!warm).then_some(pool_last);
        let l = with_logs(
            train_epoch(&mut params, cfg, labeled_last, ood, lr, seed, epoch),
            &logs,
        )?;
        let stage = if warm {
            Stage::RetrainWarmup
        } else {
            Stage::Retrain
        };
        logs.push(EpochLog {
            ood_count: if warm { 0 } else { pool_last.len() },
            ..EpochLog::training(epoch, stage, lr.as_f64(), labeled_last.len(), &l)
        });
    }
    Ok((params, logs))
}

/// Second learning-rate period of the warm-restart variant: continues from
/// the selection-stage parameters on its final selection.
fn run_joint_period<F: Scalar>(
    cfg: &TrainConfig<F>,
    sel: &SelectionOutcome<F>,
) -> Result<(ModelParameters<F>, Vec<EpochLog>)> {
    let mut params = sel.params.clone();
    let mut logs = Vec::with_capacity(cfg.max_epochs);
    for epoch in cfg.max_epochs..2 * cfg.max_epochs {
        let lr = cfg.lr(epoch);
        let l = with_logs(
            train_epoch(
                &mut params,
                cfg,
                &sel.labeled_last,
                Some(&sel.pool_last),
                lr,
                cfg.seed,
                epoch,
            ),
            &logs,
        )?;
        logs.push(EpochLog {
            ood_count: sel.pool_last.len(),
            ..EpochLog::training(epoch, Stage::Joint, lr.as_f64(), sel.labeled_last.len(), &l)
        });
    }
    Ok((params, logs))
}

/// Test-time scores and per-sample correctness.
pub fn eval_inputs<F: Scalar>(
    params: &ModelParameters<F>,
    method: &ScoreMethod<F>,
    test_id: &LabeledSet<F>,
    test_ood: &UnlabeledPool<F>,
) -> Result<EvalInputs<F>> {
    let id_out = infer(params, &test_id.features)?;
    let ood_out = infer(params, &test_ood.features)?;
    let id_correct = id_out
        .logits
        .rows()
        .into_iter()
        .zip(&test_id.labels)
        .map(|(r, &y)| argmax(r) == y)
        .collect();
    Ok(EvalInputs {
        id_scores: detection_scores(id_out.logits.view(), method),
        id_correct,
        ood_scores: detection_scores(ood_out.logits.view(), method),
    })
}

pub fn evaluate_model<F: Scalar>(
    params: &ModelParameters<F>,
    method: &ScoreMethod<F>,
    test_id: &LabeledSet<F>,
    test_ood: &UnlabeledPool<F>,
) -> Result<MetricsReport> {
    metrics::evaluate(&eval_inputs(params, method, test_id, test_ood)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalStage {
    Retrained,
    Joint,
}

impl FinalStage {
    pub fn as_str(self) -> &'static str {
        match self {
            FinalStage::Retrained => "retrained",
            FinalStage::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PsaOutcome<F> {
    /// Metrics of the selection-stage model.
    pub stage1: MetricsReport,
    /// Metrics after retraining or the joint second period, if run.
    pub final_metrics: Option<(FinalStage, MetricsReport)>,
    /// Parameters of the model the last metrics row describes.
    pub params: ModelParameters<F>,
    pub selection: SelectionOutcome<F>,
    pub logs: Vec<EpochLog>,
    /// Scores behind the last metrics row.
    pub eval: EvalInputs<F>,
}

impl<F: Scalar> PsaOutcome<F> {
    pub fn final_report(&self) -> &MetricsReport {
        self.final_metrics.as_ref().map_or(&self.stage1, |(_, m)| m)
    }
}

/// The whole pipeline: selection stage, then retraining (two-stage) or a
/// restarted second period (`Schedule::WarmRestarts`), then evaluation.
pub fn run_psa<F: Scalar>(
    cfg: &TrainConfig<F>,
    labeled: &LabeledSet<F>,
    pool: &UnlabeledPool<F>,
    test_id: &LabeledSet<F>,
    test_ood: &UnlabeledPool<F>,
    num_classes: usize,
) -> Result<PsaOutcome<F>> {
    let selection = run_selection_stage(cfg, labeled, pool, num_classes)?;
    // a failed evaluation is attributed to the epoch after the last logged one
    let next_epoch = |logs: &[EpochLog]| logs.last().map_or(0, |l| l.epoch + 1);
    let stage1_eval = scoring_diverged(
        eval_inputs(&selection.params, &cfg.eval_score, test_id, test_ood),
        next_epoch(&selection.logs),
        &selection.logs,
    )?;
    let stage1 = metrics::evaluate(&stage1_eval)?;
    let mut logs = selection.logs.clone();

    let second = match cfg.schedule {
        Schedule::WarmRestarts => Some((FinalStage::Joint, run_joint_period(cfg, &selection))),
        Schedule::CosineWithWarmup if cfg.retrain => Some((
            FinalStage::Retrained,
            run_retraining(
                cfg,
                &selection.labeled_last,
                &selection.pool_last,
                num_classes,
            ),
        )),
        Schedule::CosineWithWarmup => None,
    };
    let (params, final_metrics, eval) = match second {
        None => (selection.params.clone(), None, stage1_eval),
        Some((stage, result)) => {
            let (params, more) = result.map_err(|e| match e {
                PsaError::NonFiniteLoss {
                    epoch,
                    step,
                    what,
                    logs: tail,
                } => {
                    let mut all = logs.clone();
                    all.extend(tail);
                    PsaError::NonFiniteLoss {
                        epoch,
                        step,
                        what,
                        logs: all,
                    }
                }
                other => other,
            })?;
            logs.extend(more);
            let eval = scoring_diverged(
                eval_inputs(&params, &cfg.eval_score, test_id, test_ood),
                next_epoch(&logs),
                &logs,
            )?;
            let report = metrics::evaluate(&eval)?;
            (params, Some((stage, report)), eval)
        }
    };
    Ok(PsaOutcome {
        stage1,
        final_metrics,
        params,
        selection,
        logs,
        eval,
    })
}
