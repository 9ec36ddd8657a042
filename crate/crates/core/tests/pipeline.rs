use psa_core::benchdata::{generate_benchmark, HiddenFlag};
use psa_core::trainer::{run_psa, run_retraining, run_selection_stage, FinalStage, Stage};
use psa_core::{
    Benchmark64, BenchmarkSpec, PsaError, Schedule, Strategy, TrainConfig64, UnlabeledPool,
};

fn small_spec(seed: u64) -> BenchmarkSpec {
    BenchmarkSpec {
        dim: 8,
        num_id_classes: 3,
        num_ood_clusters: 2,
        labeled_per_class: 40,
        pool_id_count: 60,
        pool_ood_count: 140,
        test_id_count: 60,
        test_ood_count: 60,
        seed,
        ..Default::default()
    }
}

fn small_cfg(seed: u64) -> TrainConfig64 {
    TrainConfig64 {
        max_epochs: 8,
        warmup_epochs: 3,
        hidden_dims: vec![16],
        embed_dim: 16,
        labeled_batch: 32,
        pool_batch: 64,
        seed,
        ..Default::default()
    }
}

fn bench(seed: u64) -> Benchmark64 {
    generate_benchmark(&small_spec(seed)).unwrap()
}

#[test]
fn identical_inputs_give_identical_runs() {
    let b = bench(1);
    let cfg = small_cfg(4);
    let run = || {
        run_psa(
            &cfg,
            &b.labeled,
            &b.pool,
            &b.test_id,
            &b.test_ood,
            b.num_classes,
        )
        .unwrap()
    };
    let (a, c) = (run(), run());
    assert_eq!(a.logs, c.logs);
    assert_eq!(a.params, c.params);
    assert_eq!(a.final_report(), c.final_report());
    let rows = |o: &psa_core::PsaOutcome64| o.logs.iter().map(|l| l.csv_row()).collect::<Vec<_>>();
    assert_eq!(rows(&a), rows(&c));
}

#[test]
fn different_seeds_differ() {
    let b = bench(1);
    let a = run_selection_stage(&small_cfg(0), &b.labeled, &b.pool, b.num_classes).unwrap();
    let c = run_selection_stage(&small_cfg(1), &b.labeled, &b.pool, b.num_classes).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn log_structure_and_count_sums() {
    let b = bench(2);
    let cfg = small_cfg(0);
    let out = run_psa(
        &cfg,
        &b.labeled,
        &b.pool,
        &b.test_id,
        &b.test_ood,
        b.num_classes,
    )
    .unwrap();
    let sel: Vec<_> = out
        .logs
        .iter()
        .filter(|l| l.stage == Stage::Select)
        .collect();
    let warm = out.logs.iter().filter(|l| l.stage == Stage::Warmup).count();
    assert_eq!(warm, cfg.warmup_epochs);
    assert_eq!(sel.len(), cfg.max_epochs - cfg.warmup_epochs);
    for l in &sel {
        assert_eq!(l.id_count + l.ood_count + l.unconfident_count, b.pool.len());
        assert!(l.labeled_size >= b.labeled.len());
        assert_eq!(l.labeled_size, b.labeled.len() + l.id_count);
        assert!(l.delta_ood.unwrap() <= l.delta_id.unwrap());
        assert!(l.id_purity.is_some() && l.ood_purity.is_some());
    }
    assert!(out.logs.iter().all(|l| l.total.is_finite()));
    assert!(matches!(
        out.final_metrics,
        Some((FinalStage::Retrained, _))
    ));
    assert_eq!(out.logs.len(), 2 * cfg.max_epochs);
}

#[test]
fn final_selection_is_a_subset_of_the_pool() {
    let b = bench(3);
    let cfg = small_cfg(0);
    let sel = run_selection_stage(&cfg, &b.labeled, &b.pool, b.num_classes).unwrap();
    let part = &sel.partition_last;
    assert!(part.is_partition_of(b.pool.len()));
    assert_eq!(
        sel.labeled_last.len(),
        b.labeled.len() + part.selected_id.len()
    );
    assert_eq!(sel.pool_last.len(), part.selected_ood.len());
    // D_U^(last) rows are exactly the selected pool rows
    for (row, &i) in part.selected_ood.iter().enumerate() {
        assert_eq!(sel.pool_last.features.row(row), b.pool.features.row(i));
    }
    // the original labeled set is a prefix of D_L^(last)
    let n = b.labeled.len();
    assert_eq!(&sel.labeled_last.labels[..n], &b.labeled.labels[..]);
}

#[test]
fn single_selection_epoch() {
    let b = bench(0);
    let cfg = TrainConfig64 {
        max_epochs: 4,
        warmup_epochs: 3,
        ..small_cfg(0)
    };
    let sel = run_selection_stage(&cfg, &b.labeled, &b.pool, b.num_classes).unwrap();
    let n_sel = sel.logs.iter().filter(|l| l.stage == Stage::Select).count();
    assert_eq!(n_sel, 1);
}

#[test]
fn warmup_ignores_the_pool() {
    // thresholds at the first selection epoch depend only on the warm-up
    // parameters, so they must agree bit for bit whatever the pool holds
    let b = bench(0);
    let other = bench(9);
    let cfg = TrainConfig64 {
        max_epochs: 4,
        ..small_cfg(0)
    };
    let with_pool = run_selection_stage(&cfg, &b.labeled, &b.pool, b.num_classes).unwrap();
    let alt_pool = run_selection_stage(&cfg, &b.labeled, &other.pool, b.num_classes).unwrap();
    let empty = UnlabeledPool::empty(b.dim());
    let no_pool = run_selection_stage(&cfg, &b.labeled, &empty, b.num_classes).unwrap();
    let warm = cfg.warmup_epochs;
    assert_eq!(with_pool.logs[..warm], no_pool.logs[..warm]);
    assert_eq!(with_pool.logs[..warm], alt_pool.logs[..warm]);
    let t = |o: &psa_core::trainer::SelectionOutcome<f64>| {
        (o.logs[warm].delta_id, o.logs[warm].delta_ood)
    };
    assert_eq!(t(&with_pool), t(&alt_pool));
    assert!(t(&with_pool).0.is_some());
}

#[test]
fn warmup_parameters_match_a_labeled_only_run() {
    // a selection stage that ends at T_warm + 1 with an empty pool trains on
    // labeled data only throughout, matching the pooled run up to T_warm
    let b = bench(5);
    let cfg = TrainConfig64 {
        max_epochs: 4,
        ..small_cfg(2)
    };
    let pooled = run_selection_stage(&cfg, &b.labeled, &b.pool, b.num_classes).unwrap();
    let empty = UnlabeledPool::empty(b.dim());
    let bare = run_selection_stage(&cfg, &b.labeled, &empty, b.num_classes).unwrap();
    assert_eq!(pooled.logs[..3], bare.logs[..3]);
}

#[test]
fn hidden_truth_never_reaches_training() {
    let b = bench(6);
    let cfg = small_cfg(0);
    let mut shuffled = b.pool.clone();
    let flags = shuffled.truth.as_mut().unwrap();
    flags.reverse();
    let mut blind = b.pool.clone();
    blind.truth = None;
    let a = run_selection_stage(&cfg, &b.labeled, &b.pool, b.num_classes).unwrap();
    let c = run_selection_stage(&cfg, &b.labeled, &shuffled, b.num_classes).unwrap();
    let d = run_selection_stage(&cfg, &b.labeled, &blind, b.num_classes).unwrap();
    assert_eq!(a.params, c.params);
    assert_eq!(a.params, d.params);
    assert_eq!(a.partition_last, d.partition_last);
    assert!(d.logs.iter().all(|l| l.id_purity.is_none()));
}

#[test]
fn empty_pool_runs_supervised() {
    let b = bench(0);
    let cfg = small_cfg(0);
    let empty = UnlabeledPool::empty(b.dim());
    let out = run_psa(
        &cfg,
        &b.labeled,
        &empty,
        &b.test_id,
        &b.test_ood,
        b.num_classes,
    )
    .unwrap();
    for l in out.logs.iter().filter(|l| l.stage == Stage::Select) {
        assert_eq!(l.id_count + l.ood_count + l.unconfident_count, 0);
        assert_eq!(l.oe, 0.0);
        assert_eq!(l.labeled_size, b.labeled.len());
    }
    assert!(out.final_report().acc > 0.9);
}

#[test]
fn retraining_on_empty_selection_is_supervised() {
    let b = bench(0);
    let cfg = small_cfg(3);
    let empty = UnlabeledPool::empty(b.dim());
    let (p1, logs) = run_retraining(&cfg, &b.labeled, &empty, b.num_classes).unwrap();
    let (p2, _) = run_retraining(&cfg, &b.labeled, &empty, b.num_classes).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(logs.len(), cfg.max_epochs);
    assert!(logs.iter().all(|l| l.oe == 0.0 && l.ood_count == 0));
}

#[test]
fn every_strategy_runs() {
    let b = bench(7);
    for strategy in [
        Strategy::Energy,
        Strategy::SoftmaxFixed,
        Strategy::Sort,
        Strategy::Idf,
    ] {
        let cfg = TrainConfig64 {
            strategy,
            retrain: false,
            ..small_cfg(0)
        };
        let out = run_psa(
            &cfg,
            &b.labeled,
            &b.pool,
            &b.test_id,
            &b.test_ood,
            b.num_classes,
        )
        .unwrap();
        assert!(out.final_metrics.is_none());
        for l in out.logs.iter().filter(|l| l.stage == Stage::Select) {
            assert_eq!(l.id_count + l.ood_count + l.unconfident_count, b.pool.len());
        }
    }
}

#[test]
fn joint_variant_runs_two_periods() {
    let b = bench(8);
    let cfg = TrainConfig64 {
        schedule: Schedule::WarmRestarts,
        ..small_cfg(0)
    };
    let out = run_psa(
        &cfg,
        &b.labeled,
        &b.pool,
        &b.test_id,
        &b.test_ood,
        b.num_classes,
    )
    .unwrap();
    assert!(matches!(out.final_metrics, Some((FinalStage::Joint, _))));
    let joint: Vec<_> = out
        .logs
        .iter()
        .filter(|l| l.stage == Stage::Joint)
        .collect();
    assert_eq!(joint.len(), cfg.max_epochs);
    assert_eq!(joint[0].epoch, cfg.max_epochs);
    assert!(joint
        .iter()
        .all(|l| l.ood_count == out.selection.pool_last.len()));
}

#[test]
fn zero_lambda_skips_the_auxiliary_loss() {
    let b = bench(0);
    let mut cfg = small_cfg(0);
    cfg.weights.lambda = 0.0;
    let out = run_psa(
        &cfg,
        &b.labeled,
        &b.pool,
        &b.test_id,
        &b.test_ood,
        b.num_classes,
    )
    .unwrap();
    assert!(out.logs.iter().all(|l| l.aux == 0.0));
}

#[test]
fn frozen_thresholds_stay_fixed() {
    let b = bench(0);
    let cfg = TrainConfig64 {
        freeze_thresholds_at_warmup: true,
        ..small_cfg(0)
    };
    let sel = run_selection_stage(&cfg, &b.labeled, &b.pool, b.num_classes).unwrap();
    let d: Vec<_> = sel
        .logs
        .iter()
        .filter(|l| l.stage == Stage::Select)
        .map(|l| (l.delta_id, l.delta_ood))
        .collect();
    assert!(d.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn divergence_aborts_with_logs() {
    let b = bench(0);
    // no hidden layer, so no ReLU can die and stall the blow-up; bounded CE
    // gradients need a few dozen epochs to overflow
    let cfg = TrainConfig64 {
        lr_init: 1e6,
        hidden_dims: vec![],
        max_epochs: 60,
        ..small_cfg(0)
    };
    match run_psa(
        &cfg,
        &b.labeled,
        &b.pool,
        &b.test_id,
        &b.test_ood,
        b.num_classes,
    ) {
        Err(PsaError::NonFiniteLoss { epoch, logs, .. }) => {
            assert!(!logs.is_empty());
            assert_eq!(logs.last().unwrap().epoch + 1, epoch);
            assert!(logs.iter().all(|l| l.total.is_finite()));
        }
        other => panic!(
            "expected a non-finite loss abort, got {:?}",
            other.map(|o| o.stage1)
        ),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let b = bench(0);
    let bad = [
        TrainConfig64 {
            warmup_epochs: 0,
            ..small_cfg(0)
        },
        TrainConfig64 {
            warmup_epochs: 8,
            ..small_cfg(0)
        },
        TrainConfig64 {
            q_id: 0.2,
            q_ood: 0.3,
            ..small_cfg(0)
        },
        TrainConfig64 {
            lr_init: -1.0,
            ..small_cfg(0)
        },
        TrainConfig64 {
            labeled_batch: 0,
            ..small_cfg(0)
        },
    ];
    for cfg in bad {
        assert!(run_selection_stage(&cfg, &b.labeled, &b.pool, b.num_classes).is_err());
    }
}

#[test]
fn benchmark_classes_separable_by_nearest_mean() {
    // class means estimated from the labeled split classify the test split
    let b = bench(0);
    let spec = BenchmarkSpec::default();
    let big: Benchmark64 = generate_benchmark(&spec).unwrap();
    for bench in [&b, &big] {
        let c = bench.num_classes;
        let d = bench.dim();
        let mut means = vec![vec![0.0; d]; c];
        let mut counts = vec![0usize; c];
        for (row, &y) in bench
            .labeled
            .features
            .rows()
            .into_iter()
            .zip(&bench.labeled.labels)
        {
            counts[y] += 1;
            for (m, &v) in means[y].iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        for (m, &n) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= n as f64);
        }
        let hits = bench
            .test_id
            .features
            .rows()
            .into_iter()
            .zip(&bench.test_id.labels)
            .filter(|(row, &y)| {
                let dist = |m: &Vec<f64>| {
                    m.iter()
                        .zip(row.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                };
                (0..c).min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b]))) == Some(y)
            })
            .count();
        assert!(hits as f64 / bench.test_id.len() as f64 >= 0.99);
    }
}

#[test]
fn pool_composition_matches_spec() {
    let spec = BenchmarkSpec::default();
    let b: Benchmark64 = generate_benchmark(&spec).unwrap();
    let truth = b.pool.truth.as_ref().unwrap();
    let ids = truth.iter().filter(|f| f.is_id()).count();
    assert_eq!(ids, spec.pool_id_count);
    assert_eq!(truth.len() - ids, spec.pool_ood_count);
    // round-robin draws give every ID class the same share
    for k in 0..spec.num_id_classes {
        let n = truth.iter().filter(|&&f| f == HiddenFlag::Id(k)).count();
        assert_eq!(n, spec.pool_id_count / spec.num_id_classes);
    }
    // the shuffle spreads ID samples through the pool
    let first_half = truth[..truth.len() / 2]
        .iter()
        .filter(|f| f.is_id())
        .count();
    let expected = ids as f64 / 2.0;
    assert!((first_half as f64 - expected).abs() < 0.2 * expected);
    // per-coordinate spread around each empirical mean is close to cluster_std
    let x = &b.labeled.features;
    let y = &b.labeled.labels;
    let rows: Vec<usize> = (0..x.nrows()).filter(|&i| y[i] == 0).collect();
    let n = rows.len() as f64;
    let mean: f64 = rows.iter().map(|&i| x[[i, 0]]).sum::<f64>() / n;
    let var: f64 = rows
        .iter()
        .map(|&i| (x[[i, 0]] - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    assert!((var.sqrt() - spec.cluster_std).abs() < 0.2);
}
