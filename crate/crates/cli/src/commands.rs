use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use psa_core::benchdata::{generate_benchmark, read_dataset, write_dataset};
use psa_core::metrics::{self, accuracy_from_flags};
use psa_core::netcore::forward;
use psa_core::trainer::run_psa;
use psa_core::{Benchmark, EpochLog, MetricsReport, PsaError, PsaOutcome, Scalar, UnlabeledPool};

use crate::config::{Precision, RunConfig};
use crate::error::CliError;
use crate::tables;

/// Completion marker; `report` only reads run directories that carry it.
pub const DONE: &str = "DONE";

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.bench.seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn counts<F: Scalar>(b: &Benchmark<F>) -> String {
    let ids = b
        .pool
        .truth
        .as_ref()
        .map(|t| t.iter().filter(|f| f.is_id()).count().to_string())
        .unwrap_or_else(|| "?".into());
    format!(
        "labeled {}, pool {} ({} id), test {} ({} id / {} ood)",
        b.labeled.len(),
        b.pool.len(),
        ids,
        b.test_id.len() + b.test_ood.len(),
        b.test_id.len(),
        b.test_ood.len()
    )
}

pub fn generate(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<String, CliError> {
    let cfg = load_config(spec, seed)?;
    cfg.bench
        .validate()
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let bench = generate_benchmark::<f64>(&cfg.bench)?;
    write_dataset(out, &bench).map_err(|e| match e {
        PsaError::Io(source) => CliError::Io {
            path: out.to_path_buf(),
            source,
        },
        other => other.into(),
    })?;
    Ok(format!("wrote {}: {}", out.display(), counts(&bench)))
}

pub fn train(
    config: Option<&Path>,
    data: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<String, CliError> {
    let cfg = load_config(config, seed)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| {
            CliError::Invalid("no output directory: pass --out or set out_dir".into())
        })?;
    cfg.validate()?;
    match cfg.precision {
        Precision::F64 => train_as::<f64>(&cfg, data, &out_dir),
        Precision::F32 => train_as::<f32>(&cfg, data, &out_dir),
    }
}

fn load_data<F: Scalar>(cfg: &RunConfig, data: Option<&Path>) -> Result<Benchmark<F>, CliError> {
    match data {
        Some(p) => read_dataset(p).map_err(|source| CliError::Input {
            path: p.to_path_buf(),
            source,
        }),
        None => Ok(generate_benchmark(&cfg.bench)?),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(CliError::io(path))
}

fn epochs_csv(logs: &[EpochLog]) -> String {
    let mut out = format!("{}\n", EpochLog::CSV_HEADER);
    for l in logs {
        out.push_str(&l.csv_row());
        out.push('\n');
    }
    out
}

fn train_as<F: Scalar>(
    cfg: &RunConfig,
    data: Option<&Path>,
    out_dir: &Path,
) -> Result<String, CliError> {
    let bench: Benchmark<F> = load_data(cfg, data)?;
    let tc = cfg.train.cast::<F>();

    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let marker = out_dir.join(DONE);
    if marker.exists() {
        fs::remove_file(&marker).map_err(CliError::io(&marker))?;
    }
    write(out_dir, "config.txt", &cfg.render())?;

    let outcome = match run_psa(
        &tc,
        &bench.labeled,
        &bench.pool,
        &bench.test_id,
        &bench.test_ood,
        bench.num_classes,
    ) {
        Ok(o) => o,
        Err(PsaError::NonFiniteLoss {
            epoch,
            step,
            what,
            logs,
        }) => {
            // keep the diagnostic trail; no DONE marker
            write(out_dir, "epochs.csv", &epochs_csv(&logs))?;
            return Err(PsaError::NonFiniteLoss {
                epoch,
                step,
                what,
                logs,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };

    write(out_dir, "epochs.csv", &epochs_csv(&outcome.logs))?;
    let mut m = format!("{}\n", tables::metrics_header());
    let _ = writeln!(m, "{}", tables::metrics_row("stage1", &outcome.stage1));
    if let Some((stage, r)) = &outcome.final_metrics {
        let _ = writeln!(m, "{}", tables::metrics_row(stage.as_str(), r));
    }
    write(out_dir, "metrics.csv", &m)?;
    write(
        out_dir,
        "scores.csv",
        &tables::format_scores(&eval_as_f64(&outcome)),
    )?;
    write(
        out_dir,
        "embeddings.csv",
        &embeddings_csv(&outcome, &bench)?,
    )?;
    write(
        out_dir,
        "selection_final.csv",
        &selection_csv(&outcome, &bench.pool),
    )?;
    write(out_dir, DONE, "")?;

    let f = outcome.final_report();
    let last_sel = outcome
        .logs
        .iter()
        .rev()
        .find(|l| l.stage == psa_core::trainer::Stage::Select);
    let purity = last_sel
        .and_then(|l| l.id_purity)
        .map_or_else(|| "n/a".into(), |p| format!("{p:.4}"));
    Ok(format!(
        "{}: auroc {:.4}, fpr95 {:.4}, acc {:.4}, final id purity {purity}",
        out_dir.display(),
        f.auroc,
        f.fpr95,
        f.acc
    ))
}

fn eval_as_f64<F: Scalar>(o: &PsaOutcome<F>) -> metrics::EvalInputs<f64> {
    metrics::EvalInputs {
        id_scores: o.eval.id_scores.iter().map(|v| v.as_f64()).collect(),
        id_correct: o.eval.id_correct.clone(),
        ood_scores: o.eval.ood_scores.iter().map(|v| v.as_f64()).collect(),
    }
}

/// Final-model embeddings of both test splits, one row per sample.
fn embeddings_csv<F: Scalar>(o: &PsaOutcome<F>, b: &Benchmark<F>) -> Result<String, CliError> {
    let id = forward(&o.params, b.test_id.features.view())?.embeddings;
    let ood = forward(&o.params, b.test_ood.features.view())?.embeddings;
    let d = id.ncols();
    let mut out = String::from("split,index,truth");
    for j in 0..d {
        let _ = write!(out, ",z{j}");
    }
    out.push('\n');
    let mut rows = |split: &str, z: &ndarray::Array2<F>, truth: &dyn Fn(usize) -> String| {
        for (i, row) in z.rows().into_iter().enumerate() {
            let _ = write!(out, "{split},{i},{}", truth(i));
            for v in row {
                let _ = write!(out, ",{}", v.as_f64());
            }
            out.push('\n');
        }
    };
    rows("TI", &id, &|i| format!("id:{}", b.test_id.labels[i]));
    rows("TO", &ood, &|i| flag_text(&b.test_ood, i));
    Ok(out)
}

fn flag_text<F>(pool: &UnlabeledPool<F>, i: usize) -> String {
    pool.truth
        .as_ref()
        .map_or_else(String::new, |t| t[i].to_string())
}

/// Final partition of the pool, one row per pool sample, with agreement
/// against the hidden flags when they are known.
fn selection_csv<F: Scalar>(o: &PsaOutcome<F>, pool: &UnlabeledPool<F>) -> String {
    use psa_core::HiddenFlag;
    let part = &o.selection.partition_last;
    let mut verdict: Vec<(&str, Option<usize>)> = vec![("unconfident", None); pool.len()];
    for &(i, y) in &part.selected_id {
        verdict[i] = ("id", Some(y));
    }
    for &i in &part.selected_ood {
        verdict[i] = ("ood", None);
    }
    let mut out = String::from("pool_index,assignment,pseudo_label,truth,agrees\n");
    for (i, (kind, label)) in verdict.into_iter().enumerate() {
        let truth = pool.truth.as_ref().map(|t| t[i]);
        let agrees = match (kind, truth) {
            (_, None) | ("unconfident", _) => String::new(),
            ("id", Some(t)) => u8::from(Some(t) == label.map(HiddenFlag::Id)).to_string(),
            (_, Some(t)) => u8::from(!t.is_id()).to_string(),
        };
        let _ = writeln!(
            out,
            "{i},{kind},{},{},{agrees}",
            label.map_or_else(String::new, |y| y.to_string()),
            flag_text(pool, i)
        );
    }
    out
}

/// Result of `eval`: accuracy needs only the TI rows, detection metrics
/// need both splits.
pub struct EvalOutcome {
    pub acc: Option<f64>,
    pub report: Result<MetricsReport, CliError>,
}

pub fn eval(scores: &Path) -> Result<EvalOutcome, CliError> {
    let text = fs::read_to_string(scores).map_err(CliError::io(scores))?;
    let input = |source| CliError::Input {
        path: scores.to_path_buf(),
        source,
    };
    let e = tables::parse_scores(&text).map_err(input)?;
    let acc = accuracy_from_flags(&e.id_correct).ok();
    let report = metrics::evaluate(&e).map_err(input);
    Ok(EvalOutcome { acc, report })
}

pub fn format_report_csv(r: &MetricsReport) -> String {
    let vals: Vec<String> = r.values().iter().map(f64::to_string).collect();
    format!("{}\n{}\n", MetricsReport::COLUMNS.join(","), vals.join(","))
}

pub struct ReportTable {
    pub csv: String,
    pub text: String,
}

/// One row per run: the last metrics row of each completed run directory.
pub fn report(runs: &[PathBuf]) -> Result<ReportTable, CliError> {
    if runs.is_empty() {
        return Err(CliError::Invalid(
            "report needs at least one run directory".into(),
        ));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for dir in runs {
        if !dir.join(DONE).exists() {
            return Err(CliError::Failed(format!(
                "{} is not a completed run (no {DONE} marker)",
                dir.display()
            )));
        }
        let path = dir.join("metrics.csv");
        let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
        let parsed = tables::parse_metrics(&text).map_err(|source| CliError::Input {
            path: path.clone(),
            source,
        })?;
        let (stage, r) = parsed.last().cloned().ok_or_else(|| CliError::Input {
            path: path.clone(),
            source: PsaError::Empty("no metrics rows".into()),
        })?;
        let name = dir.file_name().map_or_else(
            || dir.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        rows.push((vec![name, stage], r.values()));
    }
    let mut header = vec!["run", "stage"];
    header.extend(MetricsReport::COLUMNS);
    let mut csv = format!("{}\n", header.join(","));
    for (labels, vals) in &rows {
        let v: Vec<String> = vals.iter().map(f64::to_string).collect();
        let _ = writeln!(csv, "{},{}", labels.join(","), v.join(","));
    }
    Ok(ReportTable {
        text: tables::aligned(&header, &rows),
        csv,
    })
}
