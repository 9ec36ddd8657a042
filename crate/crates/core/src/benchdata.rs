//! Synthetic semantically coherent OOD benchmark: Gaussian clusters for the
//! in-distribution classes and for disjoint OOD concepts, arranged as a
//! labeled set, a mixed unlabeled pool and an ID+OOD test split.
//!
//! Dataset file format (UTF-8, one record per line):
//!
//! ```text
//! # scood-bench v1 dim=<d> classes=<C>
//! <section>,<f_0>,...,<f_{d-1}>,<label>,<hidden_flag>
//! ```
//!
//! `section` is one of `L`, `U`, `TI`, `TO`; `label` is an integer or `-`;
//! `hidden_flag` is `id:<class>`, `ood:<cluster>` or `-`.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{PsaError, Result};
use crate::rng::{self, Stream};
use crate::Scalar;

/// Ground truth for a pool or test sample. Never used for training; only
/// for selection diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HiddenFlag {
    Id(usize),
    Ood(usize),
}

impl HiddenFlag {
    pub fn is_id(self) -> bool {
        matches!(self, HiddenFlag::Id(_))
    }
}

/// Written as `id:<class>` or `ood:<cluster>`.
impl fmt::Display for HiddenFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HiddenFlag::Id(c) => write!(f, "id:{c}"),
            HiddenFlag::Ood(k) => write!(f, "ood:{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet<F> {
    pub features: Array2<F>,
    pub labels: Vec<usize>,
}

impl<F: Scalar> LabeledSet<F> {
    pub fn new(features: Array2<F>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(PsaError::Shape(format!(
                "{} feature rows, {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(LabeledSet { features, labels })
    }

    pub fn empty(dim: usize) -> Self {
        LabeledSet {
            features: Array2::zeros((0, dim)),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        LabeledSet {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Unlabeled samples, optionally carrying hidden ground truth for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPool<F> {
    pub features: Array2<F>,
    pub truth: Option<Vec<HiddenFlag>>,
}

impl<F: Scalar> UnlabeledPool<F> {
    pub fn new(features: Array2<F>, truth: Option<Vec<HiddenFlag>>) -> Result<Self> {
        if let Some(t) = &truth {
            if t.len() != features.nrows() {
                return Err(PsaError::Shape(format!(
                    "{} feature rows, {} hidden flags",
                    features.nrows(),
                    t.len()
                )));
            }
        }
        Ok(UnlabeledPool { features, truth })
    }

    pub fn empty(dim: usize) -> Self {
        UnlabeledPool {
            features: Array2::zeros((0, dim)),
            truth: Some(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        UnlabeledPool {
            features: self.features.select(Axis(0), idx),
            truth: self
                .truth
                .as_ref()
                .map(|t| idx.iter().map(|&i| t[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub dim: usize,
    pub num_id_classes: usize,
    pub num_ood_clusters: usize,
    pub labeled_per_class: usize,
    pub pool_id_count: usize,
    pub pool_ood_count: usize,
    pub test_id_count: usize,
    pub test_ood_count: usize,
    /// Minimum distance between any two cluster centers.
    pub separation: f64,
    /// Per-coordinate standard deviation of samples around their center.
    pub cluster_std: f64,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            dim: 16,
            num_id_classes: 4,
            num_ood_clusters: 4,
            labeled_per_class: 200,
            pool_id_count: 400,
            pool_ood_count: 1600,
            test_id_count: 400,
            test_ood_count: 400,
            separation: 6.0,
            cluster_std: 1.0,
            seed: 0,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(PsaError::invalid("dim must be >= 1"));
        }
        if self.num_id_classes < 2 {
            return Err(PsaError::invalid("num_id_classes must be >= 2"));
        }
        if self.num_ood_clusters == 0 && (self.pool_ood_count > 0 || self.test_ood_count > 0) {
            return Err(PsaError::invalid(
                "OOD samples requested without OOD clusters",
            ));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(PsaError::invalid("separation must be > 0"));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(PsaError::invalid("cluster_std must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark<F> {
    pub num_classes: usize,
    pub labeled: LabeledSet<F>,
    pub pool: UnlabeledPool<F>,
    pub test_id: LabeledSet<F>,
    pub test_ood: UnlabeledPool<F>,
}

impl<F: Scalar> Benchmark<F> {
    pub fn dim(&self) -> usize {
        self.labeled.dim()
    }
}

const MAX_PLACEMENT_REJECTIONS: usize = 10_000;

/// Rejection-samples centers from an isotropic normal whose spread scales
/// with the separation, so pairwise distances cluster just above it.
fn place_centers(
    count: usize,
    dim: usize,
    separation: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    let spread = 1.25 * separation / (2.0 * dim as f64).sqrt();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut rejections = 0;
    while centers.len() < count {
        let cand: Vec<f64> = (0..dim)
            .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let ok = centers.iter().all(|c| {
            let d2: f64 = c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 >= separation * separation
        });
        if ok {
            centers.push(cand);
        } else {
            rejections += 1;
            if rejections > MAX_PLACEMENT_REJECTIONS {
                return Err(PsaError::CenterPlacement {
                    count,
                    separation,
                    dim,
                });
            }
        }
    }
    Ok(centers)
}

fn draw<F: Scalar>(
    centers: &[Vec<f64>],
    which: &[usize],
    std: f64,
    rng: &mut impl Rng,
) -> Array2<F> {
    let dim = centers.first().map_or(0, Vec::len);
    let mut out = Array2::zeros((which.len(), dim));
    for (mut row, &c) in out.rows_mut().into_iter().zip(which) {
        for (v, &mu) in row.iter_mut().zip(&centers[c]) {
            *v = F::lit(mu + std * rng.sample::<f64, _>(StandardNormal));
        }
    }
    out
}

/// Round-robin cluster assignment for `n` draws over `k` clusters.
fn round_robin(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|i| i % k).collect()
}

pub fn generate_benchmark<F: Scalar>(spec: &BenchmarkSpec) -> Result<Benchmark<F>> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Stream::Benchmark, 0);
    let c = spec.num_id_classes;
    let all = place_centers(
        c + spec.num_ood_clusters,
        spec.dim,
        spec.separation,
        &mut rng,
    )?;
    let (id_centers, ood_centers) = all.split_at(c);
    let std = spec.cluster_std;

    let labeled_classes: Vec<usize> = (0..c)
        .flat_map(|k| std::iter::repeat_n(k, spec.labeled_per_class))
        .collect();
    let labeled = LabeledSet::new(
        draw(id_centers, &labeled_classes, std, &mut rng),
        labeled_classes,
    )?;

    let pool_id = round_robin(spec.pool_id_count, c);
    let pool_ood = round_robin(spec.pool_ood_count, spec.num_ood_clusters.max(1));
    let pool_id_x: Array2<F> = draw(id_centers, &pool_id, std, &mut rng);
    let pool_ood_x: Array2<F> = draw(ood_centers, &pool_ood, std, &mut rng);
    let mut flags: Vec<HiddenFlag> = pool_id
        .iter()
        .map(|&k| HiddenFlag::Id(k))
        .chain(pool_ood.iter().map(|&k| HiddenFlag::Ood(k)))
        .collect();
    let stacked = ndarray::concatenate(Axis(0), &[pool_id_x.view(), pool_ood_x.view()])
        .expect("matching widths");
    let mut order: Vec<usize> = (0..flags.len()).collect();
    order.shuffle(&mut rng);
    let pool_x = stacked.select(Axis(0), &order);
    flags = order.iter().map(|&i| flags[i]).collect();
    let pool = UnlabeledPool::new(pool_x, Some(flags))?;

    let test_classes = round_robin(spec.test_id_count, c);
    let test_id = LabeledSet::new(draw(id_centers, &test_classes, std, &mut rng), test_classes)?;
    let test_clusters = round_robin(spec.test_ood_count, spec.num_ood_clusters.max(1));
    let test_ood = UnlabeledPool::new(
        draw(ood_centers, &test_clusters, std, &mut rng),
        Some(test_clusters.into_iter().map(HiddenFlag::Ood).collect()),
    )?;

    Ok(Benchmark {
        num_classes: c,
        labeled,
        pool,
        test_id,
        test_ood,
    })
}

/// Batches of indices for one epoch: a `(seed, epoch)`-determined shuffle
/// split into chunks of `batch_size`, the final partial batch kept.
pub fn epoch_batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = rng::stream(seed, Stream::Shuffle, epoch);
    order.shuffle(&mut rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

pub const FILE_MAGIC: &str = "# scood-bench v1";

fn push_row<F: Scalar>(
    out: &mut String,
    section: &str,
    row: ArrayView1<F>,
    label: Option<usize>,
    flag: Option<HiddenFlag>,
) {
    out.push_str(section);
    for &v in row.iter() {
        // 17 significant digits round-trip every f64 exactly
        let _ = write!(out, ",{:.16e}", v.as_f64());
    }
    match label {
        Some(l) => {
            let _ = write!(out, ",{l}");
        }
        None => out.push_str(",-"),
    }
    match flag {
        Some(f) => {
            let _ = write!(out, ",{f}");
        }
        None => out.push_str(",-"),
    }
    out.push('\n');
}

pub fn format_dataset<F: Scalar>(bench: &Benchmark<F>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{FILE_MAGIC} dim={} classes={}",
        bench.dim(),
        bench.num_classes
    );
    for (row, &y) in bench
        .labeled
        .features
        .rows()
        .into_iter()
        .zip(&bench.labeled.labels)
    {
        push_row(&mut out, "L", row, Some(y), None);
    }
    let pool_flag = |p: &UnlabeledPool<F>, i: usize| p.truth.as_ref().map(|t| t[i]);
    for (i, row) in bench.pool.features.rows().into_iter().enumerate() {
        push_row(&mut out, "U", row, None, pool_flag(&bench.pool, i));
    }
    for (row, &y) in bench
        .test_id
        .features
        .rows()
        .into_iter()
        .zip(&bench.test_id.labels)
    {
        push_row(&mut out, "TI", row, Some(y), Some(HiddenFlag::Id(y)));
    }
    for (i, row) in bench.test_ood.features.rows().into_iter().enumerate() {
        push_row(&mut out, "TO", row, None, pool_flag(&bench.test_ood, i));
    }
    out
}

pub fn write_dataset<F: Scalar>(path: impl AsRef<Path>, bench: &Benchmark<F>) -> Result<()> {
    fs::write(path, format_dataset(bench))?;
    Ok(())
}

pub fn read_dataset<F: Scalar>(path: impl AsRef<Path>) -> Result<Benchmark<F>> {
    parse_dataset(&fs::read_to_string(path)?)
}

fn parse_err(line: usize, msg: impl Into<String>) -> PsaError {
    PsaError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let rest = line
        .strip_prefix(FILE_MAGIC)
        .ok_or_else(|| parse_err(1, format!("expected header starting with '{FILE_MAGIC}'")))?;
    let mut dim = None;
    let mut classes = None;
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("malformed header field '{tok}'")))?;
        let n: usize = v
            .parse()
            .map_err(|_| parse_err(1, format!("header field '{k}' is not an integer")))?;
        match k {
            "dim" => dim = Some(n),
            "classes" => classes = Some(n),
            _ => return Err(parse_err(1, format!("unknown header field '{k}'"))),
        }
    }
    match (dim, classes) {
        (Some(d), Some(c)) if d > 0 => Ok((d, c)),
        _ => Err(parse_err(1, "header must carry dim=<d> and classes=<C>")),
    }
}

fn parse_flag(tok: &str, line: usize) -> Result<Option<HiddenFlag>> {
    if tok == "-" {
        return Ok(None);
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| parse_err(line, format!("bad hidden flag '{tok}'")))
    };
    if let Some(c) = tok.strip_prefix("id:") {
        Ok(Some(HiddenFlag::Id(num(c)?)))
    } else if let Some(k) = tok.strip_prefix("ood:") {
        Ok(Some(HiddenFlag::Ood(num(k)?)))
    } else {
        Err(parse_err(line, format!("bad hidden flag '{tok}'")))
    }
}

#[derive(Default)]
struct SectionRows {
    values: Vec<f64>,
    labels: Vec<Option<usize>>,
    flags: Vec<Option<HiddenFlag>>,
    first_line: Vec<usize>,
}

impl SectionRows {
    fn features<F: Scalar>(&self, dim: usize) -> Array2<F> {
        Array2::from_shape_vec(
            (self.labels.len(), dim),
            self.values.iter().map(|&v| F::lit(v)).collect(),
        )
        .expect("row widths checked during parsing")
    }

    fn labeled<F: Scalar>(&self, dim: usize, classes: usize) -> Result<LabeledSet<F>> {
        let mut labels = Vec::with_capacity(self.labels.len());
        for (l, &line) in self.labels.iter().zip(&self.first_line) {
            match l {
                Some(y) if *y < classes => labels.push(*y),
                Some(y) => return Err(parse_err(line, format!("label {y} >= classes {classes}"))),
                None => return Err(parse_err(line, "labeled row without label")),
            }
        }
        LabeledSet::new(self.features(dim), labels)
    }

    fn pool<F: Scalar>(&self, dim: usize) -> Result<UnlabeledPool<F>> {
        let known = self.flags.iter().filter(|f| f.is_some()).count();
        let truth = if known == self.flags.len() {
            Some(self.flags.iter().map(|f| f.expect("all present")).collect())
        } else if known == 0 {
            None
        } else {
            let line = self
                .flags
                .iter()
                .zip(&self.first_line)
                .find(|(f, _)| f.is_none())
                .map_or(0, |(_, &l)| l);
            return Err(parse_err(
                line,
                "hidden flags must be given for all rows of a section or none",
            ));
        };
        UnlabeledPool::new(self.features(dim), truth)
    }
}

pub fn parse_dataset<F: Scalar>(text: &str) -> Result<Benchmark<F>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let (dim, classes) = parse_header(header.trim())?;
    let mut sections: [SectionRows; 4] = Default::default();
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", dim + 3, fields.len()),
            ));
        }
        let slot = match fields[0] {
            "L" => 0,
            "U" => 1,
            "TI" => 2,
            "TO" => 3,
            s => return Err(parse_err(line, format!("unknown section '{s}'"))),
        };
        let rows = &mut sections[slot];
        for tok in &fields[1..=dim] {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(line, format!("bad number '{tok}'")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite feature '{tok}'")));
            }
            rows.values.push(v);
        }
        let label = match fields[dim + 1] {
            "-" => None,
            t => Some(
                t.parse::<usize>()
                    .map_err(|_| parse_err(line, format!("bad label '{t}'")))?,
            ),
        };
        rows.labels.push(label);
        rows.flags.push(parse_flag(fields[dim + 2], line)?);
        rows.first_line.push(line);
    }
    let [l, u, ti, to] = &sections;
    Ok(Benchmark {
        num_classes: classes,
        labeled: l.labeled(dim, classes)?,
        pool: u.pool(dim)?,
        test_id: ti.labeled(dim, classes)?,
        test_ood: to.pool(dim)?,
    })
}
