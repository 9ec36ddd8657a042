//! CSV tables written by `train` and read back by `eval` and `report`.

use std::fmt::Write as _;

use psa_core::metrics::EvalInputs;
use psa_core::{MetricsReport, PsaError, Result};

pub const SCORES_HEADER: &str = "split,score,correct";

fn parse_err(line: usize, msg: impl Into<String>) -> PsaError {
    PsaError::Parse {
        line,
        msg: msg.into(),
    }
}

/// `TI` rows carry a 0/1 correctness flag; `TO` rows leave it empty.
pub fn format_scores(e: &EvalInputs<f64>) -> String {
    let mut out = format!("{SCORES_HEADER}\n");
    for (s, &c) in e.id_scores.iter().zip(&e.id_correct) {
        let _ = writeln!(out, "TI,{s},{}", u8::from(c));
    }
    for s in &e.ood_scores {
        let _ = writeln!(out, "TO,{s},");
    }
    out
}

/// Reads a score file. Either split may be empty; callers decide which
/// metrics that still allows.
pub fn parse_scores(text: &str) -> Result<EvalInputs<f64>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SCORES_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header `{SCORES_HEADER}`"))),
    }
    let mut e = EvalInputs {
        id_scores: Vec::new(),
        id_correct: Vec::new(),
        ood_scores: Vec::new(),
    };
    for (i, raw) in lines {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(parse_err(
                n,
                format!("expected 3 columns, found {}", cols.len()),
            ));
        }
        let score: f64 = cols[1]
            .parse()
            .map_err(|_| parse_err(n, format!("bad score `{}`", cols[1])))?;
        if score.is_nan() {
            return Err(parse_err(n, "score is NaN"));
        }
        match (cols[0], cols[2]) {
            ("TI", "1") | ("TI", "0") => {
                e.id_scores.push(score);
                e.id_correct.push(cols[2] == "1");
            }
            ("TI", c) => {
                return Err(parse_err(
                    n,
                    format!("TI rows need correct = 0 or 1, got `{c}`"),
                ))
            }
            ("TO", "" | "0" | "1") => e.ood_scores.push(score),
            ("TO", c) => return Err(parse_err(n, format!("bad correct flag `{c}`"))),
            (s, _) => return Err(parse_err(n, format!("split must be TI or TO, got `{s}`"))),
        }
    }
    Ok(e)
}

pub fn metrics_header() -> String {
    format!("stage,{}", MetricsReport::COLUMNS.join(","))
}

pub fn metrics_row(stage: &str, r: &MetricsReport) -> String {
    let vals: Vec<String> = r.values().iter().map(f64::to_string).collect();
    format!("{stage},{}", vals.join(","))
}

pub fn parse_metrics(text: &str) -> Result<Vec<(String, MetricsReport)>> {
    let mut lines = text.lines().enumerate();
    let header = metrics_header();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => return Err(parse_err(1, format!("expected header `{header}`"))),
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let n = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.trim().split(',').collect();
        if cols.len() != 1 + MetricsReport::COLUMNS.len() {
            return Err(parse_err(
                n,
                format!(
                    "expected {} columns, found {}",
                    1 + MetricsReport::COLUMNS.len(),
                    cols.len()
                ),
            ));
        }
        let mut v = [0.0; 9];
        for (slot, c) in v.iter_mut().zip(&cols[1..]) {
            *slot = c
                .parse()
                .map_err(|_| parse_err(n, format!("bad value `{c}`")))?;
        }
        rows.push((cols[0].to_string(), MetricsReport::from_values(v)));
    }
    Ok(rows)
}

/// Left-aligned first columns, right-aligned numbers, fixed 4 decimals.
pub fn aligned(header: &[&str], rows: &[(Vec<String>, [f64; 9])]) -> String {
    let text_cols = header.len() - 9;
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(labels, vals)| {
            labels
                .iter()
                .cloned()
                .chain(vals.iter().map(|v| format!("{v:.4}")))
                .collect()
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            cells
                .iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let render = |row: Vec<&str>| {
        row.iter()
            .enumerate()
            .map(|(c, s)| {
                if c < text_cols {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = render(header.to_vec());
    out.push('\n');
    for r in &cells {
        out.push_str(&render(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_round_trip() {
        let e = EvalInputs {
            id_scores: vec![0.1, 1e-300, -3.25],
            id_correct: vec![true, false, true],
            ood_scores: vec![0.30000000000000004, f64::NEG_INFINITY],
        };
        let back = parse_scores(&format_scores(&e)).unwrap();
        assert_eq!(back.id_scores, e.id_scores);
        assert_eq!(back.id_correct, e.id_correct);
        assert_eq!(back.ood_scores, e.ood_scores);
    }

    #[test]
    fn malformed_scores_name_the_line() {
        let bad = "split,score,correct\nTI,0.5,1\nTX,0.2,0\n";
        match parse_scores(bad) {
            Err(PsaError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_scores("score,split\n").is_err());
        assert!(parse_scores("split,score,correct\nTI,abc,1\n").is_err());
        assert!(parse_scores("split,score,correct\nTI,0.1,yes\n").is_err());
        assert!(parse_scores("split,score,correct\nTI,0.1\n").is_err());
    }

    #[test]
    fn metrics_round_trip() {
        let r = MetricsReport::from_values([0.05, 0.97, 0.9, 0.95, 0.1, 0.2, 0.3, 0.4, 0.99]);
        let text = format!(
            "{}\n{}\n{}\n",
            metrics_header(),
            metrics_row("stage1", &r),
            metrics_row("retrained", &r)
        );
        let rows = parse_metrics(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].0, "retrained");
        assert_eq!(rows[1].1, r);
    }

    #[test]
    fn aligned_table_shape() {
        let header = ["run", "stage", "a", "b", "c", "d", "e", "f", "g", "h", "i"];
        let rows = vec![(vec!["x".to_string(), "stage1".to_string()], [0.5; 9])];
        let t = aligned(&header, &rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("x    stage1"));
        assert!(lines[1].ends_with("0.5000"));
    }
}
