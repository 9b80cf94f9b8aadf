//! Plain-text report files and their readers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::contrib::{ranked_cells, ContributionProfile};
use super::metrics::ClassificationReport;
use super::norms::{GroupStats, NormRow};
use crate::data::Label;
use crate::error::{Error, Result};

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column: 0,
        message: message.into(),
    }
}

/// `target_network,source_network,weight` in target-major order.
pub fn write_matrix_csv(path: &Path, matrix: &[Vec<f64>], value_name: &str) -> Result<()> {
    let mut s = format!("target_network,source_network,{value_name}\n");
    let n = matrix.len();
    for t in 0..n {
        for (src, row) in matrix.iter().enumerate() {
            let _ = writeln!(s, "{t},{src},{:e}", row[t]);
        }
    }
    write(path, &s)
}

pub fn write_contributions_csv(path: &Path, profile: &ContributionProfile) -> Result<()> {
    write_matrix_csv(path, &profile.matrix, "weight")
}

/// Delta matrix in the same layout, value column `delta`.
pub fn write_delta_csv(path: &Path, delta: &[Vec<f64>]) -> Result<()> {
    write_matrix_csv(path, delta, "delta")
}

/// Reads a file written by [`write_matrix_csv`] back into `matrix[source][target]`.
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cells = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(parse_err(path, i + 1, "expected 3 fields"));
        }
        let t: usize = f[0].parse().map_err(|_| parse_err(path, i + 1, "bad target"))?;
        let s: usize = f[1].parse().map_err(|_| parse_err(path, i + 1, "bad source"))?;
        let v: f64 = f[2].parse().map_err(|_| parse_err(path, i + 1, "bad value"))?;
        cells.push((s, t, v));
    }
    let n = cells.iter().map(|c| c.0.max(c.1) + 1).max().unwrap_or(0);
    if cells.len() != n * n {
        return Err(parse_err(
            path,
            0,
            format!("{} cells do not form a square matrix", cells.len()),
        ));
    }
    let mut m = vec![vec![0.0; n]; n];
    for (s, t, v) in cells {
        m[s][t] = v;
    }
    Ok(m)
}

pub const NORMS_HEADER: &str = "subject,session,age,label,embedding_norm";

pub fn write_norms_csv(path: &Path, rows: &[NormRow]) -> Result<()> {
    let mut s = format!("{NORMS_HEADER}\n");
    for r in rows {
        let age = r.age.map_or_else(|| "NA".into(), |a| a.to_string());
        let _ = writeln!(s, "{},{},{},{},{:e}", r.subject, r.session, age, r.label, r.norm);
    }
    write(path, &s)
}

pub fn read_norms_csv(path: &Path) -> Result<Vec<NormRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = |m: &str| parse_err(path, i + 1, m);
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            Ok(NormRow {
                subject: f[0].to_string(),
                session: f[1].parse().map_err(|_| bad("bad session"))?,
                age: match f[2] {
                    "NA" => None,
                    a => Some(a.parse().map_err(|_| bad("bad age"))?),
                },
                label: f[3].parse::<Label>().map_err(|e| bad(&e))?,
                norm: f[4].parse().map_err(|_| bad("bad norm"))?,
            })
        })
        .collect()
}

pub fn format_group_stats(stats: &GroupStats) -> String {
    let mut s = String::new();
    for g in &stats.groups {
        let _ = writeln!(s, "group {} n = {} mean = {:e} sd = {:e}", g.label, g.n, g.mean, g.sd);
    }
    for t in &stats.tests {
        let _ = writeln!(
            s,
            "welch {} vs {} t = {:e} dof = {:e} p = {:e}",
            t.a, t.b, t.welch.t, t.welch.dof, t.welch.p
        );
    }
    s
}

pub fn write_group_stats(path: &Path, stats: &GroupStats) -> Result<()> {
    write(path, &format_group_stats(stats))
}

pub fn format_classification(report: &ClassificationReport) -> String {
    let mut s = String::from("# confusion rows = true class, columns = predicted (CN, MCI, AD)\n");
    for (c, row) in report.confusion.iter().enumerate() {
        let name = Label::from_class_index(c).map_or("?", Label::as_str);
        let _ = writeln!(s, "confusion.{name} = {},{},{}", row[0], row[1], row[2]);
    }
    let _ = writeln!(s, "balanced_accuracy = {:e}", report.balanced_accuracy);
    let _ = writeln!(s, "macro_f1 = {:e}", report.macro_f1);
    match report.macro_auc {
        Some(a) => {
            let _ = writeln!(s, "macro_auc = {a:e}");
        }
        None => s.push_str("macro_auc = NA\n"),
    }
    let _ = writeln!(s, "flagged = {}", report.flagged);
    s
}

pub fn write_classification(path: &Path, report: &ClassificationReport) -> Result<()> {
    write(path, &format_classification(report))
}

/// Top cells of a delta matrix as text, for console summaries.
pub fn describe_delta(delta: &[Vec<f64>], names: &[String], top: usize) -> String {
    let mut s = String::new();
    for (i, j, v) in ranked_cells(delta).into_iter().take(top) {
        let _ = writeln!(s, "  {} -> {}: {v:+.4}", names[i], names[j]);
    }
    s
}
