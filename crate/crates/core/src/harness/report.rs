//! Result tables. The delimited format is tab-separated with one line per
//! retained seed:
//!
//! ```text
//! method  parameter  config_hash  seed_index  seed  win_rate  mean_return  mean_attacked  mean_total
//! ```
//!
//! `win_rate` is `NA` on return-only environments and `mean_attacked` lists
//! one value per target agent, comma-separated. Reals are printed at full
//! precision so the file parses back to the exact record values.

use std::fmt::Write as _;

use super::run::RunRecord;
use crate::error::{Error, Result};

pub const DELIMITED_HEADER: &str =
    "method\tparameter\tconfig_hash\tseed_index\tseed\twin_rate\tmean_return\tmean_attacked\tmean_total";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Delimited,
}

/// One parsed line of a delimited report.
#[derive(Debug, Clone, PartialEq)]
pub struct DelimitedRow {
    pub method: String,
    pub parameter: String,
    pub config_hash: String,
    pub seed_index: usize,
    pub seed: u64,
    pub win_rate: Option<f64>,
    pub mean_return: f64,
    pub mean_attacked: Vec<f64>,
    pub mean_total: f64,
}

fn retained(record: &RunRecord) -> Vec<&super::run::SeedResult> {
    match &record.aggregate {
        Some(a) => a.retained.iter().filter_map(|&i| record.seeds.iter().find(|s| s.seed_index == i)).collect(),
        None => Vec::new(),
    }
}

pub fn emit_report(records: &[RunRecord], format: ReportFormat) -> String {
    match format {
        ReportFormat::Delimited => delimited(records),
        ReportFormat::Table => table(records),
    }
}

fn delimited(records: &[RunRecord]) -> String {
    let mut out = format!("{DELIMITED_HEADER}\n");
    for r in records {
        for s in retained(r) {
            let win = s.win_rate.map_or("NA".to_string(), |w| format!("{w:?}"));
            let attacked: Vec<String> = s.mean_attacked.iter().map(|a| format!("{a:?}")).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:?}\t{}\t{:?}",
                r.method,
                r.parameter,
                r.config_hash,
                s.seed_index,
                s.seed,
                win,
                s.mean_return,
                attacked.join(","),
                s.mean_total
            );
        }
    }
    out
}

fn table(records: &[RunRecord]) -> String {
    let mut rows = vec![[
        "Attack type".to_string(),
        "Parameter".to_string(),
        "Winning rate / return".to_string(),
        "Attacked steps / Total steps".to_string(),
    ]];
    for r in records {
        let Some(agg) = &r.aggregate else {
            rows.push([r.method.clone(), r.parameter.clone(), "degraded".into(), "-".into()]);
            continue;
        };
        let kept = retained(r);
        let per_seed: Vec<String> =
            kept.iter().map(|s| format!("{:.3}", s.win_rate.unwrap_or(s.mean_return))).collect();
        let headline = match agg.win_rate {
            Some(w) => format!("{w:.3}"),
            None => format!("return {:.3}", agg.mean_return),
        };
        let attacked: Vec<String> =
            agg.mean_attacked.iter().map(|a| format!("{a:.3} / {:.3}", agg.mean_total)).collect();
        rows.push([
            r.method.clone(),
            r.parameter.clone(),
            format!("{headline} ({})", per_seed.join(" ")),
            attacked.join("; "),
        ]);
    }
    let widths: Vec<usize> = (0..4).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "{}", rule.join("-|-"));
        }
    }
    out
}

fn field<T: std::str::FromStr>(value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Format(format!("line {line}: cannot parse {value:?}")))
}

/// Parses output of the delimited report back into rows.
pub fn parse_delimited(text: &str) -> Result<Vec<DelimitedRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == DELIMITED_HEADER => {}
        _ => return Err(Error::Format("missing delimited report header".into())),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let n = n + 1;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 9 {
                return Err(Error::Format(format!("line {n}: expected 9 columns, got {}", cols.len())));
            }
            Ok(DelimitedRow {
                method: cols[0].into(),
                parameter: cols[1].into(),
                config_hash: cols[2].into(),
                seed_index: field(cols[3], n)?,
                seed: field(cols[4], n)?,
                win_rate: if cols[5] == "NA" { None } else { Some(field(cols[5], n)?) },
                mean_return: field(cols[6], n)?,
                mean_attacked: if cols[7].is_empty() {
                    Vec::new()
                } else {
                    cols[7].split(',').map(|v| field(v, n)).collect::<Result<_>>()?
                },
                mean_total: field(cols[8], n)?,
            })
        })
        .collect()
}
