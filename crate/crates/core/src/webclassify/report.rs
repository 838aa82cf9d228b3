use std::fmt::Write as _;

use super::{CcrMatrix, MultiReport};

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

/// Full symmetric matrix; empty cells on the diagonal and for failed pairs.
pub fn ccr_matrix_csv(m: &CcrMatrix) -> String {
    let mut out = String::from("url");
    for u in &m.url_ids {
        out.push(',');
        out.push_str(u);
    }
    out.push('\n');
    for (u, row) in m.url_ids.iter().zip(&m.values) {
        out.push_str(u);
        for v in row {
            out.push(',');
            out.push_str(&cell(*v));
        }
        out.push('\n');
    }
    out
}

/// Upper-triangular percentage table with the mean underneath.
pub fn ccr_matrix_table(m: &CcrMatrix) -> String {
    let width = m.url_ids.iter().map(|u| u.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:width$}", "");
    for u in &m.url_ids {
        let _ = write!(out, " {u:>width$}");
    }
    out.push('\n');
    for (i, u) in m.url_ids.iter().enumerate() {
        let _ = write!(out, "{u:width$}");
        for j in 0..m.url_ids.len() {
            let s = match m.values[i][j] {
                Some(v) if j > i => format!("{:.2}%", 100.0 * v),
                None if j > i => "err".to_string(),
                _ => String::new(),
            };
            let _ = write!(out, " {s:>width$}");
        }
        out.push('\n');
    }
    match m.mean() {
        Some(mean) => {
            let _ = writeln!(out, "mean pairwise CCR: {:.2}%", 100.0 * mean);
        }
        None => out.push_str("mean pairwise CCR: n/a\n"),
    }
    for (pair, e) in &m.errors {
        let _ = writeln!(out, "error {pair}: {e}");
    }
    out
}

pub fn stage_report_csv(r: &MultiReport) -> String {
    let mut out = String::from("stage,group_size,entered,survived,stage_ccr,successive_ccr\n");
    for s in &r.stages {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6}",
            s.stage_index, s.group_size, s.entered, s.survived, s.stage_ccr, s.successive_ccr
        );
    }
    out
}
