//! Plain-text tables for terminal output.

use std::fmt::Write as _;
use std::io::IsTerminal;

use matchaudit_core::audit::AuditReport;
use matchaudit_core::resolve::Resolution;
use matchaudit_core::stats::MultiWorkloadReport;

/// Color is used only on a terminal and only when `NO_COLOR` is unset or
/// empty.
pub fn use_color() -> bool {
    let no_color = std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty());
    !no_color && std::io::stdout().is_terminal()
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".to_string())
}

fn table(header: &[&str], rows: &[Vec<String>], highlight: &[bool], color: bool) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let _ = write!(s, "{c:<w$}");
        }
        s.trim_end().to_string()
    };
    let mut out = line(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    out.push('\n');
    for (r, &hl) in rows.iter().zip(highlight) {
        let l = line(r);
        if hl && color {
            let _ = writeln!(out, "\x1b[31m{l}\x1b[0m");
        } else {
            let _ = writeln!(out, "{l}");
        }
    }
    out
}

pub fn audit_table(report: &AuditReport, color: bool) -> String {
    let rows: Vec<Vec<String>> = report
        .entries
        .iter()
        .map(|e| {
            vec![
                e.matcher.clone(),
                e.measure.id().to_string(),
                e.group.to_string(),
                num(e.group_value),
                num(e.overall_value),
                num(e.disparity),
                e.support.total().to_string(),
                if e.unfair { "UNFAIR".to_string() } else { String::new() },
            ]
        })
        .collect();
    let hl: Vec<bool> = report.entries.iter().map(|e| e.unfair).collect();
    table(
        &["matcher", "measure", "group", "value", "overall", "disparity", "support", "flag"],
        &rows,
        &hl,
        color,
    )
}

pub fn multiworkload_table(report: &MultiWorkloadReport, color: bool) -> String {
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.matcher.clone(),
                r.measure.id().to_string(),
                r.group.to_string(),
                r.k.to_string(),
                num(r.mean),
                num(r.std),
                num(r.z),
                num(r.p_value),
                if r.reject { "UNFAIR".to_string() } else { String::new() },
            ]
        })
        .collect();
    let hl: Vec<bool> = report.rows.iter().map(|r| r.reject).collect();
    table(
        &["matcher", "measure", "group", "k", "mean", "std", "z", "p", "flag"],
        &rows,
        &hl,
        color,
    )
}

/// Frontier points, one per line, with their assignments.
pub fn frontier_table(resolution: &Resolution) -> String {
    let best = resolution.best_per_group_index;
    let rows: Vec<Vec<String>> = resolution
        .frontier_indices
        .iter()
        .map(|&i| {
            let p = &resolution.points[i];
            let assignment = p
                .assignment
                .iter()
                .map(|(g, m)| format!("{g}={m}"))
                .collect::<Vec<_>>()
                .join(",");
            vec![
                i.to_string(),
                format!("{:.4}", p.unfairness),
                format!("{:.4}", p.worst_performance),
                if i == best { "best".to_string() } else { String::new() },
                assignment,
            ]
        })
        .collect();
    let hl = vec![false; rows.len()];
    let s = &resolution.space;
    let mut out = format!(
        "{} groups, {} matchers, {} assignments evaluated{}\n",
        s.groups,
        s.matchers,
        s.enumerated,
        if s.sampled { " (sampled)" } else { "" }
    );
    out.push_str(&table(&["point", "F", "A", "", "assignment"], &rows, &hl, false));
    out
}
