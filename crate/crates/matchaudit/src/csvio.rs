//! CSV readers and writers for entity tables, labeled pairs, score files
//! and audit reports. Errors name the source and the 1-based line.

use std::collections::BTreeSet;
use std::io::Write;

use matchaudit_core::audit::{AuditEntry, AuditReport};
use matchaudit_core::stats::MultiWorkloadReport;
use matchaudit_core::{EntityTable, LabeledPair, LabeledPairSet, Record, ScoreRow, SplitTag};

use crate::error::{Error, Result};

pub const LEFT_ID_COLUMNS: [&str; 2] = ["id1", "ltable_id"];
pub const RIGHT_ID_COLUMNS: [&str; 2] = ["id2", "rtable_id"];

/// Audit CSV columns, in output order.
pub const AUDIT_COLUMNS: [&str; 14] = [
    "matcher",
    "paradigm",
    "measure",
    "group",
    "group_value",
    "overall_value",
    "disparity",
    "mode",
    "unfair",
    "tp",
    "fp",
    "fn",
    "tn",
    "annotation",
];

pub const MULTIWORKLOAD_COLUMNS: [&str; 13] = [
    "matcher", "measure", "group", "k", "undefined", "mean", "std", "z", "p_value", "reject", "alpha",
    "theta", "",
];

fn err(code: &'static str, source: &str, line: u64, msg: impl std::fmt::Display) -> Error {
    Error::validation(code, format!("{source}:{line}: {msg}"))
}

fn reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(bytes)
}

fn headers(source: &str, r: &mut csv::Reader<&[u8]>) -> Result<Vec<String>> {
    let h = r
        .headers()
        .map_err(|e| err("malformed_csv", source, 1, e))?
        .iter()
        .map(|s| s.trim().trim_start_matches('\u{feff}').to_string())
        .collect::<Vec<_>>();
    if h.is_empty() || h.iter().all(String::is_empty) {
        return Err(err("missing_header", source, 1, "header row is empty"));
    }
    Ok(h)
}

fn records(source: &str, r: &mut csv::Reader<&[u8]>) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            err("malformed_csv", source, line, e)
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        out.push((line, rec));
    }
    Ok(out)
}

fn find_column(h: &[String], names: &[&str]) -> Option<usize> {
    h.iter()
        .position(|c| names.iter().any(|n| c.eq_ignore_ascii_case(n)))
}

/// Entity table with a mandatory leading `id` column. Empty cells are null.
pub fn read_table(source: &str, bytes: &[u8], table_id: &str) -> Result<EntityTable> {
    let mut r = reader(bytes);
    let h = headers(source, &mut r)?;
    if !h[0].eq_ignore_ascii_case("id") {
        return Err(err("missing_id_column", source, 1, format!("first column must be `id`, found `{}`", h[0])));
    }
    let schema: Vec<String> = h[1..].to_vec();
    let mut table = EntityTable::new(table_id, schema);
    for (line, rec) in records(source, &mut r)? {
        if rec.len() != h.len() {
            return Err(err(
                "row_arity",
                source,
                line,
                format!("expected {} fields, found {}", h.len(), rec.len()),
            ));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(err("missing_id", source, line, "empty entity id"));
        }
        let values = rec.iter().skip(1).map(|v| (!v.is_empty()).then(|| v.to_string())).collect();
        table
            .push(Record { id: id.clone(), values })
            .map_err(|_| err("duplicate_entity", source, line, format!("duplicate entity id `{id}`")))?;
    }
    Ok(table)
}

/// Labeled pairs with `id1,id2,label` or `ltable_id,rtable_id,label`
/// columns (other columns are ignored). Returns the line of every pair.
pub fn read_pairs(source: &str, bytes: &[u8], split: SplitTag) -> Result<(LabeledPairSet, Vec<u64>)> {
    let mut r = reader(bytes);
    let h = headers(source, &mut r)?;
    let missing = |what: &str| err("missing_column", source, 1, format!("missing {what} column"));
    let l = find_column(&h, &LEFT_ID_COLUMNS).ok_or_else(|| missing("id1/ltable_id"))?;
    let rc = find_column(&h, &RIGHT_ID_COLUMNS).ok_or_else(|| missing("id2/rtable_id"))?;
    let lab = find_column(&h, &["label"]).ok_or_else(|| missing("label"))?;
    let mut pairs = Vec::new();
    let mut lines = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, rec) in records(source, &mut r)? {
        if rec.len() != h.len() {
            return Err(err("row_arity", source, line, format!("expected {} fields, found {}", h.len(), rec.len())));
        }
        let label = match rec[lab].trim() {
            "1" => true,
            "0" => false,
            other => return Err(err("invalid_label", source, line, format!("label must be 0 or 1, found `{other}`"))),
        };
        let p = LabeledPair::new(rec[l].trim(), rec[rc].trim(), label);
        if !seen.insert((p.left_id.clone(), p.right_id.clone())) {
            return Err(err(
                "duplicate_pair",
                source,
                line,
                format!("duplicate pair ({}, {})", p.left_id, p.right_id),
            ));
        }
        pairs.push(p);
        lines.push(line);
    }
    Ok((LabeledPairSet::new(split, pairs), lines))
}

/// Score rows with `ltable_id,rtable_id,score` (or `id1,id2,score`).
/// Range checks happen against the test split later.
pub fn read_scores(source: &str, bytes: &[u8]) -> Result<Vec<ScoreRow>> {
    let mut r = reader(bytes);
    let h = headers(source, &mut r)?;
    let missing = |what: &str| err("missing_column", source, 1, format!("missing {what} column"));
    let l = find_column(&h, &LEFT_ID_COLUMNS).ok_or_else(|| missing("ltable_id/id1"))?;
    let rc = find_column(&h, &RIGHT_ID_COLUMNS).ok_or_else(|| missing("rtable_id/id2"))?;
    let s = find_column(&h, &["score"]).ok_or_else(|| missing("score"))?;
    let mut out = Vec::new();
    for (line, rec) in records(source, &mut r)? {
        if rec.len() != h.len() {
            return Err(err("row_arity", source, line, format!("expected {} fields, found {}", h.len(), rec.len())));
        }
        let score: f64 = rec[s]
            .trim()
            .parse()
            .map_err(|_| err("invalid_score", source, line, format!("`{}` is not a number", &rec[s])))?;
        if !score.is_finite() {
            return Err(err("invalid_score", source, line, "score must be finite"));
        }
        out.push(ScoreRow {
            left_id: rec[l].trim().to_string(),
            right_id: rec[rc].trim().to_string(),
            score,
        });
    }
    Ok(out)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Internal(format!("csv: {e}"))
}

pub fn write_table<W: Write>(w: W, table: &EntityTable) -> Result<()> {
    let mut w = writer(w);
    let header: Vec<&str> = std::iter::once("id").chain(table.schema.iter().map(String::as_str)).collect();
    w.write_record(&header).map_err(csv_err)?;
    for r in table.rows() {
        let row: Vec<&str> = std::iter::once(r.id.as_str())
            .chain(r.values.iter().map(|v| v.as_deref().unwrap_or("")))
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pairs<W: Write>(w: W, pairs: &[LabeledPair]) -> Result<()> {
    let mut w = writer(w);
    w.write_record(["ltable_id", "rtable_id", "label"]).map_err(csv_err)?;
    for p in pairs {
        w.write_record([p.left_id.as_str(), p.right_id.as_str(), if p.label { "1" } else { "0" }])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scores<W: Write>(w: W, rows: &[ScoreRow]) -> Result<()> {
    let mut w = writer(w);
    w.write_record(["ltable_id", "rtable_id", "score"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.left_id.as_str(), r.right_id.as_str(), &r.score.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn audit_row(e: &AuditEntry) -> Vec<String> {
    vec![
        e.matcher.clone(),
        e.paradigm.as_str().to_string(),
        e.measure.id().to_string(),
        e.group.to_string(),
        opt(e.group_value),
        opt(e.overall_value),
        opt(e.disparity),
        e.mode.as_str().to_string(),
        e.unfair.to_string(),
        e.support.tp.to_string(),
        e.support.fp.to_string(),
        e.support.fn_.to_string(),
        e.support.tn.to_string(),
        e.annotation
            .map(|a| serde_json::to_value(a).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default())
            .unwrap_or_default(),
    ]
}

/// Audit report as CSV with the fixed [`AUDIT_COLUMNS`] order. Floats use
/// the shortest representation that parses back to the same value.
pub fn write_audit<W: Write>(w: W, report: &AuditReport) -> Result<()> {
    let mut w = writer(w);
    w.write_record(AUDIT_COLUMNS).map_err(csv_err)?;
    for e in &report.entries {
        w.write_record(audit_row(e)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_multiworkload<W: Write>(w: W, report: &MultiWorkloadReport) -> Result<()> {
    let mut w = writer(w);
    w.write_record(&MULTIWORKLOAD_COLUMNS[..12]).map_err(csv_err)?;
    for r in &report.rows {
        w.write_record([
            r.matcher.clone(),
            r.measure.id().to_string(),
            r.group.to_string(),
            r.k.to_string(),
            r.undefined.to_string(),
            opt(r.mean),
            opt(r.std),
            opt(r.z),
            opt(r.p_value),
            r.reject.to_string(),
            r.alpha.to_string(),
            r.theta.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_errors_carry_lines() {
        let e = read_table("a.csv", b"name,id\nx,1\n", "a").unwrap_err();
        assert_eq!(e.code(), "missing_id_column");
        let e = read_table("a.csv", b"id,name\n1,x\n1,y\n", "a").unwrap_err();
        assert!(e.to_string().starts_with("a.csv:3:"), "{e}");
        let e = read_table("a.csv", b"id,name\n1,x,z\n", "a").unwrap_err();
        assert_eq!(e.code(), "row_arity");
    }

    #[test]
    fn pair_aliases() {
        let (p, lines) = read_pairs("t.csv", b"_id,ltable_id,rtable_id,label\n0,1,2,1\n1,3,4,0\n", SplitTag::Test).unwrap();
        assert_eq!(p.pairs, vec![LabeledPair::new("1", "2", true), LabeledPair::new("3", "4", false)]);
        assert_eq!(lines, vec![2, 3]);
        let e = read_pairs("t.csv", b"id1,id2,label\n1,2,yes\n", SplitTag::Test).unwrap_err();
        assert_eq!(e.code(), "invalid_label");
    }

    #[test]
    fn scores_parse() {
        let s = read_scores("s.csv", b"id1,id2,score\n1,2,0.25\n").unwrap();
        assert_eq!(s[0].score, 0.25);
        assert_eq!(read_scores("s.csv", b"id1,id2,score\n1,2,x\n").unwrap_err().code(), "invalid_score");
    }
}
