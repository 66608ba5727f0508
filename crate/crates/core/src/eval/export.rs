use std::collections::BTreeSet;
use std::fmt::Write;

use super::{Report, RoutingTable};

fn row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn rule(n: usize) -> String {
    format!("|{}\n", "---|".repeat(n))
}

/// Accuracy table (one column per database, then overall and mean calls),
/// followed by a per-category table when any question is categorised.
/// Values have one decimal; a missing cell is `-`.
pub fn report_markdown(report: &Report) -> String {
    let dbs: BTreeSet<&str> = report.methods.iter().flat_map(|m| m.per_db.keys().map(String::as_str)).collect();
    let mut header = vec!["Method".to_string()];
    header.extend(dbs.iter().map(|d| d.to_string()));
    header.extend(["Overall".to_string(), "Calls".to_string()]);

    let mut out = row(&header);
    out.push_str(&rule(header.len()));
    for m in &report.methods {
        let mut cells = vec![m.method.clone()];
        cells.extend(dbs.iter().map(|d| m.per_db.get(*d).map_or("-".into(), |a| format!("{a:.1}"))));
        cells.push(format!("{:.1}", m.overall));
        cells.push(format!("{:.1}", m.mean_calls));
        out.push_str(&row(&cells));
    }

    let cats: BTreeSet<&str> =
        report.methods.iter().flat_map(|m| m.per_category.keys().map(String::as_str)).collect();
    if !cats.is_empty() {
        let mut header = vec!["Category".to_string()];
        header.extend(report.methods.iter().map(|m| m.method.clone()));
        out.push('\n');
        out.push_str(&row(&header));
        out.push_str(&rule(header.len()));
        for c in cats {
            let mut cells = vec![c.to_string()];
            cells.extend(
                report.methods.iter().map(|m| m.per_category.get(c).map_or("-".into(), |a| format!("{a:.1}"))),
            );
            out.push_str(&row(&cells));
        }
    }
    for w in &report.warnings {
        let _ = writeln!(out, "\nwarning: {w}");
    }
    out
}

fn signed(x: Option<f64>) -> String {
    match x {
        None => "-".into(),
        Some(v) if format!("{v:.1}") == "-0.0" || format!("{v:.1}") == "0.0" => "0.0".into(),
        Some(v) => format!("{v:+.1}"),
    }
}

pub fn routing_markdown(table: &RoutingTable) -> String {
    let header: Vec<String> =
        ["Model", "Method", "Python % (all)", "Δ ref. correct", "Δ ref. incorrect"].iter().map(|s| s.to_string()).collect();
    let mut out = row(&header);
    out.push_str(&rule(header.len()));
    for r in &table.rows {
        out.push_str(&row(&[
            r.model.clone(),
            r.method.clone(),
            format!("{:.1}", r.pct_python_full),
            signed(r.delta_correct),
            signed(r.delta_incorrect),
        ]));
    }
    out
}
