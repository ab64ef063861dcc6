use std::collections::BTreeMap;
use std::fmt::Write;

use crate::eval::harness::{RunManifest, ScenarioKind};

const METHOD_ORDER: [&str; 11] = [
    "clean",
    "random",
    "mostattr",
    "prefedge",
    "nipa",
    "afgsm",
    "opti",
    "gnia",
    "gnia_no_attr",
    "gnia_no_edge",
    "gnia_no_joint",
];

const EXTERNAL: [&str; 2] = ["nipa", "afgsm"];

fn column(m: &RunManifest) -> String {
    let kind = match m.scenario.kind {
        ScenarioKind::SingleTarget => "single",
        ScenarioKind::MultiTarget => "multi",
        ScenarioKind::BlackBox => "black-box",
    };
    match m.scenario.kind {
        ScenarioKind::BlackBox => format!("{kind} {}→{}", m.scenario.surrogate, m.scenario.victim),
        _ => format!("{kind} {}", m.scenario.victim),
    }
}

/// Markdown table of misclassification rates, one row per method and one
/// column per scenario/victim pair. Later manifests for the same cell win.
pub fn render_report(manifests: &[RunManifest]) -> String {
    let mut columns: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
    for m in manifests {
        let col = column(m);
        if !columns.contains(&col) {
            columns.push(col.clone());
        }
        cells.insert((m.method.clone(), col.clone()), m.misclassification_rate);
        cells.insert(("clean".into(), col), m.clean_rate);
    }
    let mut methods: Vec<String> = METHOD_ORDER.iter().map(|s| s.to_string()).collect();
    for m in manifests {
        if !methods.contains(&m.method) {
            methods.push(m.method.clone());
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, "| method | {} |", columns.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(columns.len()));
    for method in &methods {
        let row: Vec<String> = columns
            .iter()
            .map(|c| match cells.get(&(method.clone(), c.clone())) {
                Some(r) => format!("{:.2}%", 100.0 * r),
                None => String::new(),
            })
            .collect();
        let _ = writeln!(out, "| {method} | {} |", row.join(" | "));
    }
    let _ = writeln!(
        out,
        "\nRows {} are external attackers that this crate does not implement.",
        EXTERNAL.join(" and ")
    );
    out
}
