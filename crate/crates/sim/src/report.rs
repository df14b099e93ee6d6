//! Report files: machine-readable JSON plus an aligned plain-text table with
//! a per-site section and an all-sites-combined section.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gml_core::eval::{EvalReport, Method};
use serde::{Deserialize, Serialize};

use crate::exports::ExportError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub report: EvalReport,
    /// GML transfer volume over FedAvg's, when both ledgers exist.
    pub overhead_ratio: Option<f64>,
}

pub fn to_json(doc: &ReportDocument) -> String {
    let mut text = serde_json::to_string_pretty(doc).expect("report serializes");
    text.push('\n');
    text
}

fn combined_label(method: Method) -> String {
    match method {
        Method::Gml => "GML (ensemble)".to_owned(),
        m => m.label().to_owned(),
    }
}

fn cell(score: Option<&f64>) -> String {
    score.map_or_else(|| "-".to_owned(), |s| format!("{s:.4}"))
}

/// Renders the text tables. Rows follow [`Method::ALL`] order and skip
/// methods that were not evaluated.
pub fn render_text(doc: &ReportDocument) -> String {
    let r = &doc.report;
    let meta = &r.metadata;
    let mut out = String::new();
    let _ = writeln!(out, "master seed:    {}", meta.master_seed);
    let _ = writeln!(out, "config sha256:  {}", meta.config_hash);
    let _ = writeln!(out, "empty-mask DSC: {}", meta.empty_dsc);

    let sites: Vec<u32> = r.per_site.keys().copied().collect();
    let methods: Vec<Method> = Method::ALL
        .into_iter()
        .filter(|m| r.per_site.values().any(|row| row.contains_key(m)))
        .collect();
    let _ = writeln!(out, "\nMean DSC on test cases from individual sites");
    let mut header = format!("{:<16}", "Method");
    for s in &sites {
        let _ = write!(header, "{:>9}", format!("Site {s}"));
    }
    let _ = writeln!(out, "{}", header.trim_end());
    for m in &methods {
        let mut line = format!("{:<16}", m.label());
        for s in &sites {
            let _ = write!(line, "{:>9}", cell(r.per_site[s].get(m)));
        }
        let _ = writeln!(out, "{line}");
    }

    let combined: Vec<Method> = Method::ALL
        .into_iter()
        .filter(|m| r.combined.contains_key(m))
        .collect();
    if !combined.is_empty() {
        let _ = writeln!(out, "\nMean DSC on test cases from all sites combined");
        let _ = writeln!(out, "{:<16}{:>9}", "Method", "DSC");
        for m in combined {
            let _ = writeln!(out, "{:<16}{:>9}", combined_label(m), cell(r.combined.get(&m)));
        }
    }

    if let Some(ratio) = doc.overhead_ratio {
        let _ = writeln!(out, "\nCommunication overhead (GML / FedAvg scalars sent): {ratio:.4}");
    }
    out
}

/// Writes `report.json` and `report.txt` into `dir`.
pub fn write_report(doc: &ReportDocument, dir: &Path) -> Result<(), ExportError> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| ExportError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let json = dir.join("report.json");
    fs::write(&json, to_json(doc)).map_err(io(&json))?;
    let txt = dir.join("report.txt");
    fs::write(&txt, render_text(doc)).map_err(io(&txt))
}

pub fn read_report(path: &Path) -> Result<ReportDocument, ExportError> {
    let text = fs::read_to_string(path).map_err(|source| ExportError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ExportError::Malformed {
        path: path.to_owned(),
        detail: e.to_string(),
    })
}
