//! Training artifacts: ledger and history CSV files and model JSON files.
//!
//! Ledger CSV columns: `round,from,to,kind,scalars`, where endpoints are a
//! site id or `server` and kind is `peer_model`, `upload` or `broadcast`.
//! History CSV columns: `round,site,split,dsc`. Floats are written in their
//! shortest round-trip form, so reading a file back is exact.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use gml_core::eval::Method;
use gml_core::gossip::{CommunicationLedger, HistoryRecord, TransferRecord};
use gml_core::{GmlError, ModelParams};
use serde::{Deserialize, Serialize};

pub const MODEL_FORMAT: &str = "gml-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {detail}", path.display())]
    Malformed { path: PathBuf, detail: String },
}

impl ExportError {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> Self + '_ {
        move |source| Self::Io {
            path: path.to_owned(),
            source,
        }
    }

    fn csv(path: &Path) -> impl FnOnce(csv::Error) -> Self + '_ {
        move |source| Self::Csv {
            path: path.to_owned(),
            source,
        }
    }

    fn malformed(path: &Path, detail: impl Into<String>) -> Self {
        Self::Malformed {
            path: path.to_owned(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LedgerRow {
    round: u64,
    from: String,
    to: String,
    kind: String,
    scalars: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct HistoryRow {
    round: u64,
    site: u32,
    split: String,
    dsc: f64,
}

fn write_rows<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>, header: &[&str]) -> Result<(), ExportError> {
    // The header is written by hand so that an empty export still carries it.
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(ExportError::csv(path))?;
    w.write_record(header).map_err(ExportError::csv(path))?;
    for row in rows {
        w.serialize(row).map_err(ExportError::csv(path))?;
    }
    w.flush().map_err(ExportError::io(path))
}

fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<R>, ExportError> {
    let mut r = csv::Reader::from_path(path).map_err(ExportError::csv(path))?;
    let found = r.headers().map_err(ExportError::csv(path))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(ExportError::malformed(
            path,
            format!("header {:?}, expected {}", found.iter().collect::<Vec<_>>(), header.join(",")),
        ));
    }
    r.deserialize().collect::<Result<_, _>>().map_err(ExportError::csv(path))
}

const LEDGER_HEADER: [&str; 5] = ["round", "from", "to", "kind", "scalars"];
const HISTORY_HEADER: [&str; 4] = ["round", "site", "split", "dsc"];

pub fn write_ledger_csv(ledger: &CommunicationLedger, path: &Path) -> Result<(), ExportError> {
    let rows = ledger.records().iter().map(|r| LedgerRow {
        round: r.round,
        from: r.from.to_string(),
        to: r.to.to_string(),
        kind: r.kind.to_string(),
        scalars: r.scalars,
    });
    write_rows(path, rows, &LEDGER_HEADER)
}

pub fn read_ledger_csv(path: &Path) -> Result<CommunicationLedger, ExportError> {
    let bad = |e: GmlError| ExportError::malformed(path, e.to_string());
    let mut ledger = CommunicationLedger::new();
    for row in read_rows::<LedgerRow>(path, &LEDGER_HEADER)? {
        ledger
            .record(TransferRecord {
                round: row.round,
                from: row.from.parse().map_err(bad)?,
                to: row.to.parse().map_err(bad)?,
                kind: row.kind.parse().map_err(bad)?,
                scalars: row.scalars,
            })
            .map_err(bad)?;
    }
    Ok(ledger)
}

pub fn write_history_csv(history: &[HistoryRecord], path: &Path) -> Result<(), ExportError> {
    let rows = history.iter().map(|h| HistoryRow {
        round: h.round,
        site: h.site,
        split: h.split.to_string(),
        dsc: h.dsc,
    });
    write_rows(path, rows, &HISTORY_HEADER)
}

pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRecord>, ExportError> {
    read_rows::<HistoryRow>(path, &HISTORY_HEADER)?
        .into_iter()
        .map(|row| {
            Ok(HistoryRecord {
                round: row.round,
                site: row.site,
                split: row
                    .split
                    .parse()
                    .map_err(|e: GmlError| ExportError::malformed(path, e.to_string()))?,
                dsc: row.dsc,
            })
        })
        .collect()
}

/// One trained model. `site` is `None` for global methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub format_version: u32,
    pub method: Method,
    pub site: Option<u32>,
    pub params: ModelParams,
}

impl ModelFile {
    pub fn new(method: Method, site: Option<u32>, params: ModelParams) -> Self {
        Self {
            format: MODEL_FORMAT.to_owned(),
            format_version: MODEL_VERSION,
            method,
            site,
            params,
        }
    }
}

pub fn write_model(model: &ModelFile, path: &Path) -> Result<(), ExportError> {
    let mut text = serde_json::to_string_pretty(model).expect("model serializes");
    text.push('\n');
    fs::write(path, text).map_err(ExportError::io(path))
}

pub fn read_model(path: &Path) -> Result<ModelFile, ExportError> {
    let text = fs::read_to_string(path).map_err(ExportError::io(path))?;
    let model: ModelFile = serde_json::from_str(&text).map_err(|e| ExportError::malformed(path, e.to_string()))?;
    if model.format != MODEL_FORMAT || model.format_version != MODEL_VERSION {
        return Err(ExportError::malformed(
            path,
            format!("unsupported model format {} v{}", model.format, model.format_version),
        ));
    }
    if !model.params.is_finite() {
        return Err(ExportError::malformed(path, "non-finite parameters"));
    }
    Ok(model)
}
