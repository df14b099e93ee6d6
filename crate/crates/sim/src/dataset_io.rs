//! On-disk site datasets.
//!
//! A dataset is a directory:
//!
//! ```text
//! <dir>/manifest.json        versioned JSON manifest
//! <dir>/cases/<case_id>.bin  one blob per case
//! ```
//!
//! The manifest records the format name and version, the site id, the
//! generation seed, the grid dimensions and, for every case in split order
//! (train, validation, test), its id, split, blob path and blob length.
//!
//! A blob holds `channels * voxels` little-endian IEEE-754 `f32` features in
//! `[channel, depth, height, width]` order, followed by `voxels` mask bytes
//! (0 or 1) in `[depth, height, width]` order. There is no header or padding.

use std::fs;
use std::path::{Component, Path, PathBuf};

use gml_core::synthdata::{Case, SiteDataset};
use gml_core::{FeatureVolume, GmlError, GridDims, Mask};
use serde::{Deserialize, Serialize};

pub const DATASET_FORMAT: &str = "gml-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const CASE_DIR: &str = "cases";

#[derive(Debug, thiserror::Error)]
pub enum DatasetIoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: bad `{field}`: {detail}", file.display())]
    Format {
        file: PathBuf,
        field: String,
        detail: String,
    },
    #[error("{}: dataset format version {found} is not supported (expected {DATASET_VERSION})", file.display())]
    Version { file: PathBuf, found: u64 },
    #[error("refusing to save dataset: {0}")]
    Invalid(#[from] GmlError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetIoError + '_ {
    move |source| DatasetIoError::Io {
        path: path.to_owned(),
        source,
    }
}

fn format_err(file: &Path, field: impl Into<String>, detail: impl Into<String>) -> DatasetIoError {
    DatasetIoError::Format {
        file: file.to_owned(),
        field: field.into(),
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub case_id: String,
    pub split: SplitName,
    /// Blob path relative to the dataset directory.
    pub blob: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub format_version: u32,
    pub site_id: u32,
    pub seed: u64,
    pub dims: GridDims,
    pub cases: Vec<CaseEntry>,
}

/// Size in bytes of one case blob.
pub fn blob_len(dims: &GridDims) -> usize {
    dims.voxels() * (4 * dims.channels + 1)
}

pub fn encode_case(case: &Case) -> Vec<u8> {
    let values = case.volume.values();
    let bits = case.truth.bits();
    let mut out = Vec::with_capacity(4 * values.len() + bits.len());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(bits);
    out
}

pub fn decode_case(case_id: &str, dims: GridDims, bytes: &[u8], file: &Path) -> Result<Case, DatasetIoError> {
    let expected = blob_len(&dims);
    if bytes.len() != expected {
        return Err(format_err(
            file,
            "length",
            format!("blob holds {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let (features, mask) = bytes.split_at(4 * dims.channels * dims.voxels());
    let values: Vec<f32> = features
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let volume = FeatureVolume::new(dims, values).map_err(|e| format_err(file, "features", e.to_string()))?;
    let truth = Mask::new(dims, mask.to_vec()).map_err(|e| format_err(file, "mask", e.to_string()))?;
    Ok(Case {
        case_id: case_id.to_owned(),
        volume,
        truth,
    })
}

fn check_case_id(id: &str) -> Result<(), GmlError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(GmlError::InvalidInput(format!("case id {id:?} is not usable as a file name")))
    }
}

fn splits(ds: &SiteDataset) -> [(SplitName, &[Case]); 3] {
    [
        (SplitName::Train, &ds.train),
        (SplitName::Validation, &ds.validation),
        (SplitName::Test, &ds.test),
    ]
}

pub fn manifest_for(ds: &SiteDataset) -> Result<Manifest, GmlError> {
    ds.validate()?;
    let dims = ds.dims().expect("validated dataset has cases");
    let mut cases = Vec::with_capacity(ds.n_cases());
    for (split, list) in splits(ds) {
        for case in list {
            check_case_id(&case.case_id)?;
            cases.push(CaseEntry {
                case_id: case.case_id.clone(),
                split,
                blob: format!("{CASE_DIR}/{}.bin", case.case_id),
                bytes: blob_len(&dims) as u64,
            });
        }
    }
    Ok(Manifest {
        format: DATASET_FORMAT.to_owned(),
        format_version: DATASET_VERSION,
        site_id: ds.site_id,
        seed: ds.seed,
        dims,
        cases,
    })
}

pub fn manifest_text(manifest: &Manifest) -> String {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    text
}

/// Writes `ds` under `dir`, creating it if needed. The dataset is validated
/// before anything touches the file system; the manifest is written last.
pub fn save_dataset(ds: &SiteDataset, dir: &Path) -> Result<(), DatasetIoError> {
    let manifest = manifest_for(ds)?;
    let case_dir = dir.join(CASE_DIR);
    fs::create_dir_all(&case_dir).map_err(io_err(&case_dir))?;
    for (entry, case) in manifest.cases.iter().zip(ds.all_cases()) {
        let path = dir.join(&entry.blob);
        fs::write(&path, encode_case(case)).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest_text(&manifest)).map_err(io_err(&path))
}

fn parse_manifest(text: &str, file: &Path) -> Result<Manifest, DatasetIoError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format_err(file, "manifest", e.to_string()))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(DATASET_FORMAT) => {}
        Some(other) => return Err(format_err(file, "format", format!("unknown format {other:?}"))),
        None => return Err(format_err(file, "format", "missing or not a string")),
    }
    match value.get("format_version").map(|v| v.as_u64()) {
        Some(Some(v)) if v == u64::from(DATASET_VERSION) => {}
        Some(Some(found)) => {
            return Err(DatasetIoError::Version {
                file: file.to_owned(),
                found,
            })
        }
        _ => return Err(format_err(file, "format_version", "missing or not an unsigned integer")),
    }
    serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        let field = msg.split('`').nth(1).unwrap_or("manifest").to_owned();
        format_err(file, field, msg)
    })
}

fn blob_path(dir: &Path, blob: &str, file: &Path) -> Result<PathBuf, DatasetIoError> {
    let rel = Path::new(blob);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(format_err(file, "blob", format!("{blob:?} escapes the dataset directory")));
    }
    Ok(dir.join(rel))
}

pub fn load_dataset(dir: &Path) -> Result<SiteDataset, DatasetIoError> {
    let file = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&file).map_err(io_err(&file))?;
    let manifest = parse_manifest(&text, &file)?;
    let dims = manifest.dims;
    dims.validate().map_err(|e| format_err(&file, "dims", e.to_string()))?;

    let mut ds = SiteDataset {
        site_id: manifest.site_id,
        seed: manifest.seed,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for entry in &manifest.cases {
        if entry.bytes != blob_len(&dims) as u64 {
            return Err(format_err(
                &file,
                "bytes",
                format!("case {} lists {} bytes, dims need {}", entry.case_id, entry.bytes, blob_len(&dims)),
            ));
        }
        let path = blob_path(dir, &entry.blob, &file)?;
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let case = decode_case(&entry.case_id, dims, &bytes, &path)?;
        match entry.split {
            SplitName::Train => ds.train.push(case),
            SplitName::Validation => ds.validation.push(case),
            SplitName::Test => ds.test.push(case),
        }
    }
    ds.validate().map_err(|e| format_err(&file, "cases", e.to_string()))?;
    Ok(ds)
}
