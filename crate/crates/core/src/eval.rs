//! Dice scores, ensembles and the per-method evaluation report.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, GmlError, Result};
use crate::segcore::{binarize, check_grid, predict, FeatureVolume, Mask, ModelParams, ProbField};
use crate::synthdata::{Case, SiteDataset};

/// `2|A and B| / (|A| + |B|)`; two empty masks score 1.
pub fn dsc(pred: &Mask, truth: &Mask) -> Result<f64> {
    check_grid(&pred.dims(), &truth.dims())?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&a, &b) in pred.bits().iter().zip(truth.bits()) {
        inter += (a & b) as usize;
        total += (a + b) as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Per-case DSC averaged over `cases`, thresholding at 0.5.
pub fn mean_dsc(params: &ModelParams, cases: &[Case]) -> Result<f64> {
    if cases.is_empty() {
        return Err(invalid_input("no cases to evaluate"));
    }
    let mut total = 0.0;
    for case in cases {
        let mask = binarize(&predict(params, &case.volume)?, 0.5)?;
        total += dsc(&mask, &case.truth)?;
    }
    Ok(total / cases.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleVote {
    /// Threshold the mean probability field.
    #[default]
    SoftMean,
    /// A voxel is tumor when more than half of the model masks say so.
    Majority,
}

pub fn ensemble_predict(models: &[ModelParams], volume: &FeatureVolume, threshold: f64) -> Result<Mask> {
    ensemble_predict_with(models, volume, threshold, EnsembleVote::SoftMean)
}

pub fn ensemble_predict_with(
    models: &[ModelParams],
    volume: &FeatureVolume,
    threshold: f64,
    vote: EnsembleVote,
) -> Result<Mask> {
    if models.is_empty() {
        return Err(invalid_input("ensemble needs at least one model"));
    }
    let fields = models
        .iter()
        .map(|m| predict(m, volume))
        .collect::<Result<Vec<_>>>()?;
    match vote {
        EnsembleVote::SoftMean => binarize(&ProbField::mean(&fields)?, threshold),
        EnsembleVote::Majority => {
            let masks = fields
                .iter()
                .map(|f| binarize(f, threshold))
                .collect::<Result<Vec<_>>>()?;
            let dims = masks[0].dims();
            let bits = (0..dims.voxels())
                .map(|v| {
                    let votes: usize = masks.iter().map(|m| m.bits()[v] as usize).sum();
                    u8::from(2 * votes > masks.len())
                })
                .collect();
            Mask::new(dims, bits)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pooled,
    #[serde(rename = "fedavg")]
    FedAvg,
    Individual,
    Gml,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pooled, Method::FedAvg, Method::Individual, Method::Gml];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Pooled => "PM",
            Method::FedAvg => "FedAvg",
            Method::Individual => "IM",
            Method::Gml => "GML",
        }
    }

    /// Whether the method keeps one model per site.
    pub fn site_specific(&self) -> bool {
        matches!(self, Method::Individual | Method::Gml)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pooled => "pooled",
            Method::FedAvg => "fedavg",
            Method::Individual => "individual",
            Method::Gml => "gml",
        })
    }
}

/// Trained models per method. Global methods hold one model, site-specific
/// methods one per site id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainedModels {
    pub pooled: Option<ModelParams>,
    pub fedavg: Option<ModelParams>,
    pub individual: Option<BTreeMap<u32, ModelParams>>,
    pub gml: Option<BTreeMap<u32, ModelParams>>,
}

impl TrainedModels {
    fn global(&self, method: Method) -> Option<&ModelParams> {
        match method {
            Method::Pooled => self.pooled.as_ref(),
            Method::FedAvg => self.fedavg.as_ref(),
            _ => None,
        }
    }

    fn per_site(&self, method: Method) -> Option<&BTreeMap<u32, ModelParams>> {
        match method {
            Method::Individual => self.individual.as_ref(),
            Method::Gml => self.gml.as_ref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub master_seed: u64,
    pub config_hash: String,
    /// DSC assigned when prediction and truth are both empty.
    pub empty_dsc: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    /// site id -> method -> mean test DSC of the model used at that site.
    pub per_site: BTreeMap<u32, BTreeMap<Method, f64>>,
    /// method -> mean test DSC over the union of all test splits.
    pub combined: BTreeMap<Method, f64>,
    pub metadata: ReportMetadata,
}

fn missing(method: Method, cell: &str) -> GmlError {
    GmlError::MissingModel(format!("{method} ({cell})"))
}

/// Local and combined test evaluation.
///
/// Per site, global methods apply their single model and site-specific
/// methods apply that site's own model. The combined score covers PM,
/// FedAvg and the GML ensemble (soft vote over all site models).
pub fn evaluate(
    models: &TrainedModels,
    datasets: &[SiteDataset],
    methods: &[Method],
    metadata: ReportMetadata,
) -> Result<EvalReport> {
    let mut report = EvalReport {
        metadata,
        ..Default::default()
    };
    for &method in methods {
        for ds in datasets {
            let model = if method.site_specific() {
                models
                    .per_site(method)
                    .ok_or_else(|| missing(method, "all sites"))?
                    .get(&ds.site_id)
                    .ok_or_else(|| missing(method, &format!("site {}", ds.site_id)))?
            } else {
                models.global(method).ok_or_else(|| missing(method, "global model"))?
            };
            let score = mean_dsc(model, &ds.test)?;
            report.per_site.entry(ds.site_id).or_default().insert(method, score);
        }

        let combined_models: Vec<ModelParams> = match method {
            Method::Pooled | Method::FedAvg => alloc::vec![models
                .global(method)
                .ok_or_else(|| missing(method, "global model"))?
                .clone()],
            Method::Gml => models
                .per_site(method)
                .ok_or_else(|| missing(method, "ensemble"))?
                .values()
                .cloned()
                .collect(),
            Method::Individual => continue,
        };
        let mut total = 0.0;
        let mut n = 0usize;
        for case in datasets.iter().flat_map(|d| &d.test) {
            let mask = ensemble_predict(&combined_models, &case.volume, 0.5)?;
            total += dsc(&mask, &case.truth)?;
            n += 1;
        }
        if n == 0 {
            return Err(invalid_input("no test cases"));
        }
        report.combined.insert(method, total / n as f64);
    }
    Ok(report)
}
