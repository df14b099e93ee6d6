//! In-memory experiment driver shared by the CLI and the test suites.

use std::collections::BTreeMap;

use gml_core::baselines::{run_fedavg, run_individual, run_pooled, BaselineKind};
use gml_core::eval::{evaluate, EvalReport, Method, ReportMetadata, TrainedModels};
use gml_core::gossip::{overhead_ratio, run_gml, CommunicationLedger, HistoryRecord};
use gml_core::synthdata::{generate_site_dataset, SiteDataset};
use gml_core::{Dispatch, GmlError, ModelParams};

use crate::config::ExperimentConfig;

/// DSC convention recorded in every report header.
pub const EMPTY_DSC_NOTE: &str = "1 (prediction and truth both empty)";

pub fn generate_datasets<D: Dispatch>(cfg: &ExperimentConfig, dispatch: &D) -> Result<Vec<SiteDataset>, GmlError> {
    let jobs: Vec<_> = cfg.sites.iter().map(|s| (s, cfg.data_seed(s.site_id))).collect();
    dispatch
        .map(jobs, |(spec, seed)| generate_site_dataset(spec, seed))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum MethodModels {
    Global(ModelParams),
    PerSite(BTreeMap<u32, ModelParams>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub method: Method,
    pub models: MethodModels,
    pub ledger: CommunicationLedger,
    pub history: Vec<HistoryRecord>,
}

pub fn train_method<D: Dispatch>(
    cfg: &ExperimentConfig,
    datasets: &[SiteDataset],
    method: Method,
    dispatch: &D,
) -> Result<MethodRun, GmlError> {
    let mut ledger = CommunicationLedger::new();
    let mut history = Vec::new();
    let models = match method {
        Method::Gml => {
            let out = run_gml(datasets, &cfg.gossip, cfg.master_seed, dispatch)?;
            ledger = out.ledger;
            history = out.history;
            MethodModels::PerSite(out.params)
        }
        Method::FedAvg => MethodModels::Global(run_fedavg(
            datasets,
            &cfg.baseline(BaselineKind::FedAvg),
            &mut ledger,
            dispatch,
        )?),
        Method::Pooled => MethodModels::Global(run_pooled(datasets, &cfg.baseline(BaselineKind::Pooled))?),
        Method::Individual => {
            let bc = cfg.baseline(BaselineKind::Individual);
            let trained = dispatch.map(datasets.iter().collect(), |d| {
                run_individual(d, &bc).map(|p| (d.site_id, p))
            });
            MethodModels::PerSite(trained.into_iter().collect::<Result<_, _>>()?)
        }
    };
    Ok(MethodRun {
        method,
        models,
        ledger,
        history,
    })
}

pub fn collect_models(runs: &[MethodRun]) -> Result<TrainedModels, GmlError> {
    let mut models = TrainedModels::default();
    for run in runs {
        match (&run.models, run.method) {
            (MethodModels::Global(p), Method::Pooled) => models.pooled = Some(p.clone()),
            (MethodModels::Global(p), Method::FedAvg) => models.fedavg = Some(p.clone()),
            (MethodModels::PerSite(m), Method::Individual) => models.individual = Some(m.clone()),
            (MethodModels::PerSite(m), Method::Gml) => models.gml = Some(m.clone()),
            (_, method) => return Err(GmlError::InvalidInput(format!("unexpected model layout for {method}"))),
        }
    }
    Ok(models)
}

pub fn metadata(cfg: &ExperimentConfig) -> ReportMetadata {
    ReportMetadata {
        master_seed: cfg.master_seed,
        config_hash: cfg.hash(),
        empty_dsc: EMPTY_DSC_NOTE.to_owned(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub runs: Vec<MethodRun>,
    pub report: EvalReport,
    /// GML over FedAvg transfer volume, when both ran.
    pub overhead: Option<f64>,
}

impl ExperimentOutcome {
    pub fn run(&self, method: Method) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method)
    }
}

/// Generates data, trains every configured method and evaluates them.
pub fn run_experiment<D: Dispatch>(cfg: &ExperimentConfig, dispatch: &D) -> Result<ExperimentOutcome, GmlError> {
    let datasets = generate_datasets(cfg, dispatch)?;
    run_on_datasets(cfg, &datasets, dispatch)
}

pub fn run_on_datasets<D: Dispatch>(
    cfg: &ExperimentConfig,
    datasets: &[SiteDataset],
    dispatch: &D,
) -> Result<ExperimentOutcome, GmlError> {
    let runs = cfg
        .methods
        .iter()
        .map(|&m| train_method(cfg, datasets, m, dispatch))
        .collect::<Result<Vec<_>, _>>()?;
    let models = collect_models(&runs)?;
    let report = evaluate(&models, datasets, &cfg.methods, metadata(cfg))?;
    let ledger_of = |m| runs.iter().find(|r| r.method == m).map(|r| &r.ledger);
    let overhead = match (ledger_of(Method::Gml), ledger_of(Method::FedAvg)) {
        (Some(g), Some(f)) => Some(overhead_ratio(g, f)?),
        _ => None,
    };
    Ok(ExperimentOutcome { runs, report, overhead })
}
