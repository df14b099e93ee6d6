//! File layout of an experiment's output root and loading/saving of every
//! artifact in it.
//!
//! ```text
//! <root>/data/site<id>/            one dataset directory per site
//! <root>/models/<method>/model.json      global model (pooled, fedavg)
//! <root>/models/<method>/site<id>.json   site models (individual, gml)
//! <root>/models/<method>/ledger.csv      transfers of the training run
//! <root>/models/<method>/history.csv     per-round validation DSC (gml)
//! <root>/report/report.{json,txt}        evaluation report
//! <root>/report/config.toml              effective config of the report
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use gml_core::eval::{Method, TrainedModels};
use gml_core::gossip::CommunicationLedger;
use gml_core::synthdata::SiteDataset;
use gml_core::ModelParams;

use crate::dataset_io::{load_dataset, save_dataset, DatasetIoError, MANIFEST_FILE};
use crate::experiment::{MethodModels, MethodRun};
use crate::exports::{
    read_ledger_csv, read_model, write_history_csv, write_ledger_csv, write_model, ExportError, ModelFile,
};
use crate::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{0}")]
    Missing(MissingArtifacts),
    #[error(transparent)]
    Dataset(#[from] DatasetIoError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("{0}")]
    Stale(String),
    #[error("cannot create {}: {source}", path.display())]
    CreateDir { path: PathBuf, source: std::io::Error },
}

/// Every required file that does not exist, with what it should contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingArtifacts(pub Vec<(String, PathBuf)>);

impl fmt::Display for MissingArtifacts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing artifacts:")?;
        for (what, path) in &self.0 {
            write!(f, "\n  {what}: {}", path.display())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data_dir(&self, site: u32) -> PathBuf {
        self.root.join("data").join(format!("site{site}"))
    }

    pub fn method_dir(&self, method: Method) -> PathBuf {
        self.root.join("models").join(method.to_string())
    }

    pub fn model_path(&self, method: Method, site: Option<u32>) -> PathBuf {
        self.method_dir(method).join(match site {
            Some(s) => format!("site{s}.json"),
            None => "model.json".to_owned(),
        })
    }

    pub fn ledger_path(&self, method: Method) -> PathBuf {
        self.method_dir(method).join("ledger.csv")
    }

    pub fn history_path(&self, method: Method) -> PathBuf {
        self.method_dir(method).join("history.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn create_dir(path: &Path) -> Result<(), ArtifactError> {
    std::fs::create_dir_all(path).map_err(|source| ArtifactError::CreateDir {
        path: path.to_owned(),
        source,
    })
}

fn missing_or<T>(
    missing: Vec<(String, PathBuf)>,
    ok: impl FnOnce() -> Result<T, ArtifactError>,
) -> Result<T, ArtifactError> {
    if missing.is_empty() {
        ok()
    } else {
        Err(ArtifactError::Missing(MissingArtifacts(missing)))
    }
}

pub fn save_datasets(layout: &Layout, datasets: &[SiteDataset]) -> Result<(), ArtifactError> {
    for ds in datasets {
        save_dataset(ds, &layout.data_dir(ds.site_id))?;
    }
    Ok(())
}

/// Loads the dataset of every configured site and checks it was generated
/// with the seed the config derives for that site.
pub fn load_datasets(layout: &Layout, cfg: &ExperimentConfig) -> Result<Vec<SiteDataset>, ArtifactError> {
    let missing: Vec<_> = cfg
        .sites
        .iter()
        .map(|s| (s.site_id, layout.data_dir(s.site_id).join(MANIFEST_FILE)))
        .filter(|(_, p)| !p.is_file())
        .map(|(id, p)| (format!("dataset of site {id}"), p))
        .collect();
    missing_or(missing, || {
        cfg.sites
            .iter()
            .map(|spec| {
                let ds = load_dataset(&layout.data_dir(spec.site_id))?;
                let expected = cfg.data_seed(spec.site_id);
                if ds.site_id != spec.site_id || ds.seed != expected {
                    return Err(ArtifactError::Stale(format!(
                        "dataset in {} does not match the config (site {} seed {}, expected site {} seed {expected}); rerun generate-data",
                        layout.data_dir(spec.site_id).display(),
                        ds.site_id,
                        ds.seed,
                        spec.site_id
                    )));
                }
                Ok(ds)
            })
            .collect()
    })
}

pub fn save_run(layout: &Layout, run: &MethodRun) -> Result<(), ArtifactError> {
    let dir = layout.method_dir(run.method);
    create_dir(&dir)?;
    match &run.models {
        MethodModels::Global(p) => write_model(&ModelFile::new(run.method, None, p.clone()), &layout.model_path(run.method, None))?,
        MethodModels::PerSite(models) => {
            for (&site, p) in models {
                write_model(
                    &ModelFile::new(run.method, Some(site), p.clone()),
                    &layout.model_path(run.method, Some(site)),
                )?;
            }
        }
    }
    write_ledger_csv(&run.ledger, &layout.ledger_path(run.method))?;
    if run.method == Method::Gml {
        write_history_csv(&run.history, &layout.history_path(run.method))?;
    }
    Ok(())
}

fn model_paths(layout: &Layout, method: Method, sites: &[u32]) -> Vec<(Option<u32>, PathBuf)> {
    if method.site_specific() {
        sites
            .iter()
            .map(|&s| (Some(s), layout.model_path(method, Some(s))))
            .collect()
    } else {
        vec![(None, layout.model_path(method, None))]
    }
}

fn load_one(path: &Path, method: Method, site: Option<u32>) -> Result<ModelParams, ArtifactError> {
    let file = read_model(path)?;
    if file.method != method || file.site != site {
        return Err(ArtifactError::Stale(format!(
            "{} holds a {} model for site {:?}, expected {method} for site {site:?}",
            path.display(),
            file.method,
            file.site
        )));
    }
    Ok(file.params)
}

/// Trained models plus the ledgers found next to them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedModels {
    pub models: TrainedModels,
    pub ledgers: BTreeMap<Method, CommunicationLedger>,
}

/// Loads the models of `methods` for `sites`. Every absent model file is
/// reported at once; ledgers are optional.
pub fn load_models(layout: &Layout, methods: &[Method], sites: &[u32]) -> Result<LoadedModels, ArtifactError> {
    let missing: Vec<_> = methods
        .iter()
        .flat_map(|&m| {
            model_paths(layout, m, sites).into_iter().map(move |(site, p)| {
                let what = match site {
                    Some(s) => format!("{m} model of site {s}"),
                    None => format!("{m} model"),
                };
                (what, p)
            })
        })
        .filter(|(_, p)| !p.is_file())
        .collect();
    missing_or(missing, || {
        let mut out = LoadedModels::default();
        for &method in methods {
            let paths = model_paths(layout, method, sites);
            if method.site_specific() {
                let per_site = paths
                    .into_iter()
                    .map(|(site, p)| Ok((site.expect("site model"), load_one(&p, method, site)?)))
                    .collect::<Result<BTreeMap<_, _>, ArtifactError>>()?;
                match method {
                    Method::Individual => out.models.individual = Some(per_site),
                    _ => out.models.gml = Some(per_site),
                }
            } else {
                let params = load_one(&paths[0].1, method, None)?;
                match method {
                    Method::Pooled => out.models.pooled = Some(params),
                    _ => out.models.fedavg = Some(params),
                }
            }
            let ledger = layout.ledger_path(method);
            if ledger.is_file() {
                out.ledgers.insert(method, read_ledger_csv(&ledger)?);
            }
        }
        Ok(out)
    })
}
