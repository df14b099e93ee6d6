//! Pooled, individual and FedAvg trainers.
//!
//! All three use the same model, loss (Jaccard distance) and SGD settings as
//! the gossip sites so that differences come from the protocol alone.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dispatch::Dispatch;
use crate::error::{invalid_config, GmlError, Result};
use crate::gossip::{CommunicationLedger, Endpoint, PayloadKind, TransferRecord};
use crate::rng::{self, Purpose, FEDAVG_STREAM};
use crate::segcore::ModelParams;
use crate::synthdata::{Case, SiteDataset};
use crate::train::{init_params, local_training};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Pooled,
    Individual,
    FedAvg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Extra local steps before the first round, mirroring GML warm-up.
    /// FedAvg sites spend them inside round 1.
    pub warmup_steps: usize,
    pub rounds: usize,
    pub local_steps_per_round: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_steps_per_round == 0 || self.batch == 0 {
            return Err(invalid_config("local_steps_per_round and batch must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid_config(format!("lr {} must be positive", self.lr)));
        }
        Ok(())
    }

    fn total_steps(&self) -> usize {
        self.warmup_steps + self.rounds * self.local_steps_per_round
    }
}

fn channels(site: &SiteDataset) -> Result<usize> {
    site.dims()
        .map(|d| d.channels)
        .ok_or_else(|| invalid_config(format!("site {} has no cases", site.site_id)))
}

fn nonempty_train(site: &SiteDataset) -> Result<()> {
    if site.train.is_empty() {
        Err(invalid_config(format!("site {} has an empty training split", site.site_id)))
    } else {
        Ok(())
    }
}

/// One model trained on the union of every site's training split.
///
/// It is initialized and sampled from the first site's training stream, so a
/// single-site pooled run coincides with [`run_individual`].
pub fn run_pooled(sites: &[SiteDataset], cfg: &BaselineConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let first = sites.first().ok_or_else(|| invalid_config("pooled training needs a site"))?;
    let cases: Vec<&Case> = sites.iter().flat_map(|s| &s.train).collect();
    if cases.is_empty() {
        return Err(invalid_config("pooled training data is empty"));
    }
    let c = channels(first)?;
    if let Some(s) = sites.iter().find(|s| s.dims().map(|d| d.channels) != Some(c)) {
        return Err(invalid_config(format!("site {} has a different channel count", s.site_id)));
    }
    let mut rng = rng::stream(cfg.seed, Purpose::Training, first.site_id);
    let params = init_params(c, &mut rng);
    local_training(params, &cases, cfg.total_steps(), cfg.batch, cfg.lr, &mut rng)
}

/// Local training on one site's data with no exchange. Shares the site's
/// initialization stream with the gossip runs.
pub fn run_individual(site: &SiteDataset, cfg: &BaselineConfig) -> Result<ModelParams> {
    cfg.validate()?;
    nonempty_train(site)?;
    let mut rng = rng::stream(cfg.seed, Purpose::Training, site.site_id);
    let params = init_params(channels(site)?, &mut rng);
    let cases: Vec<&Case> = site.train.iter().collect();
    local_training(params, &cases, cfg.total_steps(), cfg.batch, cfg.lr, &mut rng)
}

/// `sum_k (n_k / n) * W_k`, with `n_k` the training-set size of site `k`.
pub fn fedavg_aggregate(models: &[(usize, ModelParams)]) -> Result<ModelParams> {
    let total: usize = models.iter().map(|(n, _)| n).sum();
    let (_, first) = models.first().ok_or_else(|| invalid_config("nothing to aggregate"))?;
    if total == 0 {
        return Err(invalid_config("aggregation weights sum to zero"));
    }
    let mut acc = ModelParams::zeros(first.channels());
    for (n, m) in models {
        if m.channels() != acc.channels() {
            return Err(GmlError::InvalidInput("uploaded models differ in shape".into()));
        }
        let w = *n as f64 / total as f64;
        for (a, x) in acc.weights.iter_mut().zip(&m.weights) {
            *a += w * x;
        }
        acc.bias += w * m.bias;
    }
    Ok(acc)
}

/// Federated averaging with an in-process server. Every round writes one
/// upload and one broadcast record per site.
pub fn run_fedavg<D: Dispatch>(
    sites: &[SiteDataset],
    cfg: &BaselineConfig,
    ledger: &mut CommunicationLedger,
    dispatch: &D,
) -> Result<ModelParams> {
    cfg.validate()?;
    if sites.len() < 2 {
        return Err(invalid_config("FedAvg needs at least 2 sites"));
    }
    for s in sites {
        nonempty_train(s)?;
    }
    let c = channels(&sites[0])?;
    let mut global = init_params(c, &mut rng::stream(cfg.seed, Purpose::Central, FEDAVG_STREAM));
    let mut rngs: Vec<_> = sites
        .iter()
        .map(|s| rng::stream(cfg.seed, Purpose::Training, s.site_id))
        .collect();

    for round in 1..=cfg.rounds as u64 {
        let steps = cfg.local_steps_per_round + if round == 1 { cfg.warmup_steps } else { 0 };
        let jobs: Vec<_> = sites
            .iter()
            .zip(rngs.iter().cloned())
            .map(|(s, r)| (s, global.clone(), r))
            .collect();
        let results = dispatch.map(jobs, |(site, params, mut r)| {
            let cases: Vec<&Case> = site.train.iter().collect();
            let out = local_training(params, &cases, steps, cfg.batch, cfg.lr, &mut r);
            (out, r)
        });
        let mut uploads = Vec::with_capacity(sites.len());
        for ((site, (out, r)), slot) in sites.iter().zip(results).zip(rngs.iter_mut()) {
            let params = out.map_err(|e| match e {
                GmlError::Numeric(_) => GmlError::NonFiniteParams {
                    site: site.site_id,
                    round,
                },
                other => other,
            })?;
            *slot = r;
            ledger.record(TransferRecord {
                round,
                from: Endpoint::Site(site.site_id),
                to: Endpoint::Server,
                kind: PayloadKind::Upload,
                scalars: params.scalar_count() as u64,
            })?;
            uploads.push((site.train.len(), params));
        }
        global = fedavg_aggregate(&uploads)?;
        for site in sites {
            ledger.record(TransferRecord {
                round,
                from: Endpoint::Server,
                to: Endpoint::Site(site.site_id),
                kind: PayloadKind::Broadcast,
                scalars: global.scalar_count() as u64,
            })?;
        }
    }
    Ok(global)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::Sequential;
    use crate::segcore::GridDims;
    use crate::synthdata::{generate_site_dataset, SiteSpec, SplitRule};
    use alloc::vec;

    fn site(id: u32, seed: u64) -> SiteDataset {
        let spec = SiteSpec {
            site_id: id,
            n_cases: 5,
            feature_shift: vec![0.2],
            noise_scale: 0.5,
            tumor_radius_range: (1.0, 1.5),
            grid: GridDims::new(5, 5, 5, 1).unwrap(),
            tumor_contrast: 1.5,
            case_jitter: 0.0,
            split: SplitRule::Proportional,
        };
        generate_site_dataset(&spec, seed).unwrap()
    }

    fn cfg(kind: BaselineKind, rounds: usize) -> BaselineConfig {
        BaselineConfig {
            kind,
            warmup_steps: 4,
            rounds,
            local_steps_per_round: 3,
            lr: 0.05,
            batch: 1,
            seed: 8,
        }
    }

    #[test]
    fn single_site_pooled_equals_individual() {
        let s = site(3, 1);
        let c = cfg(BaselineKind::Pooled, 5);
        assert_eq!(run_pooled(core::slice::from_ref(&s), &c).unwrap(), run_individual(&s, &c).unwrap());
    }

    #[test]
    fn zero_rounds_no_warmup_returns_init() {
        let s = site(3, 1);
        let mut c = cfg(BaselineKind::Pooled, 0);
        c.warmup_steps = 0;
        let got = run_pooled(core::slice::from_ref(&s), &c).unwrap();
        let expected = init_params(1, &mut rng::stream(8, Purpose::Training, 3));
        assert_eq!(got, expected);
    }

    #[test]
    fn fedavg_counts_and_weights() {
        let sites = vec![site(1, 1), site(2, 2), site(3, 3), site(4, 4)];
        let mut ledger = CommunicationLedger::new();
        run_fedavg(&sites, &cfg(BaselineKind::FedAvg, 5), &mut ledger, &Sequential).unwrap();
        assert_eq!(ledger.len(), 40);
        for r in 1..=5 {
            assert_eq!(ledger.entries_in_round(r), 8);
        }

        let a = ModelParams::new(vec![1.0, 3.0], 2.0).unwrap();
        let b = ModelParams::new(vec![3.0, -1.0], 0.0).unwrap();
        let mean = fedavg_aggregate(&[(7, a.clone()), (7, b)]).unwrap();
        assert_eq!(mean, ModelParams::new(vec![2.0, 1.0], 1.0).unwrap());
        let same = fedavg_aggregate(&[(3, a.clone()), (11, a.clone())]).unwrap();
        for (x, y) in same.to_flat().iter().zip(a.to_flat()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn baselines_reject_bad_input() {
        assert!(run_pooled(&[], &cfg(BaselineKind::Pooled, 1)).is_err());
        let mut s = site(1, 1);
        s.train.clear();
        assert!(run_individual(&s, &cfg(BaselineKind::Individual, 1)).is_err());
        let mut ledger = CommunicationLedger::new();
        assert!(run_fedavg(&[site(1, 1)], &cfg(BaselineKind::FedAvg, 1), &mut ledger, &Sequential).is_err());
    }
}
