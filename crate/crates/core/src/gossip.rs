//! The GML protocol engine.
//!
//! After random initialization every site warms up on its own data. Each
//! round then pairs sites into (sender, receiver) exchanges: the sender's
//! model is copied to the receiver, the receiver trains its local model and
//! the incoming model against each other on its own data (mutual learning
//! with the regional KL loss), and replaces its local model by a weighted
//! average of the two. The updated incoming model is dropped, so one exchange
//! costs exactly one model transfer.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dispatch::Dispatch;
use crate::error::{invalid_config, invalid_input, GmlError, Result};
use crate::eval::mean_dsc;
use crate::losses::MutualLossConfig;
use crate::rng::{self, Purpose, SimRng};
use crate::segcore::{weighted_average, ModelParams};
use crate::synthdata::{Case, SiteDataset};
use crate::train::{init_params, local_training, mutual_step, sample_batch};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairingMode {
    /// Uniform shuffle split into disjoint (sender, receiver) pairs.
    #[default]
    PerfectMatching,
    /// Each site becomes a receiver with probability `p`; receivers draw
    /// senders from the sites that are neither receivers nor already sending.
    ProbabilisticReceiver { p: f64 },
}

/// Gossip schedule and optimizer settings.
///
/// The defaults give every method enough SGD steps to converge on the
/// default synthetic benchmark (the Jaccard loss plateaus early at small
/// learning rates, so a short warm-up stalls).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GossipHyperparams {
    pub warmup_steps: usize,
    pub rounds: usize,
    pub local_steps_per_round: usize,
    pub lr: f64,
    /// Weight of the updated local model in the receiver's merge.
    pub alpha: f64,
    pub loss: MutualLossConfig,
    pub pairing_mode: PairingMode,
    /// Cases per SGD step.
    pub batch: usize,
    /// Whether sites left out of a round's pairing train locally.
    pub idle_local_training: bool,
}

impl Default for GossipHyperparams {
    fn default() -> Self {
        Self {
            warmup_steps: 400,
            rounds: 30,
            local_steps_per_round: 10,
            lr: 0.5,
            alpha: 0.5,
            loss: MutualLossConfig::default(),
            pairing_mode: PairingMode::PerfectMatching,
            batch: 1,
            idle_local_training: true,
        }
    }
}

impl GossipHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(invalid_config("rounds must be positive"));
        }
        if self.local_steps_per_round == 0 {
            return Err(invalid_config("local_steps_per_round must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid_config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid_config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.batch == 0 {
            return Err(invalid_config("batch must be positive"));
        }
        if let PairingMode::ProbabilisticReceiver { p } = self.pairing_mode {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid_config(format!("receiver probability {p} outside [0, 1]")));
            }
        }
        self.loss.validate().map_err(|e| invalid_config(format!("{e}")))
    }
}

/// One round's exchanges as `(sender, receiver)` site ids, plus idle sites.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Pairing {
    pub pairs: Vec<(u32, u32)>,
    pub idle: Vec<u32>,
}

impl Pairing {
    /// No site may appear twice and every pair has distinct endpoints.
    pub fn is_partial_matching(&self) -> bool {
        let mut seen = Vec::new();
        for &(s, r) in &self.pairs {
            if s == r {
                return false;
            }
            seen.push(s);
            seen.push(r);
        }
        seen.extend_from_slice(&self.idle);
        let n = seen.len();
        seen.sort_unstable();
        seen.dedup();
        seen.len() == n
    }
}

pub fn pair_sites(site_ids: &[u32], mode: PairingMode, rng: &mut SimRng) -> Result<Pairing> {
    if site_ids.len() < 2 {
        return Err(invalid_config(format!(
            "pairing needs at least 2 sites, got {}",
            site_ids.len()
        )));
    }
    let mut pairing = Pairing::default();
    match mode {
        PairingMode::PerfectMatching => {
            let mut order = site_ids.to_vec();
            order.shuffle(rng);
            let mut chunks = order.chunks_exact(2);
            pairing.pairs = chunks.by_ref().map(|c| (c[0], c[1])).collect();
            pairing.idle = chunks.remainder().to_vec();
        }
        PairingMode::ProbabilisticReceiver { p } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid_config(format!("receiver probability {p} outside [0, 1]")));
            }
            let receivers: Vec<u32> = site_ids.iter().copied().filter(|_| rng.random_bool(p)).collect();
            let mut senders: Vec<u32> = site_ids
                .iter()
                .copied()
                .filter(|id| !receivers.contains(id))
                .collect();
            for &r in &receivers {
                if senders.is_empty() {
                    break;
                }
                let s = senders.remove(rng.random_range(0..senders.len()));
                pairing.pairs.push((s, r));
            }
            pairing.idle = site_ids
                .iter()
                .copied()
                .filter(|id| !pairing.pairs.iter().any(|&(s, r)| s == *id || r == *id))
                .collect();
        }
    }
    Ok(pairing)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Site(u32),
    Server,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Site(id) => write!(f, "{id}"),
            Endpoint::Server => f.write_str("server"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = GmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "server" => Ok(Endpoint::Server),
            id => id
                .parse()
                .map(Endpoint::Site)
                .map_err(|_| invalid_input(format!("unknown endpoint {id:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    /// A site's model sent to its gossip partner.
    PeerModel,
    /// A FedAvg client upload.
    Upload,
    /// A FedAvg global-model broadcast.
    Broadcast,
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PayloadKind::PeerModel => "peer_model",
            PayloadKind::Upload => "upload",
            PayloadKind::Broadcast => "broadcast",
        })
    }
}

impl FromStr for PayloadKind {
    type Err = GmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "peer_model" => Ok(PayloadKind::PeerModel),
            "upload" => Ok(PayloadKind::Upload),
            "broadcast" => Ok(PayloadKind::Broadcast),
            other => Err(invalid_input(format!("unknown payload kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub round: u64,
    pub from: Endpoint,
    pub to: Endpoint,
    pub kind: PayloadKind,
    pub scalars: u64,
}

/// Append-only log of model transfers.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommunicationLedger {
    records: Vec<TransferRecord>,
}

impl CommunicationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rejects records whose round precedes the last recorded one.
    pub fn record(&mut self, record: TransferRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.round < last.round {
                return Err(invalid_input(format!(
                    "ledger round {} precedes recorded round {}",
                    record.round, last.round
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TransferRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_scalars(&self) -> u64 {
        self.records.iter().map(|r| r.scalars).sum()
    }

    pub fn entries_in_round(&self, round: u64) -> usize {
        self.records.iter().filter(|r| r.round == round).count()
    }
}

/// GML transfer volume divided by FedAvg transfer volume, by scalar count.
pub fn overhead_ratio(gml: &CommunicationLedger, fedavg: &CommunicationLedger) -> Result<f64> {
    let denom = fedavg.total_scalars();
    if denom == 0 {
        return Err(invalid_input("FedAvg ledger is empty"));
    }
    Ok(gml.total_scalars() as f64 / denom as f64)
}

#[derive(Debug, Clone)]
pub struct SiteState<'a> {
    pub site_id: u32,
    pub params: ModelParams,
    pub dataset: &'a SiteDataset,
    pub rng: SimRng,
}

impl<'a> SiteState<'a> {
    /// Weights drawn from `N(0, 0.01)`, bias 0, using the site's training stream.
    pub fn init(dataset: &'a SiteDataset, master_seed: u64) -> Result<Self> {
        let dims = dataset
            .dims()
            .ok_or_else(|| invalid_config(format!("site {} has no cases", dataset.site_id)))?;
        let mut rng = rng::stream(master_seed, Purpose::Training, dataset.site_id);
        let params = init_params(dims.channels, &mut rng);
        Ok(Self {
            site_id: dataset.site_id,
            params,
            dataset,
            rng,
        })
    }

    fn train_cases(&self) -> Vec<&'a Case> {
        self.dataset.train.iter().collect()
    }
}

pub fn init_states<'a>(datasets: &'a [SiteDataset], master_seed: u64) -> Result<Vec<SiteState<'a>>> {
    let mut ids: Vec<u32> = datasets.iter().map(|d| d.site_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != datasets.len() {
        return Err(invalid_config("site ids must be unique"));
    }
    datasets.iter().map(|d| SiteState::init(d, master_seed)).collect()
}

fn check_finite(params: &ModelParams, site: u32, round: u64) -> Result<()> {
    if params.is_finite() {
        Ok(())
    } else {
        Err(GmlError::NonFiniteParams { site, round })
    }
}

/// Local-only Jaccard training of every site for `warmup_steps` steps.
pub fn warmup<D: Dispatch>(states: &mut [SiteState<'_>], hp: &GossipHyperparams, dispatch: &D) -> Result<()> {
    if let Some(s) = states.iter().find(|s| s.dataset.train.is_empty()) {
        return Err(invalid_config(format!("site {} has an empty training split", s.site_id)));
    }
    if hp.warmup_steps == 0 {
        return Ok(());
    }
    let jobs: Vec<_> = states
        .iter()
        .map(|s| (s.site_id, s.params.clone(), s.train_cases(), s.rng.clone()))
        .collect();
    let results = dispatch.map(jobs, |(site, params, cases, mut rng)| {
        let out = local_training(params, &cases, hp.warmup_steps, hp.batch, hp.lr, &mut rng)
            .and_then(|p| check_finite(&p, site, 0).map(|_| p));
        (out, rng)
    });
    for (state, (out, rng)) in states.iter_mut().zip(results) {
        state.params = out?;
        state.rng = rng;
    }
    Ok(())
}

/// Models involved in one exchange, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeOutcome {
    pub sender: u32,
    pub receiver: u32,
    pub updated_local: ModelParams,
    pub updated_incoming: ModelParams,
    pub merged: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundReport {
    pub exchanges: Vec<ExchangeOutcome>,
}

enum Job<'a> {
    Exchange {
        sender: u32,
        local: ModelParams,
        incoming: ModelParams,
        cases: Vec<&'a Case>,
        rng: SimRng,
    },
    Local {
        params: ModelParams,
        cases: Vec<&'a Case>,
        rng: SimRng,
    },
}

enum JobResult {
    Exchange(ExchangeOutcome),
    Local(ModelParams),
}

fn run_exchange(
    receiver: u32,
    sender: u32,
    local: ModelParams,
    incoming: ModelParams,
    cases: &[&Case],
    rng: &mut SimRng,
    hp: &GossipHyperparams,
) -> Result<ExchangeOutcome> {
    if cases.is_empty() {
        return Err(invalid_config(format!("site {receiver} has an empty training split")));
    }
    let (mut w_r, mut w_s) = (local, incoming);
    for _ in 0..hp.local_steps_per_round {
        let batch = sample_batch(cases, hp.batch, rng);
        (w_r, w_s) = mutual_step(&w_r, &w_s, &batch, hp.lr, &hp.loss)?;
    }
    let merged = weighted_average(&w_r, &w_s, hp.alpha)?;
    Ok(ExchangeOutcome {
        sender,
        receiver,
        updated_local: w_r,
        updated_incoming: w_s,
        merged,
    })
}

/// Executes one gossip round over `states`. Ledger entries are written in
/// pairing order before any training is dispatched.
pub fn gml_round<D: Dispatch>(
    states: &mut [SiteState<'_>],
    pairing: &Pairing,
    hp: &GossipHyperparams,
    round: u64,
    ledger: &mut CommunicationLedger,
    dispatch: &D,
) -> Result<RoundReport> {
    if !pairing.is_partial_matching() {
        return Err(invalid_input(format!("pairing {pairing:?} is not a partial matching")));
    }
    let index: BTreeMap<u32, usize> = states.iter().enumerate().map(|(i, s)| (s.site_id, i)).collect();
    let lookup = |id: u32| {
        index
            .get(&id)
            .copied()
            .ok_or_else(|| invalid_input(format!("pairing names unknown site {id}")))
    };

    let mut jobs: Vec<(usize, Job<'_>)> = Vec::new();
    for &(s, r) in &pairing.pairs {
        let (si, ri) = (lookup(s)?, lookup(r)?);
        let snapshot = states[si].params.clone();
        ledger.record(TransferRecord {
            round,
            from: Endpoint::Site(s),
            to: Endpoint::Site(r),
            kind: PayloadKind::PeerModel,
            scalars: snapshot.scalar_count() as u64,
        })?;
        let receiver = &states[ri];
        jobs.push((
            ri,
            Job::Exchange {
                sender: s,
                local: receiver.params.clone(),
                incoming: snapshot,
                cases: receiver.train_cases(),
                rng: receiver.rng.clone(),
            },
        ));
    }
    if hp.idle_local_training {
        for &id in &pairing.idle {
            let i = lookup(id)?;
            let st = &states[i];
            jobs.push((
                i,
                Job::Local {
                    params: st.params.clone(),
                    cases: st.train_cases(),
                    rng: st.rng.clone(),
                },
            ));
        }
    }

    let site_ids: Vec<u32> = states.iter().map(|s| s.site_id).collect();
    let results = dispatch.map(jobs, |(i, job)| {
        let site = site_ids[i];
        let out = match job {
            Job::Exchange {
                sender,
                local,
                incoming,
                cases,
                mut rng,
            } => run_exchange(site, sender, local, incoming, &cases, &mut rng, hp)
                .map(|o| (JobResult::Exchange(o), rng)),
            Job::Local { params, cases, mut rng } => {
                local_training(params, &cases, hp.local_steps_per_round, hp.batch, hp.lr, &mut rng)
                    .map(|p| (JobResult::Local(p), rng))
            }
        };
        (i, out)
    });

    let mut report = RoundReport::default();
    for (i, out) in results {
        let site = states[i].site_id;
        let (result, rng) = out.map_err(|e| match e {
            GmlError::Numeric(_) => GmlError::NonFiniteParams { site, round },
            other => other,
        })?;
        let params = match result {
            JobResult::Exchange(o) => {
                let merged = o.merged.clone();
                report.exchanges.push(o);
                merged
            }
            JobResult::Local(p) => p,
        };
        check_finite(&params, site, round)?;
        states[i].params = params;
        states[i].rng = rng;
    }
    Ok(report)
}

/// Per-round validation score of one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub round: u64,
    pub site: u32,
    pub split: Split,
    pub dsc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = GmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(invalid_input(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmlOutcome {
    /// Final models keyed by site id.
    pub params: BTreeMap<u32, ModelParams>,
    pub history: Vec<HistoryRecord>,
    pub ledger: CommunicationLedger,
}

fn record_history(states: &[SiteState<'_>], round: u64, history: &mut Vec<HistoryRecord>) -> Result<()> {
    for s in states {
        history.push(HistoryRecord {
            round,
            site: s.site_id,
            split: Split::Validation,
            dsc: mean_dsc(&s.params, &s.dataset.validation)?,
        });
    }
    Ok(())
}

/// Warm-up followed by `hp.rounds` gossip rounds. History holds validation
/// DSC after warm-up (round 0) and after every round; rounds are 1-based.
pub fn run_gml<D: Dispatch>(
    datasets: &[SiteDataset],
    hp: &GossipHyperparams,
    master_seed: u64,
    dispatch: &D,
) -> Result<GmlOutcome> {
    hp.validate()?;
    run_gml_rounds(datasets, hp, hp.rounds, master_seed, dispatch)
}

/// [`run_gml`] with an explicit round count, which may be zero.
pub fn run_gml_rounds<D: Dispatch>(
    datasets: &[SiteDataset],
    hp: &GossipHyperparams,
    rounds: usize,
    master_seed: u64,
    dispatch: &D,
) -> Result<GmlOutcome> {
    if datasets.len() < 2 {
        return Err(invalid_config("GML needs at least 2 sites"));
    }
    let mut states = init_states(datasets, master_seed)?;
    warmup(&mut states, hp, dispatch)?;
    let mut history = Vec::new();
    record_history(&states, 0, &mut history)?;

    let ids: Vec<u32> = states.iter().map(|s| s.site_id).collect();
    let mut pairing_rng = rng::stream(master_seed, Purpose::Pairing, 0);
    let mut ledger = CommunicationLedger::new();
    for round in 1..=rounds as u64 {
        let pairing = pair_sites(&ids, hp.pairing_mode, &mut pairing_rng)?;
        gml_round(&mut states, &pairing, hp, round, &mut ledger, dispatch)?;
        record_history(&states, round, &mut history)?;
    }
    Ok(GmlOutcome {
        params: states.into_iter().map(|s| (s.site_id, s.params)).collect(),
        history,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::Sequential;
    use crate::segcore::GridDims;
    use crate::synthdata::{generate_site_dataset, SiteSpec, SplitRule};
    use alloc::vec;

    fn tiny_site(id: u32, seed: u64) -> SiteDataset {
        let spec = SiteSpec {
            site_id: id,
            n_cases: 6,
            feature_shift: vec![0.0, 0.1],
            noise_scale: 0.5,
            tumor_radius_range: (1.0, 1.5),
            grid: GridDims::new(5, 5, 5, 2).unwrap(),
            tumor_contrast: 1.5,
            case_jitter: 0.0,
            split: SplitRule::Proportional,
        };
        generate_site_dataset(&spec, seed).unwrap()
    }

    #[test]
    fn pairing_examples() {
        let mut rng = rng::stream(1, Purpose::Pairing, 0);
        let p = pair_sites(&[4, 9], PairingMode::PerfectMatching, &mut rng).unwrap();
        assert_eq!(p.pairs.len(), 1);
        let (s, r) = p.pairs[0];
        assert_eq!([s.min(r), s.max(r)], [4, 9]);

        for _ in 0..50 {
            let p = pair_sites(&[1, 2, 3, 4], PairingMode::PerfectMatching, &mut rng).unwrap();
            assert_eq!(p.pairs.len(), 2);
            assert!(p.idle.is_empty());
            assert!(p.is_partial_matching());
            let p = pair_sites(&[1, 2, 3, 4, 5], PairingMode::PerfectMatching, &mut rng).unwrap();
            assert_eq!((p.pairs.len(), p.idle.len()), (2, 1));
            assert!(p.is_partial_matching());
        }
        assert!(pair_sites(&[1], PairingMode::PerfectMatching, &mut rng).is_err());
    }

    #[test]
    fn probabilistic_pairing_edges() {
        let mut rng = rng::stream(2, Purpose::Pairing, 0);
        let none = pair_sites(&[1, 2, 3], PairingMode::ProbabilisticReceiver { p: 0.0 }, &mut rng).unwrap();
        assert!(none.pairs.is_empty());
        assert_eq!(none.idle, vec![1, 2, 3]);
        let all = pair_sites(&[1, 2, 3], PairingMode::ProbabilisticReceiver { p: 1.0 }, &mut rng).unwrap();
        assert!(all.pairs.is_empty());
        for _ in 0..100 {
            let p = pair_sites(&[1, 2, 3, 4, 5, 6], PairingMode::ProbabilisticReceiver { p: 0.4 }, &mut rng)
                .unwrap();
            assert!(p.is_partial_matching());
            assert_eq!(p.pairs.len() * 2 + p.idle.len(), 6);
        }
    }

    #[test]
    fn ledger_is_append_only_in_round_order() {
        let mut ledger = CommunicationLedger::new();
        let rec = |round| TransferRecord {
            round,
            from: Endpoint::Site(1),
            to: Endpoint::Site(2),
            kind: PayloadKind::PeerModel,
            scalars: 4,
        };
        ledger.record(rec(1)).unwrap();
        ledger.record(rec(1)).unwrap();
        ledger.record(rec(2)).unwrap();
        assert!(ledger.record(rec(1)).is_err());
        assert_eq!(ledger.len(), 3);
        assert_eq!(ledger.total_scalars(), 12);
        assert!(overhead_ratio(&ledger, &CommunicationLedger::new()).is_err());
    }

    #[test]
    fn zero_warmup_leaves_states() {
        let sites = vec![tiny_site(1, 1), tiny_site(2, 2)];
        let mut states = init_states(&sites, 5).unwrap();
        let before: Vec<_> = states.iter().map(|s| s.params.clone()).collect();
        let hp = GossipHyperparams {
            warmup_steps: 0,
            ..Default::default()
        };
        warmup(&mut states, &hp, &Sequential).unwrap();
        let after: Vec<_> = states.iter().map(|s| s.params.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn identical_sites_warm_up_identically() {
        let a = tiny_site(1, 11);
        let b = SiteDataset {
            site_id: 1,
            ..a.clone()
        };
        let hp = GossipHyperparams {
            warmup_steps: 20,
            ..Default::default()
        };
        let run = |d: &SiteDataset| {
            let mut st = vec![SiteState::init(d, 3).unwrap()];
            warmup(&mut st, &hp, &Sequential).unwrap();
            st[0].params.clone()
        };
        assert_eq!(run(&a), run(&b));
    }

    #[test]
    fn alpha_one_without_steps_keeps_receiver() {
        let sites = vec![tiny_site(1, 1), tiny_site(2, 2)];
        let mut states = init_states(&sites, 5).unwrap();
        let receiver_before = states[1].params.clone();
        let sender_before = states[0].params.clone();
        let hp = GossipHyperparams {
            local_steps_per_round: 0,
            alpha: 1.0,
            ..Default::default()
        };
        let pairing = Pairing {
            pairs: vec![(1, 2)],
            idle: vec![],
        };
        let mut ledger = CommunicationLedger::new();
        gml_round(&mut states, &pairing, &hp, 1, &mut ledger, &Sequential).unwrap();
        assert_eq!(states[1].params, receiver_before);
        assert_eq!(states[0].params, sender_before);
        assert_eq!(ledger.len(), 1);
        assert_eq!(ledger.records()[0].scalars, 3);
    }

    #[test]
    fn equal_models_stay_equal_through_exchange() {
        let sites = vec![tiny_site(1, 1), tiny_site(2, 2)];
        let mut states = init_states(&sites, 5).unwrap();
        states[1].params = states[0].params.clone();
        let hp = GossipHyperparams::default();
        let pairing = Pairing {
            pairs: vec![(1, 2)],
            idle: vec![],
        };
        let mut ledger = CommunicationLedger::new();
        let report = gml_round(&mut states, &pairing, &hp, 1, &mut ledger, &Sequential).unwrap();
        let ex = &report.exchanges[0];
        assert_eq!(ex.updated_local, ex.updated_incoming);
        assert_eq!(ex.merged, ex.updated_local);
    }

    #[test]
    fn zero_rounds_equals_warmup() {
        let sites = vec![tiny_site(1, 1), tiny_site(2, 2)];
        let hp = GossipHyperparams {
            warmup_steps: 15,
            ..Default::default()
        };
        let out = run_gml_rounds(&sites, &hp, 0, 9, &Sequential).unwrap();
        let mut states = init_states(&sites, 9).unwrap();
        warmup(&mut states, &hp, &Sequential).unwrap();
        for s in &states {
            assert_eq!(out.params[&s.site_id], s.params);
        }
        assert!(out.ledger.is_empty());
    }

    #[test]
    fn run_is_deterministic_and_counts_transfers() {
        let sites = vec![tiny_site(1, 1), tiny_site(2, 2), tiny_site(3, 3), tiny_site(4, 4)];
        let hp = GossipHyperparams {
            warmup_steps: 5,
            rounds: 6,
            local_steps_per_round: 3,
            ..Default::default()
        };
        let a = run_gml(&sites, &hp, 77, &Sequential).unwrap();
        let b = run_gml(&sites, &hp, 77, &Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.ledger.len(), 12);
        for r in 1..=6 {
            assert_eq!(a.ledger.entries_in_round(r), 2);
        }
        assert_eq!(a.history.len(), 4 * 7);
    }

    #[test]
    fn hyperparams_validation() {
        assert!(GossipHyperparams::default().validate().is_ok());
        let bad = GossipHyperparams {
            alpha: 2.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = GossipHyperparams {
            pairing_mode: PairingMode::ProbabilisticReceiver { p: -0.1 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
