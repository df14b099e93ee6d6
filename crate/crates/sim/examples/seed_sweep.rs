//! Runs the configured experiment over several master seeds and prints the
//! per-site GML vs IM comparison and the combined scores.
//!
//! Usage: cargo run --release -p gml-sim --example seed_sweep -- [config.toml] [n_seeds]

use gml_core::eval::Method;
use gml_sim::experiment::run_experiment;
use gml_sim::{ExperimentConfig, Rayon};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let base = match args.first().filter(|a| a.ends_with(".toml")) {
        Some(p) => ExperimentConfig::load(p.as_ref())?,
        None => ExperimentConfig::default(),
    };
    let n: u64 = args.iter().find_map(|a| a.parse().ok()).unwrap_or(10);
    let pool = Rayon::new(0)?;
    let (mut wins, mut gap) = (0, 0.0);
    let seed0: u64 = std::env::var("SEED0").ok().and_then(|s| s.parse().ok()).unwrap_or(0);
    for seed in seed0..seed0 + n {
        let cfg = ExperimentConfig {
            master_seed: seed,
            ..base.clone()
        };
        let out = run_experiment(&cfg, &pool)?;
        let r = &out.report;
        let better = r
            .per_site
            .values()
            .filter(|m| m[&Method::Gml] >= m[&Method::Individual])
            .count();
        wins += usize::from(better >= 3);
        gap += r.combined[&Method::Gml] - r.combined[&Method::FedAvg];
        let cells: Vec<String> = r
            .per_site
            .iter()
            .map(|(s, m)| format!("s{s} gml {:.4} im {:.4}", m[&Method::Gml], m[&Method::Individual]))
            .collect();
        println!(
            "seed {seed}: {} | combined pm {:.4} fedavg {:.4} gml {:.4} | sites won {better}",
            cells.join(" | "),
            r.combined[&Method::Pooled],
            r.combined[&Method::FedAvg],
            r.combined[&Method::Gml]
        );
    }
    println!("seeds with >=3 sites won: {wins}/{n}; mean combined gap gml-fedavg {:.4}", gap / n as f64);
    Ok(())
}
