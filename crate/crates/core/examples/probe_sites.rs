// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear probes for task id and final answer at four activation sites.
//!
//! ```text
//! cargo run --release --example probe_sites -- [seed]
//! ```

use lglb::experiment::{stages, Cache, Experiment, ExperimentConfig};

fn main() -> lglb::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let cfg = ExperimentConfig::defaults(Experiment::AddkProbe, seed);
    let trained = Cache::from_env().train(&cfg.model, &cfg.task, &cfg.train, seed)?;
    println!("{:<18} {:<13} {:>8} {:>8}", "site", "target", "train", "test");
    for r in stages::probes(&trained.checkpoint, &cfg.analysis, seed)? {
        let site = r.site.map(|s| s.to_string()).unwrap_or_default();
        println!("{site:<18} {:<13} {:>8.3} {:>8.3}", format!("{:?}", r.target), r.train_accuracy, r.test_accuracy);
    }
    Ok(())
}
