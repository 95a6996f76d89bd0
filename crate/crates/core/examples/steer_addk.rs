// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steers add-k runs from the first offset towards the last by replacing the
//! task vector with an interpolation.
//!
//! ```text
//! cargo run --release --example steer_addk -- [seed]
//! ```

use lglb::experiment::{stages, Cache, Experiment, ExperimentConfig};
use lglb::intervention::SteerMetrics;

fn main() -> lglb::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let cfg = ExperimentConfig::defaults(Experiment::AddkSteer, seed);
    let trained = Cache::from_env().train(&cfg.model, &cfg.task, &cfg.train, seed)?;
    let st = stages::steering(&trained.checkpoint, &cfg.analysis, seed)?;
    for report in &st.reports {
        println!("{:?} -> {:?} at {} position {}", report.original, report.opposite, report.site, report.position);
        println!("  beta  target  top1(orig)  top1(opp)  top3(target)");
        for row in &report.rows {
            if let SteerMetrics::Token { original, opposite, target, .. } = &row.metrics {
                println!(
                    "  {:.1}   {:>6.2}  {:>10.3}  {:>9.3}  {:>12.3}",
                    row.beta, row.target, original.top1, opposite.top1, target.top3
                );
            }
        }
    }
    Ok(())
}
