// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation patching between two add-k tasks at several sites.
//!
//! ```text
//! cargo run --release --example patch_addk -- [seed]
//! ```

use lglb::experiment::{stages, Cache, Experiment, ExperimentConfig};
use lglb::model::Site;

fn main() -> lglb::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let mut cfg = ExperimentConfig::defaults(Experiment::AddkSteer, seed);
    let trained = Cache::from_env().train(&cfg.model, &cfg.task, &cfg.train, seed)?;
    println!("{:<18} {:>9} {:>9} {:>8} {:>8}", "site", "delta_bar", "flip", "rr_norm", "rr_alt");
    for site in [Site::attn_out(0), Site::mlp_out(0), Site::attn_out(1), Site::mlp_out(1)] {
        cfg.analysis.site = site;
        let rep = stages::patching(&trained.checkpoint, &cfg.analysis, seed)?;
        println!(
            "{:<18} {:>9} {:>9.3} {:>8.3} {:>8.3}",
            site.to_string(),
            rep.delta_bar.map_or("n/a".to_string(), |d| format!("{d:.3}")),
            rep.flip_rate,
            rep.mean_rr_norm_after,
            rep.mean_rr_alt_after
        );
    }
    Ok(())
}
