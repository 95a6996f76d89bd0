// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cosine similarity of per-sequence layer-2 attention embeddings for a
//! two-task add-k model.
//!
//! ```text
//! cargo run --release --example cluster_addk -- [seed]
//! ```

use lglb::experiment::{stages, Cache, Experiment, ExperimentConfig};

fn main() -> lglb::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let cfg = ExperimentConfig::defaults(Experiment::AddkClustering, seed);
    let trained = Cache::from_env().train(&cfg.model, &cfg.task, &cfg.train, seed)?;
    let c = stages::clustering(&trained.checkpoint, &cfg.analysis, seed)?;
    println!("{} embeddings, {} tasks", c.labels.len(), cfg.task.num_tasks());
    println!("mean intra-task cosine  {:.4}", c.stats.mean_intra);
    println!("mean inter-task cosine  {:.4}", c.stats.mean_inter);
    println!("rows separated          {:.4}", c.stats.separated_fraction);
    Ok(())
}
