// SPDX-License-Identifier: MIT OR Apache-2.0

//! Trains a circle model and checks that CW task vectors over a grid of
//! radii lie on an ordered 2D curve.
//!
//! ```text
//! cargo run --release --example circle_geometry -- [num_tasks] [seed]
//! ```

use lglb::experiment::{stages, Cache, Experiment, ExperimentConfig};

fn main() -> lglb::Result<()> {
    let mut args = std::env::args().skip(1);
    let k: usize = args.next().map_or(32, |s| s.parse().expect("num_tasks"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let cfg = ExperimentConfig::defaults(Experiment::CircleGeometry, seed).with_num_tasks(k)?;
    let trained = Cache::from_env().train(&cfg.model, &cfg.task, &cfg.train, seed)?;
    println!("held-out {}", stages::describe_eval(&stages::held_out(&trained.checkpoint, &cfg.analysis, seed)?));
    let g = stages::geometry(&trained.checkpoint, &cfg.analysis, seed)?;
    println!("{} vectors, 2-PC variance {:.4}", g.vectors.len(), g.pca.cumulative(2));
    if let Some(c) = &g.chain {
        println!("nearest-neighbour chain keeps radius order: {}", c.preserved);
    }
    Ok(())
}
