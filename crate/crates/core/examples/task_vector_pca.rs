// SPDX-License-Identifier: MIT OR Apache-2.0

//! PCA of add-k task vectors: variance explained and the ordering of
//! offsets along the first component.
//!
//! ```text
//! cargo run --release --example task_vector_pca -- [num_tasks] [seed]
//! ```

use lglb::experiment::{stages, Cache, Experiment, ExperimentConfig};

fn main() -> lglb::Result<()> {
    let mut args = std::env::args().skip(1);
    let k: usize = args.next().map_or(4, |s| s.parse().expect("num_tasks"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let cfg = ExperimentConfig::defaults(Experiment::AddkGeometry, seed).with_num_tasks(k)?;
    let trained = Cache::from_env().train(&cfg.model, &cfg.task, &cfg.train, seed)?;
    let g = stages::geometry(&trained.checkpoint, &cfg.analysis, seed)?;
    for (i, f) in g.pca.variance_fractions.iter().enumerate() {
        println!("PC{}  {:.5}  (cumulative {:.5})", i + 1, f, g.pca.cumulative(i + 1));
    }
    for (v, p) in g.vectors.iter().zip(&g.pca.projections) {
        println!("k = {:<3} pc1 {:+.4}", v.param.scalar().unwrap_or(f64::NAN), p[0]);
    }
    if let Some(o) = &g.ordering {
        println!("spearman rho {:.4}, order preserved: {}", o.rho, o.preserved);
    }
    Ok(())
}
