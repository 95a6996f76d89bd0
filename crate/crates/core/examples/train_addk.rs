// SPDX-License-Identifier: MIT OR Apache-2.0

//! Trains an add-k model and reports held-out accuracy.
//!
//! ```text
//! cargo run --release --example train_addk -- [num_tasks] [iterations]
//! ```

use std::time::Instant;

use lglb::tasks::TaskConfig;
use lglb::train::{evaluate, Trainer, TrainConfig};
use lglb::rng;

fn main() -> lglb::Result<()> {
    let mut args = std::env::args().skip(1);
    let num_tasks: usize = args.next().map_or(4, |s| s.parse().expect("num_tasks"));
    let task = TaskConfig::addk(num_tasks);
    let family = task.build(0)?;
    let mut train = TrainConfig::addk(num_tasks, 0);
    if let Some(it) = args.next() {
        train.iterations = it.parse().expect("iterations");
    }
    let total = train.iterations;
    let mut trainer = Trainer::new(task.model_config(), family.clone(), train)?;
    let start = Instant::now();
    trainer.run_until(total, |row| {
        if row.iteration % 10 == 0 || row.metric.is_some() {
            println!(
                "iter {:>5}  loss {:.4}  lr {:.2e}  {:>6.1}s{}",
                row.iteration,
                row.loss,
                row.lr,
                start.elapsed().as_secs_f64(),
                row.metric.map(|m| format!("  eval top-1 {:.3}", m)).unwrap_or_default()
            );
        }
    })?;
    let ckpt = trainer.into_checkpoint();
    let test = family.mixed_batch(2000, rng::derive_seed(7, rng::stream::EVAL, 1))?;
    println!("{:?}", evaluate(&ckpt.params, &ckpt.model_config, &test)?);
    Ok(())
}
