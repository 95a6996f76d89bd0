// SPDX-License-Identifier: MIT OR Apache-2.0

//! Writes a scatter plot, a line plot and a heatmap from synthetic data.
//!
//! ```text
//! cargo run --release --example svg_plots -- [out_dir]
//! ```

use std::path::PathBuf;

use lglb::experiment::plot::{self, Heatmap, LinePlot, Scatter};

fn main() -> lglb::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/svg-demo".into()));
    std::fs::create_dir_all(&dir).map_err(|e| lglb::LabError::Io { path: dir.clone(), source: e })?;

    let n = 40;
    let points: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let t = i as f64 / n as f64 * std::f64::consts::PI;
            [t.cos() * (1.0 + 0.1 * t), t.sin()]
        })
        .collect();
    let scatter = Scatter {
        title: "half turn".into(),
        xlabel: "x".into(),
        ylabel: "y".into(),
        points,
        values: (0..n).map(|i| i as f64).collect(),
        groups: vec![0; n],
        group_names: vec!["points".into()],
    };
    let line = LinePlot {
        title: "decay".into(),
        xlabel: "step".into(),
        ylabel: "value".into(),
        series: vec![("exp".into(), (0..20).map(|i| [i as f64, (-0.2 * i as f64).exp()]).collect())],
    };
    let heat = Heatmap {
        title: "distance".into(),
        matrix: (0..12).map(|i| (0..12).map(|j| -((i as f64 - j as f64).abs())).collect()).collect(),
        label: "-|i - j|".into(),
    };
    for (name, svg) in [
        ("scatter.svg", plot::scatter2d(&scatter)?),
        ("line.svg", plot::line(&line)?),
        ("heatmap.svg", plot::heatmap(&heat)?),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, svg).map_err(|e| lglb::LabError::Io { path: path.clone(), source: e })?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
