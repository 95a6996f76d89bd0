// SPDX-License-Identifier: MIT OR Apache-2.0

//! Standalone SVG plots.
//!
//! Colour ramps run from dark (small parameter) to light (large parameter).
//! Data marks are `<circle>` elements for scatters, `<line class="seg">`
//! elements for line plots and `<rect class="cell">` elements for heatmaps;
//! nothing else uses those tags and classes.

use std::fmt::Write;

use crate::error::{LabError, Result};

const W: f64 = 480.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 90.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Colour ramps, dark to light.
const RAMPS: [[(u8, u8, u8); 5]; 2] = [
    [(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37)],
    [(0, 0, 4), (81, 18, 124), (183, 55, 121), (252, 137, 97), (252, 253, 191)],
];

/// Colour at `t ∈ [0, 1]` on ramp `ramp`.
pub fn ramp_color(ramp: usize, t: f64) -> String {
    let stops = &RAMPS[ramp % RAMPS.len()];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (stops.len() - 1) as f64;
    let i = (x.floor() as usize).min(stops.len() - 2);
    let f = x - i as f64;
    let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * f).round() as u8;
    let (a, b) = (stops[i], stops[i + 1]);
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
        .collect()
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    s
}

fn axes(s: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (x0, x1) = (LEFT, W - RIGHT);
    let (y0, y1) = (H - BOTTOM, TOP);
    let _ = writeln!(s, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x.0 + t * (f.x.1 - f.x.0);
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let (px, py) = (f.px(xv), f.py(yv));
        let _ = writeln!(s, r#"<path d="M{px},{y0} v4" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#, y0 + 16.0, tick(xv));
        let _ = writeln!(s, r#"<path d="M{x0},{py} h-4" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 6.0, py + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e4) {
        format!("{v:.2}")
    } else {
        format!("{v:.1e}")
    }
}

fn colorbar(s: &mut String, ramp: usize, lo: f64, hi: f64, label: &str) {
    let x = W - RIGHT + 20.0;
    let (top, bottom) = (TOP, H - BOTTOM);
    let steps = 32;
    let h = (bottom - top) / steps as f64;
    for i in 0..steps {
        let t = (i as f64 + 0.5) / steps as f64;
        let y = bottom - (i + 1) as f64 * h;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{y:.2}" width="14" height="{:.2}" fill="{}"/>"#,
            h + 0.5,
            ramp_color(ramp, t)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x + 18.0, bottom, tick(lo));
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x + 18.0, top + 8.0, tick(hi));
    let _ = writeln!(s, r#"<text x="{x}" y="{}">{}</text>"#, top - 6.0, escape(label));
}

/// Points coloured by a parameter, with one colour ramp per group.
#[derive(Clone, Debug, Default)]
pub struct Scatter {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub points: Vec<[f64; 2]>,
    /// Parameter per point; smaller values are drawn darker.
    pub values: Vec<f64>,
    /// Ramp index per point (empty: all zero).
    pub groups: Vec<usize>,
    /// Name per ramp index, shown next to the colour bars.
    pub group_names: Vec<String>,
}

pub fn scatter2d(plot: &Scatter) -> Result<String> {
    let n = plot.points.len();
    if n == 0 {
        return Err(LabError::InvalidArgument("scatter plot with no points".into()));
    }
    if plot.values.len() != n || !(plot.groups.is_empty() || plot.groups.len() == n) {
        return Err(LabError::InvalidArgument("scatter plot needs one value (and group) per point".into()));
    }
    let f = Frame {
        x: extent(plot.points.iter().map(|p| p[0])),
        y: extent(plot.points.iter().map(|p| p[1])),
    };
    let mut s = open(&plot.title);
    axes(&mut s, &f, &plot.xlabel, &plot.ylabel);
    let t = normalize(&plot.values);
    for (i, p) in plot.points.iter().enumerate() {
        let g = plot.groups.get(i).copied().unwrap_or(0);
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}" stroke="black" stroke-width="0.3"/>"#,
            f.px(p[0]),
            f.py(p[1]),
            ramp_color(g, t[i])
        );
    }
    let lo = plot.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plot.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n_groups = plot.groups.iter().copied().max().map_or(1, |m| m + 1);
    for g in 0..n_groups.min(RAMPS.len()) {
        let name = plot.group_names.get(g).map_or("", String::as_str);
        let mut bar = String::new();
        colorbar(&mut bar, g, lo, hi, name);
        if g > 0 {
            let _ = writeln!(s, r#"<g transform="translate({} 0)">"#, 40 * g);
            s.push_str(&bar);
            s.push_str("</g>\n");
        } else {
            s.push_str(&bar);
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// 3-D points under a fixed oblique projection.
pub fn scatter3d_projected(plot: &Scatter, points3: &[[f64; 3]]) -> Result<String> {
    if points3.is_empty() {
        return Err(LabError::InvalidArgument("scatter plot with no points".into()));
    }
    let (az, el) = (35f64.to_radians(), 25f64.to_radians());
    let projected = points3
        .iter()
        .map(|p| {
            let x = p[0] * az.cos() - p[1] * az.sin();
            let depth = p[0] * az.sin() + p[1] * az.cos();
            [x, p[2] * el.cos() - depth * el.sin()]
        })
        .collect();
    scatter2d(&Scatter {
        points: projected,
        ..plot.clone()
    })
}

/// Matrix as coloured cells; rows run top to bottom.
#[derive(Clone, Debug, Default)]
pub struct Heatmap {
    pub title: String,
    pub matrix: Vec<Vec<f64>>,
    pub label: String,
}

pub fn heatmap(plot: &Heatmap) -> Result<String> {
    let rows = plot.matrix.len();
    let cols = plot.matrix.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(LabError::InvalidArgument("heatmap of an empty matrix".into()));
    }
    if plot.matrix.iter().any(|r| r.len() != cols) {
        return Err(LabError::InvalidArgument("heatmap rows differ in length".into()));
    }
    let all: Vec<f64> = plot.matrix.iter().flatten().copied().collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = open(&plot.title);
    let (cw, ch) = ((W - LEFT - RIGHT) / cols as f64, (H - TOP - BOTTOM) / rows as f64);
    for (i, row) in plot.matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}"/>"#,
                LEFT + j as f64 * cw,
                TOP + i as f64 * ch,
                cw + 0.05,
                ch + 0.05,
                ramp_color(0, t)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    colorbar(&mut s, 0, lo, hi, &plot.label);
    s.push_str("</svg>\n");
    Ok(s)
}

/// One polyline per series, drawn as individual segments.
#[derive(Clone, Debug, Default)]
pub struct LinePlot {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub series: Vec<(String, Vec<[f64; 2]>)>,
}

const SERIES_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub fn line(plot: &LinePlot) -> Result<String> {
    if plot.series.iter().all(|(_, p)| p.is_empty()) {
        return Err(LabError::InvalidArgument("line plot with no points".into()));
    }
    let f = Frame {
        x: extent(plot.series.iter().flat_map(|(_, p)| p.iter().map(|q| q[0]))),
        y: extent(plot.series.iter().flat_map(|(_, p)| p.iter().map(|q| q[1]))),
    };
    let mut s = open(&plot.title);
    axes(&mut s, &f, &plot.xlabel, &plot.ylabel);
    for (k, (name, pts)) in plot.series.iter().enumerate() {
        let color = SERIES_COLORS[k % SERIES_COLORS.len()];
        for w in pts.windows(2) {
            let _ = writeln!(
                s,
                r#"<line class="seg" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5"/>"#,
                f.px(w[0][0]),
                f.py(w[0][1]),
                f.px(w[1][0]),
                f.py(w[1][1])
            );
        }
        let y = TOP + 14.0 * k as f64;
        let x = W - RIGHT + 8.0;
        let _ = writeln!(s, r#"<path d="M{x},{y} h14" stroke="{color}" stroke-width="2"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x + 18.0, y + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_scatter_has_two_circles() {
        let svg = scatter2d(&Scatter {
            points: vec![[0.0, 0.0], [1.0, 2.0]],
            values: vec![1.0, 2.0],
            ..Default::default()
        })
        .unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn smaller_values_are_darker() {
        let lum = |c: &str| {
            let v = u32::from_str_radix(&c[1..], 16).unwrap();
            (v >> 16) + ((v >> 8) & 0xff) + (v & 0xff)
        };
        for ramp in 0..2 {
            let shades: Vec<u32> = (0..=10).map(|i| lum(&ramp_color(ramp, i as f64 / 10.0))).collect();
            assert!(shades.windows(2).all(|w| w[0] < w[1]), "{shades:?}");
        }
    }

    #[test]
    fn eleven_point_line_has_ten_segments() {
        let pts: Vec<[f64; 2]> = (0..11).map(|i| [i as f64 / 10.0, (i * i) as f64]).collect();
        let svg = line(&LinePlot {
            series: vec![("a".into(), pts)],
            ..Default::default()
        })
        .unwrap();
        assert_eq!(svg.matches(r#"class="seg""#).count(), 10);
    }

    #[test]
    fn identity_heatmap_diagonal_is_maximal() {
        let n = 5;
        let m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        let svg = heatmap(&Heatmap {
            matrix: m,
            ..Default::default()
        })
        .unwrap();
        let fills: Vec<&str> = svg
            .lines()
            .filter(|l| l.contains(r#"class="cell""#))
            .map(|l| l.split("fill=\"").nth(1).unwrap().split('"').next().unwrap())
            .collect();
        assert_eq!(fills.len(), n * n);
        let top = ramp_color(0, 1.0);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(fills[i * n + j] == top, i == j);
            }
        }
        assert!(svg.contains("<rect x=\"") && svg.matches("<rect").count() > n * n + 1);
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(scatter2d(&Scatter::default()).is_err());
        assert!(heatmap(&Heatmap::default()).is_err());
        assert!(line(&LinePlot::default()).is_err());
        assert!(scatter3d_projected(&Scatter::default(), &[]).is_err());
    }
}
