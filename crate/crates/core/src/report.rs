//! Static report emission: delimiter-separated tables and simple SVG line
//! plots from training histories and sweep tables. Output is byte-stable
//! for identical inputs.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::train::{HistoryRecord, SweepCell};

pub fn write_history(history: &[HistoryRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for r in history {
        serde_json::to_writer(&mut f, r)?;
        writeln!(f)?;
    }
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRecord>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: HistoryRecord = serde_json::from_str(&line)
            .map_err(|err| Error::ParseError { line: i + 1, msg: err.to_string() })?;
        out.push(r);
    }
    Ok(out)
}

pub const SWEEP_HEADER: &str = "lr,text_frozen_epochs,image_frozen_epochs,num_image_embeddings,dev_metric";

pub fn write_sweep_table(rows: &[(SweepCell, f64)], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{SWEEP_HEADER}")?;
    for (c, m) in rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            c.lr, c.text_frozen_epochs, c.image_frozen_epochs, c.num_image_embeddings, m
        )?;
    }
    Ok(())
}

pub fn read_sweep_table(path: &Path) -> Result<Vec<(SweepCell, f64)>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != SWEEP_HEADER {
                return Err(Error::ParseError { line: 1, msg: "bad sweep table header".into() });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::ParseError { line: i + 1, msg: "expected 5 columns".into() });
        }
        let bad = |msg: &str| Error::ParseError { line: i + 1, msg: msg.into() };
        out.push((
            SweepCell {
                lr: parts[0].parse().map_err(|_| bad("bad lr"))?,
                text_frozen_epochs: parts[1].parse().map_err(|_| bad("bad text_frozen_epochs"))?,
                image_frozen_epochs: parts[2].parse().map_err(|_| bad("bad image_frozen_epochs"))?,
                num_image_embeddings: parts[3].parse().map_err(|_| bad("bad num_image_embeddings"))?,
            },
            parts[4].parse().map_err(|_| bad("bad dev_metric"))?,
        ));
    }
    Ok(out)
}

/// Minimal deterministic SVG line plot.
fn line_plot_svg(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        W / 2.0
    ));
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M
    ));
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M
    ));
    for (t, label) in [(x0, x0), (x1, x1)] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{label:.4}</text>\n",
            sx(t),
            H - M + 18.0
        ));
    }
    for (t, label) in [(y0, y0), (y1, y1)] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{label:.4}</text>\n",
            M - 6.0,
            sy(t) + 4.0
        ));
    }
    for (si, (name, points)) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let path: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            W - M + 4.0 - 120.0,
            M + 16.0 * si as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Emits metric-vs-epoch curves (one CSV per series plus a combined SVG)
/// from a training history.
pub fn history_report(history: &[HistoryRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in history {
        if let Some(v) = r.value.as_f64() {
            series
                .entry(format!("{}_{}", r.split, r.metric))
                .or_default()
                .push((r.epoch as f64, v));
        }
    }
    if series.is_empty() {
        return Err(Error::EmptyInput("history contains no numeric records".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (name, points) in &series {
        let path = out_dir.join(format!("history_{name}.csv"));
        let mut f = std::fs::File::create(&path)?;
        writeln!(f, "epoch,value")?;
        for (x, y) in points {
            writeln!(f, "{x},{y}")?;
        }
        written.push(path);
    }
    let svg_path = out_dir.join("history.svg");
    let svg_series: Vec<(String, Vec<(f64, f64)>)> =
        series.into_iter().map(|(k, v)| (k, v)).collect();
    std::fs::write(&svg_path, line_plot_svg("metric vs epoch", &svg_series))?;
    written.push(svg_path);
    Ok(written)
}

/// Emits one metric-vs-axis curve (CSV + SVG) per swept axis, averaging
/// the dev metric over the other axes.
pub fn sweep_report(rows: &[(SweepCell, f64)], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("empty sweep table".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let axes: [(&str, fn(&SweepCell) -> f64); 4] = [
        ("lr", |c| c.lr),
        ("freeze_text", |c| c.text_frozen_epochs as f64),
        ("freeze_image", |c| c.image_frozen_epochs as f64),
        ("num_image_embeddings", |c| c.num_image_embeddings as f64),
    ];
    let mut written = Vec::new();
    for (name, extract) in axes {
        let mut grouped: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
        for (cell, metric) in rows {
            let x = extract(cell);
            let e = grouped.entry(format!("{x:.12e}")).or_insert((x, 0.0, 0));
            e.1 += metric;
            e.2 += 1;
        }
        let points: Vec<(f64, f64)> = grouped
            .values()
            .map(|&(x, sum, n)| (x, sum / n as f64))
            .collect();
        let mut points = points;
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let csv_path = out_dir.join(format!("sweep_{name}.csv"));
        let mut f = std::fs::File::create(&csv_path)?;
        writeln!(f, "{name},dev_metric")?;
        for (x, y) in &points {
            writeln!(f, "{x},{y}")?;
        }
        written.push(csv_path);
        let svg_path = out_dir.join(format!("sweep_{name}.svg"));
        std::fs::write(
            &svg_path,
            line_plot_svg(&format!("dev metric vs {name}"), &[(name.to_string(), points)]),
        )?;
        written.push(svg_path);
    }
    Ok(written)
}
