use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use hbev_core::io;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Precision,
    Recall,
    F1,
    TraversabilityMse,
    ElevationMae,
}

impl Metric {
    fn column(self) -> &'static str {
        match self {
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::TraversabilityMse => "traversability_mse",
            Metric::ElevationMae => "elevation_mae",
        }
    }
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// `distance_bins.csv` files written by `evaluate`, one curve each.
    #[arg(long = "csv", required = true)]
    pub csv: Vec<PathBuf>,
    /// Curve labels, in `--csv` order; file paths by default.
    #[arg(long = "label")]
    pub labels: Vec<String>,
    #[arg(long, value_enum, default_value_t = Metric::Recall)]
    pub metric: Metric,
    #[arg(long)]
    pub out: PathBuf,
}

pub struct Series {
    pub label: String,
    /// `(bin center in meters, value)`; undefined bins are skipped.
    pub points: Vec<(f64, f64)>,
}

fn read_series(path: &PathBuf, label: String, metric: Metric) -> anyhow::Result<Series> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} has no `{name}` column", path.display()))
    };
    let (lo, hi, col) = (find("lower_m")?, find("upper_m")?, find(metric.column())?);
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let value = &record[col];
        if value.is_empty() {
            continue;
        }
        let x = (record[lo].parse::<f64>()? + record[hi].parse::<f64>()?) / 2.0;
        points.push((x, value.parse()?));
    }
    Ok(Series { label, points })
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Line chart of metric against distance.
pub fn render_svg(series: &[Series], y_label: &str) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 20.0, 20.0, 50.0);
    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(1.0, f64::max)
        .ceil();
    let y_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .fold(0.0, f64::max);
    let y_max = if y_max <= 1.0 { 1.0 } else { y_max * 1.1 };
    let sx = |x: f64| left + x / x_max * (w - left - right);
    let sy = |y: f64| h - bottom - y / y_max * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<g stroke="black" fill="none"><line x1="{left}" y1="{0}" x2="{1}" y2="{0}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{0}"/></g>"#,
        h - bottom,
        w - right
    );
    for k in 0..=5 {
        let xv = x_max * k as f64 / 5.0;
        let yv = y_max * k as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{xv:.0}</text>"#,
            sx(xv),
            h - bottom + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{yv:.2}</text>"#,
            left - 6.0,
            sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">distance [m]</text>"#,
        (left + w - right) / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (top + h - bottom) / 2.0,
        (top + h - bottom) / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = top + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="12" fill="{color}" text-anchor="end">{}</text>"#,
            w - right - 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn run(args: &PlotArgs, _config: RunConfig) -> anyhow::Result<()> {
    if !args.labels.is_empty() && args.labels.len() != args.csv.len() {
        bail!(
            "got {} labels for {} CSV files",
            args.labels.len(),
            args.csv.len()
        );
    }
    let series = args
        .csv
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let label = args
                .labels
                .get(i)
                .cloned()
                .unwrap_or_else(|| p.display().to_string());
            read_series(p, label, args.metric)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    io::write_atomic(
        &args.out,
        render_svg(&series, args.metric.column()).as_bytes(),
    )?;
    Ok(())
}
