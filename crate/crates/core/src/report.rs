//! Metric files: per-run and merged CSV, and SVG line charts of seed-averaged
//! metrics with one series per objective.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::training::{MetricsRow, Objective, RunOutput};

pub const CSV_HEADER: &str = "step,objective,seed,nll_induced,nll_uniform,utility,gap";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    NllInduced,
    NllUniform,
    Utility,
    Gap,
}

impl Metric {
    /// The metrics charted by default.
    pub const CHARTED: [Metric; 3] = [Metric::NllUniform, Metric::Utility, Metric::Gap];

    pub fn label(self) -> &'static str {
        match self {
            Metric::NllInduced => "nll_induced",
            Metric::NllUniform => "nll_uniform",
            Metric::Utility => "utility",
            Metric::Gap => "gap",
        }
    }

    pub fn of(self, r: &MetricsRow) -> f64 {
        match self {
            Metric::NllInduced => r.nll_induced,
            Metric::NllUniform => r.nll_uniform,
            Metric::Utility => r.utility,
            Metric::Gap => r.gap,
        }
    }
}

pub fn write_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::param(format!(
            "{}: expected header {CSV_HEADER:?}, found {header:?}",
            path.display()
        )));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Mean of `metric` over seeds at each logged step, per objective.
pub fn mean_series(rows: &[MetricsRow], metric: Metric) -> Vec<(Objective, Vec<(f64, f64)>)> {
    let mut acc: BTreeMap<Objective, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.objective).or_default().entry(r.step).or_insert((0.0, 0));
        e.0 += metric.of(r);
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(o, steps)| {
            let pts = steps.into_iter().map(|(s, (sum, n))| (s as f64, sum / n as f64)).collect();
            (o, pts)
        })
        .collect()
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// A line chart with labelled axes and a legend.
pub fn svg_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        let pad = y0.abs().max(1.0) * 0.05;
        (y0, y1) = (y0 - pad, y1 + pad);
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + ph + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            sy(yv) + 4.0,
            tick(yv)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            left + pw,
            sy(yv),
            sy(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One chart per charted metric, averaged over seeds.
pub fn charts(rows: &[MetricsRow], title: &str) -> Vec<(Metric, String)> {
    Metric::CHARTED
        .iter()
        .map(|&m| {
            let series: Vec<(String, Vec<(f64, f64)>)> = mean_series(rows, m)
                .into_iter()
                .map(|(o, p)| (o.label().to_string(), p))
                .collect();
            (m, svg_chart(&format!("{title}: {}", m.label()), "step", m.label(), &series))
        })
        .collect()
}

/// Writes one CSV per run, the merged `metrics.csv`, and the charts; returns the paths written.
pub fn write_run_outputs(dir: &Path, runs: &[RunOutput], title: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut merged = Vec::new();
    for run in runs {
        let cfg = &run.checkpoint.config;
        let path = dir.join(format!("{}_seed{}.csv", cfg.objective.label(), cfg.seed));
        write_csv(&path, &run.rows)?;
        written.push(path);
        merged.extend(run.rows.iter().cloned());
    }
    let path = dir.join("metrics.csv");
    write_csv(&path, &merged)?;
    written.push(path);
    written.extend(write_charts(dir, &merged, title)?);
    Ok(written)
}

pub fn write_charts(dir: &Path, rows: &[MetricsRow], title: &str) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (m, svg) in charts(rows, title) {
        let path = dir.join(format!("{}.svg", m.label()));
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, objective: Objective, seed: u64, gap: f64) -> MetricsRow {
        MetricsRow {
            step,
            objective,
            seed,
            nll_induced: 1.5,
            nll_uniform: 1.5 + gap,
            utility: 0.25,
            gap,
        }
    }

    #[test]
    fn csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            row(0, Objective::NoIntervention, 0, 0.1),
            row(50, Objective::DropoutZeroSum, 1, 1.0 / 3.0),
        ];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert!(text.contains("dropout_zero_sum"));
        assert_eq!(read_csv(&path).unwrap(), rows);

        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_csv(&path).is_err());
    }

    #[test]
    fn mean_series_averages_over_seeds() {
        let rows = vec![
            row(0, Objective::NoIntervention, 0, 0.1),
            row(0, Objective::NoIntervention, 1, 0.3),
            row(50, Objective::NoIntervention, 0, 0.5),
            row(0, Objective::ExactZeroSum, 0, 0.0),
        ];
        let s = mean_series(&rows, Metric::Gap);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].0, Objective::NoIntervention);
        assert!((s[0].1[0].1 - 0.2).abs() < 1e-12);
        assert_eq!(s[0].1[1], (50.0, 0.5));
    }

    #[test]
    fn svg_has_a_line_per_series() {
        let series = vec![
            ("a".to_string(), vec![(0.0, 1.0), (1.0, 2.0)]),
            ("b<c".to_string(), vec![(0.0, 2.0), (1.0, 1.0)]),
        ];
        let svg = svg_chart("t", "step", "y", &series);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;c"));
        // degenerate ranges still render
        let flat = svg_chart("t", "x", "y", &[("a".into(), vec![(0.0, 1.0)])]);
        assert!(!flat.contains("NaN"));
    }
}
