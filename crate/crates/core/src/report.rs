//! Report emission: CSV rows, JSON reports and SVG line plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{invalid, Error, Result};
use crate::metrics::BiasReport;

pub const CSV_HEADER: [&str; 12] = [
    "model",
    "dataset",
    "alpha",
    "size_fraction",
    "placement",
    "metric",
    "replication",
    "n_trials",
    "n_shape",
    "n_texture",
    "n_tie",
    "shape_bias",
];

/// One CSV row per replication of every report.
pub fn reports_to_csv(reports: &[BiasReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in reports {
        for rep in &r.replications {
            w.write_record([
                r.model.clone(),
                r.condition.dataset.clone(),
                r.condition.alpha.to_string(),
                r.condition.size_fraction.to_string(),
                r.condition.placement.to_string(),
                r.metric.to_string(),
                rep.replication.to_string(),
                rep.tally.n_trials.to_string(),
                rep.tally.n_shape.to_string(),
                rep.tally.n_texture.to_string(),
                rep.tally.n_tie.to_string(),
                rep.shape_bias.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn reports_to_json(reports: &[BiasReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
    s.push('\n');
    s
}

pub fn read_reports_json(path: &Path) -> Result<Vec<BiasReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::ParseError {
        line: e.line(),
        message: e.to_string(),
    })
}

/// A line plot: one series per model over a condition axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    pub name: String,
    pub title: String,
    pub x_label: String,
    pub series: BTreeMap<String, Vec<(f64, f64)>>,
}

/// Groups reports into plots of replication-mean shape bias.
///
/// Experiment 1 datasets plot against alpha, one plot per metric; the others
/// plot against size, one plot per (metric, placement).
pub fn plots_for(run: &str, reports: &[BiasReport]) -> Vec<Plot> {
    let mut plots: BTreeMap<String, Plot> = BTreeMap::new();
    for r in reports {
        let by_alpha = r.condition.dataset.starts_with("exp1");
        let (name, title, x_label, x) = if by_alpha {
            (
                format!("{run}-{}", r.metric),
                format!("{run}: shape bias vs alpha ({})", r.metric),
                "alpha",
                r.condition.alpha,
            )
        } else {
            (
                format!("{run}-{}-{}", r.metric, r.condition.placement),
                format!("{run}: shape bias vs size ({}, {})", r.metric, r.condition.placement),
                "size fraction",
                r.condition.size_fraction,
            )
        };
        let plot = plots.entry(name.clone()).or_insert_with(|| Plot {
            name,
            title,
            x_label: x_label.to_owned(),
            series: BTreeMap::new(),
        });
        plot.series
            .entry(r.model.clone())
            .or_default()
            .push((x, r.replication_mean));
    }
    let mut out: Vec<Plot> = plots.into_values().collect();
    for p in &mut out {
        for pts in p.series.values_mut() {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Renders a plot as a standalone SVG document.
///
/// The y axis spans [0, 1] with a dotted grey chance line at 0.5.
pub fn render_svg(plot: &Plot) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 160.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 50.0;
    let xs: Vec<f64> = plot.series.values().flatten().map(|p| p.0).collect();
    let (mut x0, mut x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - y) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&plot.title));
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let y = f64::from(i) / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.2}</text>"#,
            LEFT - 6.0,
            py(y) + 4.0
        );
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in &ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#,
            px(*x),
            TOP + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 10.0,
        escape(&plot.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">shape bias</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line class="chance" x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="2,3"/>"#,
        py(0.5),
        LEFT + pw,
        py(0.5)
    );
    for (i, (model, pts)) in plot.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-model="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            escape(model),
            path.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(x),
                py(y)
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            LEFT + pw + 10.0,
            LEFT + pw + 30.0,
            LEFT + pw + 36.0,
            ly + 4.0,
            escape(model)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Files written by [`emit_outputs`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmittedFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Writes `reports/<run>.csv`, `reports/<run>.json` and `plots/<plot>.svg`
/// (plus the plotted points as `plots/<plot>.csv`) under `out_dir`.
pub fn emit_outputs(reports: &[BiasReport], out_dir: &Path, run: &str) -> Result<EmittedFiles> {
    if reports.is_empty() {
        return Err(invalid("no reports to emit"));
    }
    let write = |path: &Path, contents: &str| -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, contents).map_err(|e| Error::io(path, e))
    };
    let csv = out_dir.join("reports").join(format!("{run}.csv"));
    write(&csv, &reports_to_csv(reports))?;
    let json = out_dir.join("reports").join(format!("{run}.json"));
    write(&json, &reports_to_json(reports))?;
    let plots = write_plots(reports, out_dir, run)?;
    Ok(EmittedFiles { csv, json, plots })
}

pub fn write_plots(reports: &[BiasReport], out_dir: &Path, run: &str) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for plot in plots_for(run, reports) {
        let path = out_dir.join("plots").join(format!("{}.svg", plot.name));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, render_svg(&plot)).map_err(|e| Error::io(&path, e))?;
        let mut data = String::from("model,x,shape_bias\n");
        for (model, pts) in &plot.series {
            for (x, y) in pts {
                let _ = writeln!(data, "{model},{x},{y}");
            }
        }
        let data_path = path.with_extension("csv");
        fs::write(&data_path, data).map_err(|e| Error::io(&data_path, e))?;
        written.push(path);
    }
    Ok(written)
}


/// Output format for [`rerender`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(invalid(format!("unknown format {other:?}"))),
        }
    }
}

/// Regenerates one output format from every `reports/<run>.json` in a run
/// directory. Returns the written paths in name order.
pub fn rerender(run_dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    let reports_dir = run_dir.join("reports");
    let mut sources: Vec<PathBuf> = fs::read_dir(&reports_dir)
        .map_err(|e| Error::io(&reports_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    sources.sort();
    if sources.is_empty() {
        return Err(invalid(format!("no reports in {}", reports_dir.display())));
    }
    let mut written = Vec::new();
    for src in sources {
        let run = src.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_owned();
        let reports = read_reports_json(&src)?;
        match format {
            Format::Csv => {
                let path = reports_dir.join(format!("{run}.csv"));
                fs::write(&path, reports_to_csv(&reports)).map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
            Format::Json => {
                fs::write(&src, reports_to_json(&reports)).map_err(|e| Error::io(&src, e))?;
                written.push(src);
            }
            Format::Svg => written.extend(write_plots(&reports, run_dir, &run)?),
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{Metric, Tally};
    use crate::stimulus::Condition;

    fn report(model: &str, alpha: f64, bias_num: u64) -> BiasReport {
        let mut t = BTreeMap::new();
        t.insert(0, Tally { n_trials: 10, n_shape: bias_num, n_texture: 10 - bias_num, n_tie: 0 });
        BiasReport::from_tallies(model, &Condition::textured_silhouette(alpha), Metric::Cosine, &t).unwrap()
    }

    #[test]
    fn one_report_one_row() {
        let csv = reports_to_csv(&[report("m", 0.2, 3)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert_eq!(lines[1], "m,exp1-alpha-0.2,0.2,1,aligned,cosine,0,10,3,7,0,0.3");
        let json: serde_json::Value = serde_json::from_str(&reports_to_json(&[report("m", 0.2, 3)])).unwrap();
        assert_eq!(json.as_array().unwrap().len(), 1);
        assert_eq!(json[0]["shape_bias"], 0.3);
    }

    #[test]
    fn six_alphas_two_models() {
        let mut reps = Vec::new();
        for m in ["a", "b"] {
            for (i, alpha) in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0].iter().enumerate() {
                reps.push(report(m, *alpha, i as u64));
            }
        }
        let plots = plots_for("experiment1", &reps);
        assert_eq!(plots.len(), 1);
        assert_eq!(plots[0].series.len(), 2);
        assert!(plots[0].series.values().all(|p| p.len() == 6));
        let svg = render_svg(&plots[0]);
        assert_eq!(svg.matches("class=\"series\"").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 12);
        assert_eq!(svg.matches("class=\"chance\"").count(), 1);
    }

    #[test]
    fn emit_is_deterministic_and_json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let reps = vec![report("m", 0.0, 1), report("m", 1.0, 9)];
        let a = emit_outputs(&reps, dir.path(), "experiment1").unwrap();
        let first: Vec<Vec<u8>> = [&a.csv, &a.json].iter().chain(a.plots.iter().collect::<Vec<_>>().iter()).map(|p| fs::read(p).unwrap()).collect();
        let b = emit_outputs(&reps, dir.path(), "experiment1").unwrap();
        assert_eq!(a, b);
        let second: Vec<Vec<u8>> = [&b.csv, &b.json].iter().chain(b.plots.iter().collect::<Vec<_>>().iter()).map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
        assert_eq!(read_reports_json(&a.json).unwrap(), reps);
    }

    #[test]
    fn emit_rejects_empty_and_unwritable() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_outputs(&[], dir.path(), "x").is_err());
        let file = dir.path().join("file");
        fs::write(&file, "").unwrap();
        assert!(matches!(
            emit_outputs(&[report("m", 0.0, 1)], &file, "x"),
            Err(Error::Io { .. })
        ));
    }
}
