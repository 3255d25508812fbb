//! Reports of a campaign directory: comparison table, CSV and SVG plots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dynamics::STATE_DIM;
use crate::error::{Error, Result};

use super::campaign::{CampaignManifest, CellSummary, Scenario, STATE_NAMES};
use super::sim::Method;

/// Marker for a result that does not exist.
pub const MISSING: &str = "–";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Svg,
    Table,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "svg" => Ok(Self::Svg),
            "table" => Ok(Self::Table),
            other => Err(Error::Parameter(format!("unknown report format `{other}` (expected csv, svg or table)"))),
        }
    }
}

/// Cell summaries of a campaign directory, in manifest order.
pub fn load_cells(dir: &Path) -> Result<Vec<CellSummary>> {
    let manifest = CampaignManifest::load(&dir.join("manifest.toml"))?;
    let mut cells = Vec::new();
    for s in &manifest.scenarios {
        for m in &manifest.methods {
            cells.push(CellSummary::load(&dir.join(s.dir_name()).join(m.dir_name()).join("summary.toml"))?);
        }
    }
    Ok(cells)
}

fn find(cells: &[CellSummary], scenario: Scenario, method: Method) -> Option<&CellSummary> {
    cells.iter().find(|c| c.scenario == scenario && c.method == method)
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.3e}"),
        _ => MISSING.to_string(),
    }
}

/// Methods present in `cells`, in table order.
fn methods(cells: &[CellSummary]) -> Vec<Method> {
    Method::ALL.into_iter().filter(|m| cells.iter().any(|c| c.method == *m)).collect()
}

/// Table of aggregate RMSE: one row per method, one column per state, each
/// entry `E / NE`.
pub fn comparison_table(cells: &[CellSummary]) -> String {
    let rows: Vec<(String, Vec<String>)> = methods(cells)
        .into_iter()
        .map(|m| {
            let entries = (0..STATE_DIM)
                .map(|i| {
                    let get = |s| fmt_value(find(cells, s, m).map(|c| c.rmse[i]));
                    format!("{} / {}", get(Scenario::Eclipse), get(Scenario::Nominal))
                })
                .collect();
            (m.label().to_string(), entries)
        })
        .collect();
    let name_w = rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0).max("Method".len());
    let widths: Vec<usize> = (0..STATE_DIM)
        .map(|i| rows.iter().map(|r| r.1[i].chars().count()).max().unwrap_or(0).max(STATE_NAMES[i].len()))
        .collect();
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));

    let mut out = String::from("RMSE (E / NE)\n");
    let mut header = pad("Method", name_w);
    for (i, w) in widths.iter().enumerate() {
        let _ = write!(header, " | {}", pad(STATE_NAMES[i], *w));
    }
    let _ = writeln!(out, "{}", header.trim_end());
    let _ = writeln!(out, "{}", "-".repeat(header.trim_end().chars().count()));
    for (name, entries) in &rows {
        let mut line = pad(name, name_w);
        for (e, w) in entries.iter().zip(&widths) {
            let _ = write!(line, " | {}", pad(e, *w));
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
    out.push('\n');
    let _ = writeln!(out, "{}", "Mean SNEES (E / NE), min eclipse 3σ position coverage".trim_end());
    for m in methods(cells) {
        let snees = |s| fmt_value(find(cells, s, m).map(|c| c.mean_snees));
        let cov = find(cells, Scenario::Eclipse, m)
            .and_then(|c| c.eclipse_coverage_min)
            .map(|v| format!("{v:.3}"))
            .unwrap_or_else(|| MISSING.to_string());
        let _ = writeln!(
            out,
            "{} | {} / {} | {cov}",
            pad(m.label(), name_w),
            snees(Scenario::Eclipse),
            snees(Scenario::Nominal)
        );
    }
    out
}

/// Aggregate RMSE as CSV: `method,<state>_E,<state>_NE,...` plus SNEES.
pub fn comparison_csv(cells: &[CellSummary]) -> String {
    let mut out = String::from("method");
    for n in STATE_NAMES {
        let _ = write!(out, ",{n}_E,{n}_NE");
    }
    out.push_str(",snees_E,snees_NE,eclipse_coverage_min\n");
    let v = |x: Option<f64>| x.filter(|v| v.is_finite()).map(|v| format!("{v:.9e}")).unwrap_or_default();
    for m in methods(cells) {
        let (e, ne) = (find(cells, Scenario::Eclipse, m), find(cells, Scenario::Nominal, m));
        out.push_str(m.dir_name());
        for i in 0..STATE_DIM {
            let _ = write!(out, ",{},{}", v(e.map(|c| c.rmse[i])), v(ne.map(|c| c.rmse[i])));
        }
        let _ = writeln!(
            out,
            ",{},{},{}",
            v(e.map(|c| c.mean_snees)),
            v(ne.map(|c| c.mean_snees)),
            v(e.and_then(|c| c.eclipse_coverage_min))
        );
    }
    out
}

/// Numeric columns of a campaign CSV with a header row. Empty fields are NaN.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
    let mut cols = vec![Vec::new(); header.len()];
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::Parse { what: "campaign csv", line: n + 2, reason: format!("expected {} fields", header.len()) });
        }
        for (c, f) in cols.iter_mut().zip(fields) {
            let v = if f.is_empty() {
                f64::NAN
            } else {
                f.parse().map_err(|e| Error::Parse { what: "campaign csv", line: n + 2, reason: format!("bad number `{f}`: {e}") })?
            };
            c.push(v);
        }
    }
    Ok((header, cols))
}

/// One polyline of a plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    /// Palette index.
    pub color: usize,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const MAX_POINTS: usize = 600;

/// Minimal SVG line plot. With `log_y`, non-positive values are dropped.
pub fn svg_plot(title: &str, y_label: &str, series: &[Series], log_y: bool, shade: Option<(f64, f64)>) -> String {
    let (w, h) = (800.0, 420.0);
    let (left, right, top, bottom) = (80.0, 170.0, 40.0, 50.0);
    let tf = |y: f64| if log_y { y.log10() } else { y };
    let keep = |p: &&(f64, f64)| p.0.is_finite() && p.1.is_finite() && (!log_y || p.1 > 0.0);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().filter(keep).map(|&(x, y)| (x, tf(y)))).collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        (left + w - right) / 2.0,
        escape(title)
    );
    if all.is_empty() {
        svg.push_str("<text x=\"400\" y=\"210\" text-anchor=\"middle\">no data</text>\n</svg>\n");
        return svg;
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
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
    let (pw, ph) = (w - left - right, h - top - bottom);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    if let Some((a, b)) = shade {
        let (a, b) = (a.max(x0), b.min(x1));
        if b > a {
            let _ = writeln!(
                svg,
                "<rect x=\"{:.1}\" y=\"{top}\" width=\"{:.1}\" height=\"{ph}\" fill=\"#eeeeee\"/>",
                px(a),
                px(b) - px(a)
            );
        }
    }
    let _ = writeln!(svg, "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>");
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let ylab = if log_y { format!("{:.1e}", 10f64.powf(fy)) } else { format!("{fy:.3}") };
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{fx:.0}</text>", px(fx), h - bottom + 18.0);
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{ylab}</text>", left - 6.0, py(fy) + 4.0);
    }
    let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">t (s)</text>", left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (n, s) in series.iter().enumerate() {
        let color = PALETTE[s.color % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().filter(keep).map(|&(x, y)| (x, tf(y))).collect();
        let stride = pts.len().div_ceil(MAX_POINTS).max(1);
        let path: Vec<String> = pts.iter().step_by(stride).map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let dash = if s.dashed { " stroke-dasharray=\"5,3\"" } else { "" };
        let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\"{dash} points=\"{}\"/>", path.join(" "));
        let ly = top + 14.0 + 18.0 * n as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{ly:.1}\" x2=\"{}\" y2=\"{ly:.1}\" stroke=\"{color}\"{dash}/><text x=\"{}\" y=\"{:.1}\">{}</text>",
            w - right + 10.0,
            w - right + 30.0,
            w - right + 35.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const GROUPS: [(&str, &str, std::ops::Range<usize>); 4] = [
    ("position", "m", 0..3),
    ("velocity", "m/s", 3..6),
    ("mrp", "-", 6..9),
    ("rate", "rad/s", 9..12),
];

fn outage_span(dir: &Path) -> Result<Option<(f64, f64)>> {
    let (_, cols) = read_csv(&dir.join("coverage.csv"))?;
    let flagged: Vec<f64> = cols[0].iter().zip(&cols[1]).filter(|(_, o)| **o > 0.5).map(|(t, _)| *t).collect();
    Ok(match (flagged.first(), flagged.last()) {
        (Some(&a), Some(&b)) => Some((a, b)),
        _ => None,
    })
}

/// SVG plots of every cell: RMSE with the mean 3σ bound per state group, and
/// SNEES per scenario across methods.
pub fn svg_files(dir: &Path, cells: &[CellSummary]) -> Result<Vec<(String, String)>> {
    let mut files = Vec::new();
    for scenario in Scenario::ALL {
        let present: Vec<&CellSummary> = cells.iter().filter(|c| c.scenario == scenario).collect();
        if present.is_empty() {
            continue;
        }
        let mut snees = Vec::new();
        for cell in &present {
            let cdir = dir.join(scenario.dir_name()).join(cell.method.dir_name());
            let shade = outage_span(&cdir)?;
            let (_, rmse) = read_csv(&cdir.join("rmse.csv"))?;
            let (_, bounds) = read_csv(&cdir.join("bounds.csv"))?;
            for (name, unit, range) in GROUPS {
                let mut series = Vec::new();
                for (c, i) in range.enumerate() {
                    let t = &rmse[0];
                    series.push(Series {
                        label: format!("RMSE {}", STATE_NAMES[i]),
                        points: t.iter().copied().zip(rmse[i + 1].iter().copied()).collect(),
                        dashed: false,
                        color: c,
                    });
                    series.push(Series {
                        label: format!("3σ {}", STATE_NAMES[i]),
                        points: t.iter().copied().zip(bounds[i + 1].iter().copied()).collect(),
                        dashed: true,
                        color: c,
                    });
                }
                let title = format!("{} {} ({})", cell.method.label(), name, scenario.label());
                files.push((
                    format!("{}/{}_{}.svg", scenario.dir_name(), cell.method.dir_name(), name),
                    svg_plot(&title, unit, &series, true, shade),
                ));
            }
            let (_, s) = read_csv(&cdir.join("snees.csv"))?;
            let series = Series {
                label: cell.method.label().into(),
                points: s[0].iter().copied().zip(s[2].iter().copied()).collect(),
                dashed: false,
                color: snees.len(),
            };
            snees.push((series, shade));
        }
        let shade = snees.iter().find_map(|(_, s)| *s);
        let series: Vec<Series> = snees.into_iter().map(|(s, _)| s).collect();
        files.push((
            format!("{}/snees.svg", scenario.dir_name()),
            svg_plot(&format!("SNEES ({})", scenario.label()), "SNEES", &series, true, shade),
        ));
    }
    Ok(files)
}

/// Write the report of campaign `dir` under `dir/report`. Returns the written
/// paths; for [`ReportFormat::Table`] the table text is also returned.
pub fn report(dir: &Path, format: ReportFormat) -> Result<(Vec<PathBuf>, Option<String>)> {
    let cells = load_cells(dir)?;
    let out = dir.join("report");
    let files = match format {
        ReportFormat::Table => vec![("table.txt".to_string(), comparison_table(&cells))],
        ReportFormat::Csv => vec![("table.csv".to_string(), comparison_csv(&cells))],
        ReportFormat::Svg => svg_files(dir, &cells)?,
    };
    let mut written = Vec::new();
    for (rel, text) in &files {
        let path = out.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let table = (format == ReportFormat::Table).then(|| files[0].1.clone());
    Ok((written, table))
}
