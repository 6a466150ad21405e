//! Self-contained SVG line charts drawn from a metrics CSV.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Deserialize;

use copsd::eval::MetricsRecord;

use crate::report::select_checkpoints;
use crate::CliError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// A metrics row whose metric cells may be empty.
#[derive(Clone, Debug, Deserialize)]
struct Row {
    run_id: String,
    method: String,
    dialect: String,
    step: u64,
    budget: usize,
    k: usize,
    pass_at_k_pct: Option<f64>,
    format_rate_pct: Option<f64>,
}

fn parse_rows(text: &str, origin: &str) -> Result<Vec<Row>, CliError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row.map_err(|e: csv::Error| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::Integrity(format!("{origin}:{line}: {e}"))
        })?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub dashed: bool,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_svg(chart: &Chart) -> String {
    let xs: Vec<f64> = chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let (mut x0, mut x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let (y0, y1) = (0.0, 100.0);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y.clamp(y0, y1) - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&chart.title)
    );
    // axes
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    for i in 0..=4 {
        let yv = y0 + (y1 - y0) * i as f64 / 4.0;
        let y = sy(yv);
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#dddddd"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
            LEFT,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            fmt_num(yv)
        );
        let xv = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            sx(xv),
            TOP + ph + 18.0,
            fmt_num(xv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&chart.y_label)
    );
    for (i, series) in chart.series.iter().enumerate() {
        let pts: Vec<String> = series
            .points
            .iter()
            .map(|&(x, y)| format!("{},{}", fmt_num(sx(x)), fmt_num(sy(y))))
            .collect();
        let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"{dash}/>"#,
            pts.join(" "),
            series.color
        );
        for &(x, y) in &series.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{}" cy="{}" r="2.5" fill="{}"/>"#,
                fmt_num(sx(x)),
                fmt_num(sy(y)),
                series.color
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            series.color,
            lx + 30.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn color_of(methods: &[String], m: &str) -> &'static str {
    PALETTE[methods.iter().position(|x| x == m).unwrap_or(0) % PALETTE.len()]
}

/// Mean of the present values at each step, in step order.
fn curve(rows: &[&Row], value: impl Fn(&Row) -> Option<f64>) -> Vec<(f64, f64)> {
    let mut acc: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for r in rows {
        if let Some(v) = value(r).filter(|v| v.is_finite()) {
            let e = acc.entry(r.step).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(s, (t, n))| (s as f64, t / n as f64)).collect()
}

/// Charts for a metrics CSV: one training-dynamics chart per dialect (solid
/// pass@k, dashed format rate, at the smallest budget) and one scaling
/// chart (pass@k of the selected checkpoint versus budget). Returns
/// `(file name, svg)` pairs and the warnings raised.
pub fn plot_metrics(text: &str, origin: &str) -> Result<(Vec<(String, String)>, Vec<String>), CliError> {
    let rows = parse_rows(text, origin)?;
    if rows.is_empty() {
        return Err(CliError::Integrity(format!("{origin}: no rows")));
    }
    let mut warnings = Vec::new();
    let methods: Vec<String> = {
        let mut m: Vec<String> = rows.iter().map(|r| r.method.clone()).collect();
        m.sort();
        m.dedup();
        m
    };
    let smallest = rows.iter().map(|r| r.budget).min().unwrap();
    let k = rows[0].k;
    let mut dialects: Vec<&str> = rows.iter().map(|r| r.dialect.as_str()).collect();
    dialects.sort();
    dialects.dedup();
    let mut files = Vec::new();
    for d in dialects {
        let mut series = Vec::new();
        for m in &methods {
            let sel: Vec<&Row> = rows
                .iter()
                .filter(|r| r.dialect == d && &r.method == m && r.budget == smallest)
                .collect();
            if sel.is_empty() {
                continue;
            }
            for (name, dashed, get) in [
                ("pass@k", false, (|r: &Row| r.pass_at_k_pct) as fn(&Row) -> Option<f64>),
                ("format rate", true, |r: &Row| r.format_rate_pct),
            ] {
                let points = curve(&sel, get);
                if points.is_empty() {
                    warnings.push(format!("{d}/{m}: {name} column is empty; series omitted"));
                    continue;
                }
                series.push(Series {
                    label: format!("{m} {name}"),
                    color: color_of(&methods, m),
                    dashed,
                    points,
                });
            }
        }
        let chart = Chart {
            title: format!("{d}: pass@{k} and format rate (budget {smallest})"),
            x_label: "training step".into(),
            y_label: "percent".into(),
            series,
        };
        files.push((format!("dynamics_{d}.svg"), render_svg(&chart)));
    }

    let complete: Vec<MetricsRecord> = rows
        .iter()
        .filter_map(|r| {
            Some(MetricsRecord {
                run_id: r.run_id.clone(),
                method: r.method.clone(),
                dialect: r.dialect.clone(),
                step: r.step,
                budget: r.budget,
                k: r.k,
                pass_at_k_pct: r.pass_at_k_pct?,
                format_rate_pct: r.format_rate_pct.unwrap_or(f64::NAN),
                repeat2: f64::NAN,
                repeat3: f64::NAN,
                repeat4: f64::NAN,
                repeat5: f64::NAN,
                repeat6: f64::NAN,
                lang_consistency: f64::NAN,
                mean_gen_len: f64::NAN,
            })
        })
        .collect();
    let mut series = Vec::new();
    for m in &methods {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for s in select_checkpoints(&complete).iter().filter(|s| &s.method == m) {
            for (b, r) in &s.by_budget {
                let e = acc.entry(*b).or_insert((0.0, 0));
                e.0 += r.pass_at_k_pct;
                e.1 += 1;
            }
        }
        if acc.is_empty() {
            warnings.push(format!("{m}: no pass@k values; scaling series omitted"));
            continue;
        }
        series.push(Series {
            label: m.clone(),
            color: color_of(&methods, m),
            dashed: false,
            points: acc.into_iter().map(|(b, (t, n))| (b as f64, t / n as f64)).collect(),
        });
    }
    let chart = Chart {
        title: format!("pass@{k} versus generation budget"),
        x_label: "budget (new tokens)".into(),
        y_label: "percent".into(),
        series,
    };
    files.push(("scaling.svg".into(), render_svg(&chart)));
    Ok((files, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "run_id,method,dialect,step,budget,k,pass_at_k_pct,format_rate_pct,repeat2,repeat3,repeat4,repeat5,repeat6,lang_consistency,mean_gen_len\n";

    fn csv(rows: &[&str]) -> String {
        let mut s = HEADER.to_string();
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn two_methods_one_dialect_four_polylines() {
        let text = csv(&[
            "a,copsd,L1,5,64,12,10,50,0,0,0,0,0,1,9",
            "a,copsd,L1,10,64,12,20,60,0,0,0,0,0,1,9",
            "b,grpo,L1,5,64,12,5,40,0,0,0,0,0,1,9",
            "b,grpo,L1,10,64,12,6,45,0,0,0,0,0,1,9",
        ]);
        let (files, warnings) = plot_metrics(&text, "m.csv").unwrap();
        assert!(warnings.is_empty());
        let (name, svg) = &files[0];
        assert_eq!(name, "dynamics_L1.svg");
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert_eq!(svg.matches("<polyline").filter(|_| true).count(), 4);
        let dashed = svg.lines().filter(|l| l.starts_with("<polyline") && l.contains("dasharray")).count();
        assert_eq!(dashed, 2);
        assert_eq!(files[1].0, "scaling.svg");
        // identical input gives identical bytes
        assert_eq!(plot_metrics(&text, "m.csv").unwrap().0, files);
    }

    #[test]
    fn empty_column_omits_series_with_warning() {
        let text = csv(&["a,copsd,L1,5,64,12,10,,0,0,0,0,0,1,9", "a,copsd,L1,10,64,12,20,,0,0,0,0,0,1,9"]);
        let (files, warnings) = plot_metrics(&text, "m.csv").unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(files[0].1.matches("<polyline").count(), 1);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = csv(&["a,copsd,L1,5,64,12,10,50,0,0,0,0,0,1,9", "a,copsd,L1,notastep,64,12,10,50,0,0,0,0,0,1,9"]);
        let err = plot_metrics(&text, "m.csv").unwrap_err().to_string();
        assert!(err.contains("m.csv:3"), "{err}");
    }
}
