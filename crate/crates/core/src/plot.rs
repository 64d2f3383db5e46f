//! Minimal SVG line charts of result rows.
//!
//! Output depends only on the rows, so identical rows give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scenario::ResultRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// One curve per `param` value, rate against orbit time.
    RateVsTime,
    /// Best rate for each `param` value, in row order.
    RateVsParam,
    /// Elevation of stations A and B against orbit time.
    ElevationVsTime,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn series_for(rows: &[ResultRow], kind: PlotKind) -> (Vec<Series>, Option<Vec<String>>, &'static str, &'static str) {
    match kind {
        PlotKind::RateVsTime => {
            let mut out: Vec<Series> = Vec::new();
            for r in rows {
                let Some(y) = r.rate_mean else { continue };
                let label = r.param.clone().unwrap_or_else(|| "rate".into());
                match out.iter_mut().find(|s| s.label == label) {
                    Some(s) => s.points.push((r.t_s, y)),
                    None => out.push(Series {
                        label,
                        points: vec![(r.t_s, y)],
                    }),
                }
            }
            (out, None, "t (s)", "rate")
        }
        PlotKind::RateVsParam => {
            let mut labels: Vec<String> = Vec::new();
            let mut best: Vec<f64> = Vec::new();
            for r in rows {
                let (Some(y), Some(p)) = (r.rate_mean, r.param.as_ref()) else {
                    continue;
                };
                match labels.iter().position(|l| l == p) {
                    Some(i) => best[i] = best[i].max(y),
                    None => {
                        labels.push(p.clone());
                        best.push(y);
                    }
                }
            }
            let points = best.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect();
            let series = vec![Series {
                label: "max rate".into(),
                points,
            }];
            (series, Some(labels), "parameter", "max rate")
        }
        PlotKind::ElevationVsTime => {
            let pick = |name: &str, f: fn(&ResultRow) -> Option<f64>| Series {
                label: name.into(),
                points: rows.iter().filter_map(|r| f(r).map(|e| (r.t_s, e))).collect(),
            };
            let series = vec![pick("station A", |r| r.elev_a_deg), pick("station B", |r| r.elev_b_deg)]
                .into_iter()
                .filter(|s| !s.points.is_empty())
                .collect();
            (series, None, "t (s)", "elevation (deg)")
        }
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e5) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders rows as a standalone SVG document.
pub fn render_svg(rows: &[ResultRow], kind: PlotKind) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("rows", "nothing to plot"));
    }
    let (series, categories, x_name, y_name) = series_for(rows, kind);
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::invalid("rows", format!("no values to plot as {kind:?}")));
    }
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = bounds(all().map(|p| p.0));
    let (mut y0, y1) = bounds(all().map(|p| p.1));
    if kind != PlotKind::ElevationVsTime && y0 > 0.0 {
        y0 = 0.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    let w = &mut svg;
    // Writing into a String cannot fail.
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (ax, ay) = (LEFT, TOP + ph);
    let _ = writeln!(
        w,
        r#"<line x1="{ax}" y1="{ay}" x2="{:.2}" y2="{ay}" stroke="black"/>"#,
        LEFT + pw
    );
    let _ = writeln!(w, r#"<line x1="{ax}" y1="{ay}" x2="{ax}" y2="{TOP}" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y0 + f * (y1 - y0);
        let py = sy(yv);
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            tick_label(yv)
        );
        if categories.is_none() {
            let xv = x0 + f * (x1 - x0);
            let _ = writeln!(
                w,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(xv),
                ay + 16.0,
                tick_label(xv)
            );
        }
    }
    if let Some(labels) = &categories {
        for (i, l) in labels.iter().enumerate() {
            let _ = writeln!(
                w,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(i as f64),
                ay + 16.0,
                escape(l)
            );
        }
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x_name}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        w,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{y_name}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (k, s) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            w,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" fill="{colour}">{}</text>"#,
            LEFT + pw - 120.0,
            TOP + 14.0 * (k as f64 + 1.0),
            escape(&s.label)
        );
    }
    let _ = writeln!(w, "</svg>");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders rows and writes the SVG to `path`.
pub fn emit_plot(rows: &[ResultRow], kind: PlotKind, path: impl AsRef<Path>) -> Result<()> {
    let svg = render_svg(rows, kind)?;
    std::fs::write(path.as_ref(), svg).map_err(|e| Error::io(path.as_ref(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, rate: f64, param: Option<&str>) -> ResultRow {
        ResultRow {
            t_s: t,
            elev_a_deg: Some(45.0),
            range_a_km: Some(700.0),
            elev_b_deg: None,
            range_b_km: None,
            param: param.map(Into::into),
            rate_mean: Some(rate),
            rate_std: Some(0.0),
            qber: Some(0.0),
        }
    }

    #[test]
    fn two_points_one_polyline() {
        let svg = render_svg(&[row(0.0, 0.1, None), row(10.0, 0.2, None)], PlotKind::RateVsTime).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let points = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
        assert_eq!(points.split(' ').count(), 2);
    }

    #[test]
    fn deterministic_bytes() {
        let rows = [
            row(0.0, 0.1, Some("a")),
            row(0.0, 0.3, Some("b")),
            row(10.0, 0.2, Some("a")),
        ];
        let a = render_svg(&rows, PlotKind::RateVsTime).unwrap();
        let b = render_svg(&rows, PlotKind::RateVsTime).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.matches("<polyline").count(), 2);
    }

    #[test]
    fn empty_rejected() {
        assert!(render_svg(&[], PlotKind::RateVsTime).is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plot(&[], PlotKind::RateVsParam, dir.path().join("x.svg")).is_err());
        assert!(!dir.path().join("x.svg").exists());
    }

    #[test]
    fn param_plot_uses_best_rate() {
        let rows = [
            row(0.0, 0.1, Some("0.4")),
            row(10.0, 0.3, Some("0.4")),
            row(0.0, 0.5, Some("1.2")),
        ];
        let svg = render_svg(&rows, PlotKind::RateVsParam).unwrap();
        assert!(svg.contains(">0.4<") && svg.contains(">1.2<"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn flat_series_still_renders() {
        let svg = render_svg(&[row(0.0, 0.0, None)], PlotKind::RateVsTime).unwrap();
        assert!(!svg.contains("NaN"));
    }
}
