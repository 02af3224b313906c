//! SVG plot emission for run and sweep artifacts: loss-vs-step curves, the
//! linear error-vs-loss scatter, and the log-log scatter with the fitted
//! convergence line. SVG is textual and diffable, so tests can parse the
//! output without a rendering stack.

use crate::analysis::{fit_convergence, FitResult};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_series(series: &[Series]) -> Frame {
        let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in series {
            for &(x, y) in &s.points {
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
        // degenerate extents pad to a unit box around the data
        if !(x_min < x_max) {
            x_min -= 0.5;
            x_max += 0.5;
        }
        if !(y_min < y_max) {
            y_min -= 0.5;
            y_max += 0.5;
        }
        let pad_x = 0.04 * (x_max - x_min);
        let pad_y = 0.06 * (y_max - y_min);
        Frame {
            x_min: x_min - pad_x,
            x_max: x_max + pad_x,
            y_min: y_min - pad_y,
            y_max: y_max + pad_y,
        }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn tick_values(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64 + 0.5)
        .unwrap_or(mag * 10.0);
    let first = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut v = first;
    while v <= hi + 1e-12 * span {
        ticks.push(v);
        v += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render a plot to SVG. When `scatter` is false the series are drawn as
/// polylines; an optional straight line y = slope x + intercept is overlaid
/// in frame coordinates, with an annotation string.
pub fn render_svg(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series],
    scatter: bool,
    overlay: Option<(f64, f64, String)>,
    path: &Path,
) -> Result<()> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::EmptySamples("plot input"));
    }
    let frame = Frame::from_series(series);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        xml_escape(title)
    );

    // axes frame
    let (x0, y0) = (MARGIN_L, HEIGHT - MARGIN_B);
    let (x1, y1) = (WIDTH - MARGIN_R, MARGIN_T);
    let _ = writeln!(
        svg,
        r#"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    for t in tick_values(frame.x_min, frame.x_max, 6) {
        let sx = frame.sx(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{sx:.1}" y1="{y0:.1}" x2="{sx:.1}" y2="{:.1}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{sx:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            y0 + 18.0,
            fmt_tick(t)
        );
    }
    for t in tick_values(frame.y_min, frame.y_max, 6) {
        let sy = frame.sy(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{sy:.1}" x2="{x0:.1}" y2="{sy:.1}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            sy + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        xml_escape(xlabel)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        xml_escape(ylabel)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if scatter {
            for &(x, y) in &s.points {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3.2" fill="{color}" fill-opacity="0.75"/>"#,
                    frame.sx(x),
                    frame.sy(y)
                );
            }
        } else {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", frame.sx(x), frame.sy(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.4"/>"#,
                pts.join(" ")
            );
        }
        if series.len() > 1 && i < 12 {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
                x1 - 150.0,
                y1 + 16.0 + 14.0 * i as f64,
                xml_escape(&s.label)
            );
        }
    }

    if let Some((slope, intercept, label)) = overlay {
        let ya = slope * frame.x_min + intercept;
        let yb = slope * frame.x_max + intercept;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-dasharray="6 4" stroke-width="1.3"/>"#,
            frame.sx(frame.x_min),
            frame.sy(ya),
            frame.sx(frame.x_max),
            frame.sy(yb)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            x0 + 12.0,
            y1 + 18.0,
            xml_escape(&label)
        );
    }

    let _ = writeln!(svg, "</svg>");
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, svg)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV readers

/// (step, loss_total) pairs from a records.csv.
pub fn read_records_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let cols: Vec<&str> = header.split(',').collect();
    let step_i = cols.iter().position(|c| *c == "step").unwrap_or(0);
    let loss_i = cols.iter().position(|c| *c == "loss_total").unwrap_or(3);
    let mut out = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() <= loss_i.max(step_i) {
            continue;
        }
        if let (Ok(s), Ok(l)) = (fields[step_i].parse::<f64>(), fields[loss_i].parse::<f64>()) {
            out.push((s, l));
        }
    }
    Ok(out)
}

/// Generic (x, y) reader: columns selected by header name when a header
/// row is present, else the first two columns. Rows without two finite
/// numbers are skipped (their count is returned for warnings).
pub fn read_xy_csv(path: &Path, x_col: &str, y_col: &str) -> Result<(Vec<(f64, f64)>, usize)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().peekable();
    let (mut xi, mut yi) = (0usize, 1usize);
    if let Some(first) = lines.peek() {
        let cols: Vec<&str> = first.split(',').map(str::trim).collect();
        let has_header = cols.iter().any(|c| c.parse::<f64>().is_err() && !c.is_empty());
        if has_header {
            if let (Some(x), Some(y)) = (
                cols.iter().position(|c| *c == x_col),
                cols.iter().position(|c| *c == y_col),
            ) {
                xi = x;
                yi = y;
            }
            lines.next();
        }
    }
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> Option<f64> {
            fields
                .get(i)
                .and_then(|f| f.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
        };
        match (parse(xi), parse(yi)) {
            (Some(x), Some(y)) => out.push((x, y)),
            _ => skipped += 1,
        }
    }
    Ok((out, skipped))
}

// ---------------------------------------------------------------------------
// figure emission

/// Emit the figure set for a run or sweep directory:
/// - loss_vs_step.svg from records.csv (or overlaid runs/*/records.csv),
/// - error_vs_loss.svg and loglog_fit.svg from sweep.csv when present;
///   the fitted line is overlaid and annotated unless the fit is
///   degenerate, in which case a warning goes to stderr.
/// Returns the written paths and the fit (when computed).
pub fn emit_plots(dir: &Path, out_dir: &Path) -> Result<(Vec<PathBuf>, Option<FitResult>)> {
    let mut written = Vec::new();
    let mut fit_out = None;

    // gather loss curves
    let mut curves: Vec<Series> = Vec::new();
    let direct = dir.join("records.csv");
    if direct.exists() {
        let pts = read_records_csv(&direct)?;
        curves.push(Series {
            label: "run".into(),
            points: pts
                .into_iter()
                .filter(|&(_, l)| l > 0.0)
                .map(|(s, l)| (s, l.log10()))
                .collect(),
        });
    } else {
        let runs_dir = dir.join("runs");
        if runs_dir.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(&runs_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("records.csv").exists())
                .collect();
            entries.sort();
            for p in entries {
                let label = p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let pts = read_records_csv(&p.join("records.csv"))?;
                curves.push(Series {
                    label,
                    points: pts
                        .into_iter()
                        .filter(|&(_, l)| l > 0.0)
                        .map(|(s, l)| (s, l.log10()))
                        .collect(),
                });
            }
        }
    }
    if !curves.is_empty() {
        let path = out_dir.join("loss_vs_step.svg");
        render_svg(
            "Training loss",
            "step",
            "log10 loss",
            &curves,
            false,
            None,
            &path,
        )?;
        written.push(path);
    }

    // sweep scatter + fit
    let sweep_csv = dir.join("sweep.csv");
    if sweep_csv.exists() {
        let (pairs, skipped) = read_xy_csv(&sweep_csv, "loss", "error")?;
        if skipped > 0 {
            eprintln!("plot: skipped {skipped} sweep rows without finite (loss, error)");
        }
        if !pairs.is_empty() {
            let path = out_dir.join("error_vs_loss.svg");
            render_svg(
                "L2 error vs empirical loss",
                "loss",
                "L2 error",
                &[Series {
                    label: "runs".into(),
                    points: pairs.clone(),
                }],
                true,
                None,
                &path,
            )?;
            written.push(path);

            let log_pts: Vec<(f64, f64)> = pairs
                .iter()
                .filter(|&&(l, e)| l > 0.0 && e > 0.0)
                .map(|&(l, e)| (l.log10(), e.log10()))
                .collect();
            let positive: Vec<(f64, f64)> = pairs
                .iter()
                .copied()
                .filter(|&(l, e)| l > 0.0 && e > 0.0)
                .collect();
            let overlay = match fit_convergence(&positive) {
                Ok(fit) => {
                    fit_out = Some(fit);
                    Some((
                        fit.n,
                        fit.log10_c,
                        format!("n = {:.3}, C = {:.4} (r2 = {:.3})", fit.n, fit.c, fit.r2),
                    ))
                }
                Err(e) => {
                    eprintln!("plot: fit overlay skipped: {e}");
                    None
                }
            };
            let path = out_dir.join("loglog_fit.svg");
            render_svg(
                "log-log error vs loss",
                "log10 loss",
                "log10 L2 error",
                &[Series {
                    label: "runs".into(),
                    points: log_pts,
                }],
                true,
                overlay,
                &path,
            )?;
            written.push(path);
        }
    }

    if written.is_empty() {
        return Err(Error::EmptySamples(
            "no records.csv, runs/*/records.csv or sweep.csv found",
        ));
    }
    Ok((written, fit_out))
}

/// Cheap structural check used by tests: balanced <svg> document with at
/// least one drawing primitive.
pub fn svg_is_well_formed(text: &str) -> bool {
    let has_open = text.trim_start().starts_with("<svg");
    let has_close = text.trim_end().ends_with("</svg>");
    let primitives = text.matches("<polyline").count()
        + text.matches("<circle").count()
        + text.matches("<line").count();
    let opens = text.matches('<').count();
    let closes = text.matches('>').count();
    has_open && has_close && primitives > 0 && opens == closes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_check_svg() {
        let dir = std::env::temp_dir().join("pinnlab_plot_test");
        let _ = std::fs::remove_dir_all(&dir);
        let path = dir.join("demo.svg");
        let series = [Series {
            label: "demo".into(),
            points: (0..50).map(|i| (i as f64, (i as f64 * 0.2).sin())).collect(),
        }];
        render_svg("demo", "x", "y", &series, false, None, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(svg_is_well_formed(&text));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn empty_series_rejected() {
        let path = std::env::temp_dir().join("pinnlab_plot_empty.svg");
        let series = [Series {
            label: "none".into(),
            points: vec![],
        }];
        assert!(render_svg("t", "x", "y", &series, true, None, &path).is_err());
    }

    #[test]
    fn xy_reader_handles_headers_and_gaps() {
        let dir = std::env::temp_dir().join("pinnlab_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        std::fs::write(&path, "loss,error,extra\n0.1,0.01,9\n,0.5,9\n0.2,0.02,9\n").unwrap();
        let (pairs, skipped) = read_xy_csv(&path, "loss", "error").unwrap();
        assert_eq!(pairs, vec![(0.1, 0.01), (0.2, 0.02)]);
        assert_eq!(skipped, 1);
        // headerless two-column file
        std::fs::write(&path, "0.3,0.03\n0.4,0.04\n").unwrap();
        let (pairs, skipped) = read_xy_csv(&path, "loss", "error").unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(skipped, 0);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn tick_helper_spans_range() {
        let ticks = tick_values(0.0, 10.0, 6);
        assert!(ticks.len() >= 4 && ticks.len() <= 8);
        assert!(ticks.first().unwrap() >= &0.0);
        assert!(ticks.last().unwrap() <= &10.0);
    }
}
