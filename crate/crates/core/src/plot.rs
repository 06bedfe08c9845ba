//! Minimal SVG line charts: polylines, axes, tick labels and a legend.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Draw markers only, without connecting lines.
    pub scatter: bool,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const W: f64 = 420.0;
const H: f64 = 320.0;
const MARGIN: f64 = 55.0;

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.05 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_panel(out: &mut String, panel: &Panel, x0: f64) {
    let (xmin, xmax) = bounds(panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (ymin, ymax) = bounds(panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let px = |x: f64| x0 + MARGIN + (x - xmin) / (xmax - xmin) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - ymin) / (ymax - ymin) * (H - 2.0 * MARGIN);
    let _ = writeln!(
        out,
        r#"<rect x="{:.1}" y="{MARGIN:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        x0 + MARGIN,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="25" text-anchor="middle" font-size="14">{}</text>"#,
        x0 + W / 2.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">{}</text>"#,
        x0 + W / 2.0,
        H - 12.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        x0 + 14.0,
        H / 2.0,
        x0 + 14.0,
        H / 2.0,
        escape(&panel.y_label)
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = xmin + t * (xmax - xmin);
        let yv = ymin + t * (ymax - ymin);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">{}</text>"#,
            px(xv),
            H - MARGIN + 14.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="9">{}</text>"#,
            x0 + MARGIN - 4.0,
            py(yv) + 3.0,
            tick(yv)
        );
    }
    for (si, s) in panel.series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if !s.scatter && pts.len() > 1 {
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#);
        }
        let ly = MARGIN + 12.0 + 14.0 * si as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="10" fill="{color}">{}</text>"#,
            x0 + MARGIN + 6.0,
            escape(&s.name)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders panels side by side.
pub fn render(panels: &[Panel]) -> String {
    let width = W * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{H:.0}" viewBox="0 0 {width:.0} {H:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, W * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_svg(path: &Path, panels: &[Panel]) -> Result<()> {
    std::fs::write(path, render(panels)).map_err(|e| Error::io(path, e))
}
