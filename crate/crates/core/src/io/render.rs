//! Heatmaps as binary PGM and per-layer curves as standalone SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A real-valued `H×W` map.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::dims(format!("{} values", height * width), values.len()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }
}

/// Maps `[min, max]` linearly onto `0..=255`, rounding half up and clamping.
pub fn to_gray(v: f64, min: f64, max: f64) -> u8 {
    let t = if max > min { (v - min) / (max - min) } else { 0.0 };
    (t * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Encodes a heatmap as P5 with the value range stated in a comment line.
pub fn encode_pgm(map: &Heatmap, min: f64, max: f64) -> Result<Vec<u8>> {
    if let Some(i) = map.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidValue(format!("non-finite heatmap value at {i}")));
    }
    if !(min.is_finite() && max.is_finite() && max > min) {
        return Err(Error::InvalidValue(format!("invalid heatmap range [{min}, {max}]")));
    }
    let mut out = format!(
        "P5\n# min={min:.6} max={max:.6}\n{} {}\n255\n",
        map.width, map.height
    )
    .into_bytes();
    out.extend(map.values.iter().map(|&v| to_gray(v, min, max)));
    Ok(out)
}

/// Writes a `[0, 1]` heatmap (such as an averaged unit SAM) as PGM.
pub fn render_heatmap(map: &Heatmap, path: impl AsRef<Path>) -> Result<()> {
    render_heatmap_range(map, 0.0, 1.0, path)
}

pub fn render_heatmap_range(map: &Heatmap, min: f64, max: f64, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_pgm(map, min, max)?;
    fs::write(path.as_ref(), bytes)
        .map_err(|e| Error::IoFailure(format!("{}: {e}", path.as_ref().display())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn encode_svg(curve: &Curve) -> Result<String> {
    let points: Vec<(f64, f64)> = curve.series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if points.is_empty() {
        return Err(Error::IoFailure("curve has no data points; nothing written".into()));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::IoFailure("curve contains non-finite points".into()));
    }
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (64.0, 24.0, 36.0, 52.0);
    let span = |vals: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) }
    };
    let (x0, x1) = span(&mut points.iter().map(|p| p.0));
    let (y0, y1) = span(&mut points.iter().map(|p| p.1));
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#, w / 2.0, escape(&curve.title));
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for i in 0..=4 {
        let t = f64::from(i) / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="10">{xv:.3}</text>"#, px(xv), h - bottom + 14.0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{yv:.3}</text>"#, left - 4.0, py(yv) + 3.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#, (left + w - right) / 2.0, h - 12.0, escape(&curve.x_label));
    let _ = writeln!(svg, r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#, (top + h - bottom) / 2.0, (top + h - bottom) / 2.0, escape(&curve.y_label));
    for (i, s) in curve.series.iter().enumerate().filter(|(_, s)| !s.points.is_empty()) {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        for &(x, y) in &s.points {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, px(x), py(y));
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#, w - right - 120.0, top + 14.0 * (i as f64 + 1.0), escape(&s.label));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes an SVG line chart. Nothing is written if there are no points.
pub fn render_curve(curve: &Curve, path: impl AsRef<Path>) -> Result<()> {
    let svg = encode_svg(curve)?;
    fs::write(path.as_ref(), svg)
        .map_err(|e| Error::IoFailure(format!("{}: {e}", path.as_ref().display())))
}
