//! Minimal SVG line/marker plots for spectra and depth fits.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Symmetric error bars.
    pub err: Option<Vec<f64>>,
    pub color: &'static str,
    pub markers: bool,
    pub dashed: bool,
}

impl Series {
    pub fn line(name: &str, x: &[f64], y: &[f64], color: &'static str) -> Self {
        Series { name: name.into(), x: x.to_vec(), y: y.to_vec(), err: None, color, markers: false, dashed: false }
    }

    pub fn markers(name: &str, x: &[f64], y: &[f64], color: &'static str) -> Self {
        Series { markers: true, ..Series::line(name, x, y, color) }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Five evenly spaced tick values.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..5).map(|k| lo + (hi - lo) * k as f64 / 4.0).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    pub fn to_svg(&self) -> String {
        let xs = extent(self.series.iter().flat_map(|s| s.x.iter().copied()));
        let ys = extent(self.series.iter().flat_map(|s| {
            let e = s.err.clone().unwrap_or_else(|| vec![0.0; s.y.len()]);
            s.y.iter().zip(e).flat_map(|(y, e)| [y - e, y + e]).collect::<Vec<_>>()
        }));
        let px = |x: f64| LEFT + (x - xs.0) / (xs.1 - xs.0) * (W - LEFT - RIGHT);
        let py = |y: f64| H - BOTTOM - (y - ys.0) / (ys.1 - ys.0) * (H - TOP - BOTTOM);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (W - RIGHT + LEFT) / 2.0, escape(&self.title));
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
        let _ = writeln!(s, r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="black"/>"#);
        for t in ticks(xs.0, xs.1) {
            let x = px(t);
            let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, y0 + 5.0);
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y0 + 18.0, fmt_tick(t));
        }
        for t in ticks(ys.0, ys.1) {
            let y = py(t);
            let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/>"#, x0 - 5.0);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 8.0, y + 4.0, fmt_tick(t));
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(&self.y_label)
        );

        for (k, ser) in self.series.iter().enumerate() {
            let pts: Vec<(f64, f64)> =
                ser.x.iter().zip(&ser.y).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(&x, &y)| (px(x), py(y))).collect();
            if ser.markers {
                for &(x, y) in &pts {
                    let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3.5" fill="{}"/>"#, ser.color);
                }
            } else if !pts.is_empty() {
                let d: Vec<String> = pts.iter().enumerate().map(|(i, (x, y))| format!("{}{x:.1},{y:.1}", if i == 0 { "M" } else { "L" })).collect();
                let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
                let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.8"{dash}/>"#, d.join(" "), ser.color);
            }
            if let Some(err) = &ser.err {
                for ((&x, &y), &e) in ser.x.iter().zip(&ser.y).zip(err) {
                    let _ = writeln!(
                        s,
                        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}"/>"#,
                        px(x),
                        py(y - e),
                        px(x),
                        py(y + e),
                        ser.color
                    );
                }
            }
            let ly = TOP + 10.0 + 20.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="2"/>"#,
                W - RIGHT + 15.0,
                W - RIGHT + 35.0,
                ser.color
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, W - RIGHT + 40.0, ly + 4.0, escape(&ser.name));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (1e-2..1e4).contains(&v.abs()) {
        format!("{:.2}", v)
    } else {
        format!("{:.2e}", v)
    }
}
