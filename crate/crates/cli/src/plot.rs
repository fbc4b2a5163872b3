//! Self-contained SVG charts. The plotted numbers are repeated in a comment
//! block so the file carries its own data.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD_L: f64 = 60.0;
const PAD_R: f64 = 130.0;
const PAD_T: f64 = 30.0;
const PAD_B: f64 = 45.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace("--", "- -")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn header(title: &str, data: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, "<!-- data\n{}-->", esc(data));
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" font-size="14" text-anchor="middle" font-family="sans-serif">{}</text>"#, W / 2.0, esc(title));
    s
}

fn axes(s: &mut String, x: (f64, f64), y: (f64, f64), xlabel: &str, ylabel: &str) {
    let (x0, x1, y0, y1) = (PAD_L, W - PAD_R, H - PAD_B, PAD_T);
    let _ = writeln!(s, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yy = y0 + (y1 - y0) * f;
        let v = y.0 + (y.1 - y.0) * f;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" font-size="10" text-anchor="end" font-family="sans-serif">{}</text>"#, x0 - 4.0, yy + 3.0, fmt_tick(v));
        let xx = x0 + (x1 - x0) * f;
        let v = x.0 + (x.1 - x.0) * f;
        let _ = writeln!(s, r#"<text x="{xx:.1}" y="{}" font-size="10" text-anchor="middle" font-family="sans-serif">{}</text>"#, y0 + 14.0, fmt_tick(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif">{}</text>"#, (x0 + x1) / 2.0, H - 8.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(ylabel)
    );
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn map(v: f64, r: (f64, f64), a: f64, b: f64) -> f64 {
    a + (v - r.0) / (r.1 - r.0) * (b - a)
}

/// Line chart of several series sharing the axes.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series], data: &str) -> String {
    let xr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut s = header(title, data);
    axes(&mut s, xr, yr, xlabel, ylabel);
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        for (j, &(x, y)) in ser.points.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2} ", if j == 0 { "M" } else { "L" }, map(x, xr, PAD_L, W - PAD_R), map(y, yr, H - PAD_B, PAD_T));
        }
        let _ = writeln!(s, r#"<path d="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#, d.trim_end());
        let ly = PAD_T + 16.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{:.1}" width="12" height="3" fill="{color}"/>"#, W - PAD_R + 8.0, ly);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" font-size="11" font-family="sans-serif">{}</text>"#, W - PAD_R + 24.0, ly + 4.0, esc(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

/// Bar chart with one labeled bar per entry.
pub fn bar_chart(title: &str, ylabel: &str, bars: &[(String, f64)], data: &str) -> String {
    let top = bars.iter().map(|b| b.1).fold(0.0, f64::max).max(1e-12);
    let yr = (0.0, top);
    let mut s = header(title, data);
    axes(&mut s, (0.0, bars.len() as f64), yr, "", ylabel);
    let slot = (W - PAD_R - PAD_L) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = PAD_L + slot * i as f64 + slot * 0.1;
        let y = map(*v, yr, H - PAD_B, PAD_T);
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{}: {v}</title></rect>"#,
            slot * 0.8,
            (H - PAD_B - y).max(0.0),
            COLORS[0],
            esc(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Cheap structural check used before reporting success.
pub fn looks_like_svg(text: &str) -> bool {
    text.starts_with("<svg") && text.trim_end().ends_with("</svg>")
}
