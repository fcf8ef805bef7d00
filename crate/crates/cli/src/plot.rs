//! Minimal static SVG charts: line series and labelled bars.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Finite `[lo, hi]` with `hi > lo`.
fn span(values: impl Iterator<Item = f64>, zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if zero {
        lo = lo.min(0.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    (lo, hi)
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>
<line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
        WIDTH / 2.0,
        escape(title),
        HEIGHT - BOTTOM,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM,
        HEIGHT - BOTTOM,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        HEIGHT - 16.0,
        escape(x_label),
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
        escape(y_label),
    );
}

fn y_ticks(out: &mut String, lo: f64, hi: f64) {
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = HEIGHT - BOTTOM - (HEIGHT - TOP - BOTTOM) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0,
            tick_label(v)
        );
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// One polyline per named series of `(x, y)` points.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut out = String::new();
    frame(&mut out, title, x_label, y_label);
    let points = || series.iter().flat_map(|(_, p)| p.iter().copied());
    let (x0, x1) = span(points().map(|p| p.0), false);
    let (y0, y1) = span(points().map(|p| p.1), false);
    y_ticks(&mut out, y0, y1);
    for i in 0..=4 {
        let v = x0 + (x1 - x0) * i as f64 / 4.0;
        let x = LEFT + (WIDTH - LEFT - RIGHT) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#,
            HEIGHT - BOTTOM + 16.0,
            tick_label(v)
        );
    }
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * (WIDTH - LEFT - RIGHT);
    let sy = |y: f64| HEIGHT - BOTTOM - (y - y0) / (y1 - y0) * (HEIGHT - TOP - BOTTOM);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        if pts.len() <= 20 {
            for c in &coords {
                let (x, y) = c.split_once(',').expect("formatted pair");
                let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}" text-anchor="end">{}</text>"#,
            WIDTH - RIGHT - 4.0,
            TOP + 14.0 * (k as f64 + 1.0),
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bars from zero with the value printed above each.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let mut out = String::new();
    frame(&mut out, title, "", y_label);
    let (y0, y1) = span(bars.iter().map(|b| b.1), true);
    y_ticks(&mut out, y0, y1);
    let slot = (WIDTH - LEFT - RIGHT) / bars.len().max(1) as f64;
    let sy = |y: f64| HEIGHT - BOTTOM - (y - y0) / (y1 - y0) * (HEIGHT - TOP - BOTTOM);
    for (k, (name, value)) in bars.iter().enumerate() {
        let x = LEFT + slot * k as f64 + slot * 0.15;
        let w = slot * 0.7;
        let v = if value.is_finite() { *value } else { 0.0 };
        let (top, bottom) = (sy(v.max(0.0)), sy(v.min(0.0)));
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{top:.1}" width="{w:.1}" height="{:.1}" fill="{}"/>"#,
            bottom - top,
            COLORS[k % COLORS.len()]
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{value:.4}</text>"#,
            x + w / 2.0,
            top - 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x + w / 2.0,
            HEIGHT - BOTTOM + 16.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
