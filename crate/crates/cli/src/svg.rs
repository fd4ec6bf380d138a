//! Minimal static SVG charts.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Distinct hues around the colour wheel.
pub fn palette(i: usize, n: usize) -> String {
    let hue = 360.0 * i as f64 / n.max(1) as f64;
    let light = if i % 2 == 0 { 45 } else { 60 };
    format!("hsl({hue:.1},70%,{light}%)")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

/// One bar per entry, drawn left to right in the given order, with a
/// vertical whisker of ± the entry's spread.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64, f64)]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let top = bars.iter().map(|(_, v, s)| v + s).fold(0.0f64, f64::max).max(1e-12) * 1.1;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let y = |v: f64| HEIGHT - MARGIN - plot_h * (v / top);
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN
    );
    let _ = writeln!(out, r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#, HEIGHT - MARGIN);
    for t in 0..=4 {
        let v = top * t as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            MARGIN - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    let slot = plot_w / bars.len().max(1) as f64;
    for (i, (label, value, spread)) in bars.iter().enumerate() {
        let x0 = MARGIN + slot * i as f64 + slot * 0.15;
        let w = slot * 0.7;
        let cx = x0 + w / 2.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x0:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="steelblue"/>"#,
            y(*value),
            (HEIGHT - MARGIN) - y(*value)
        );
        let (lo, hi) = ((value - spread).max(0.0), value + spread);
        let _ = writeln!(
            out,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black" stroke-width="1.5"/>"#,
            y(lo),
            y(hi)
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN + 16.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Points coloured by group, with a legend.
pub fn scatter(title: &str, points: &[(f64, f64, usize)], group_names: &[String]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, _) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let span_x = (x1 - x0).max(1e-12);
    let span_y = (y1 - y0).max(1e-12);
    let legend_w = 90.0;
    let plot_w = WIDTH - 2.0 * MARGIN - legend_w;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let n = group_names.len();
    for &(x, y, g) in points {
        let px = MARGIN + plot_w * (x - x0) / span_x;
        let py = HEIGHT - MARGIN - plot_h * (y - y0) / span_y;
        let _ = writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="2.5" fill="{}"/>"#, palette(g, n));
    }
    let lx = WIDTH - MARGIN - legend_w + 16.0;
    for (g, name) in group_names.iter().enumerate() {
        let ly = MARGIN + 8.0 + 16.0 * g as f64;
        let _ = writeln!(out, r#"<circle cx="{lx}" cy="{ly}" r="4" fill="{}"/>"#, palette(g, n));
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 10.0, ly + 4.0, escape(name));
    }
    out.push_str("</svg>\n");
    out
}
