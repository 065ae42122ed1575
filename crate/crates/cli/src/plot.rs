//! Bare-bones SVG line plots for quick inspection.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn extent(v: &[f64]) -> (f64, f64) {
    let (lo, hi) = v
        .iter()
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Renders y against x with labelled axes and min/max tick values.
pub fn line_plot(x: &[f64], y: &[f64], x_label: &str, y_label: &str) -> String {
    let (x0, x1) = extent(x);
    let (y0, y1) = extent(y);
    let sx = |v: f64| MARGIN + (v - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |v: f64| H - MARGIN - (v - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    // Thin very long series to about two points per pixel column.
    let stride = (x.len() / (2 * W as usize)).max(1);
    let mut path = String::new();
    let mut pen_down = false;
    for (&a, &b) in x.iter().zip(y).step_by(stride) {
        if !(a.is_finite() && b.is_finite()) {
            pen_down = false;
            continue;
        }
        let cmd = if pen_down { 'L' } else { 'M' };
        let _ = write!(path, "{cmd}{:.2},{:.2} ", sx(a), sy(b));
        pen_down = true;
    }

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="steelblue" stroke-width="1"/>"#, path.trim_end());
    let text = |s: &mut String, x: f64, y: f64, anchor: &str, body: &str| {
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{body}</text>"#);
    };
    text(&mut s, MARGIN, H - MARGIN + 16.0, "start", &format!("{x0:.4e}"));
    text(&mut s, W - MARGIN, H - MARGIN + 16.0, "end", &format!("{x1:.4e}"));
    text(&mut s, MARGIN - 4.0, H - MARGIN, "end", &format!("{y0:.3e}"));
    text(&mut s, MARGIN - 4.0, MARGIN + 4.0, "end", &format!("{y1:.3e}"));
    text(&mut s, W / 2.0, H - 12.0, "middle", x_label);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle" transform="rotate(-90 14 {:.1})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    s.push_str("</svg>\n");
    s
}
