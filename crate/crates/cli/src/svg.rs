//! Minimal static SVG charts: line plots with optional confidence bands and
//! two-group scatter plots.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Lower and upper band edge per point.
    pub band: Option<Vec<(f64, f64)>>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (mut x0, mut x1) = min_max(xs);
        let (mut y0, mut y1) = min_max(ys);
        if x1 <= x0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        Self { x0, x1, y0: y0 - pad, y1: y1 + pad }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn min_max(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
}

fn header(out: &mut String, title: &str, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(out, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#);
    for i in 0..=4 {
        let fx = frame.x0 + (frame.x1 - frame.x0) * i as f64 / 4.0;
        let fy = frame.y0 + (frame.y1 - frame.y0) * i as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, frame.px(fx), b + 16.0, tick(fx));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, l - 6.0, frame.py(fy) + 4.0, tick(fy));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1).chain(s.band.iter().flatten().flat_map(|&(lo, hi)| [lo, hi])));
    let frame = Frame::fit(xs, ys.collect::<Vec<_>>().into_iter());
    let mut out = String::new();
    header(&mut out, title, &frame, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        if let Some(band) = &s.band {
            let mut d = String::new();
            for (j, (p, (_, hi))) in s.points.iter().zip(band).enumerate() {
                let _ = write!(d, "{}{:.1} {:.1} ", if j == 0 { "M" } else { "L" }, frame.px(p.0), frame.py(*hi));
            }
            for (p, (lo, _)) in s.points.iter().zip(band).rev() {
                let _ = write!(d, "L{:.1} {:.1} ", frame.px(p.0), frame.py(*lo));
            }
            let _ = writeln!(out, r#"<path d="{}Z" fill="{colour}" fill-opacity="0.2" stroke="none"/>"#, d);
        }
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", frame.px(x), frame.py(y))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, pts.join(" "));
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="12" height="3" fill="{colour}"/>"#, W - MARGIN - 150.0, ly - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{ly}">{}</text>"#, W - MARGIN - 132.0, escape(&s.name));
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter plot; `highlight` points are drawn as crosses on top of the rest.
pub fn scatter(title: &str, x_label: &str, y_label: &str, others: &[(f64, f64)], highlight: &[(f64, f64)], highlight_name: &str) -> String {
    let all = || others.iter().chain(highlight);
    let frame = Frame::fit(all().map(|p| p.0).collect::<Vec<_>>().into_iter(), all().map(|p| p.1).collect::<Vec<_>>().into_iter());
    let mut out = String::new();
    header(&mut out, title, &frame, x_label, y_label);
    for &(x, y) in others {
        let _ = writeln!(out, r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="none" stroke="#2ca02c"/>"##, frame.px(x), frame.py(y));
    }
    for &(x, y) in highlight {
        let (cx, cy) = (frame.px(x), frame.py(y));
        let _ = writeln!(
            out,
            r##"<path d="M{:.1} {:.1} L{:.1} {:.1} M{:.1} {:.1} L{:.1} {:.1}" stroke="#1f77b4" stroke-width="2"/>"##,
            cx - 5.0,
            cy - 5.0,
            cx + 5.0,
            cy + 5.0,
            cx - 5.0,
            cy + 5.0,
            cx + 5.0,
            cy - 5.0
        );
    }
    let _ = writeln!(out, r#"<text x="{}" y="{MARGIN}">x {}</text>"#, W - MARGIN - 120.0, escape(highlight_name));
    out.push_str("</svg>\n");
    out
}
