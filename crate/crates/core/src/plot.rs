//! Minimal SVG output for the mass profiles and phase portraits.

use std::fmt::Write;

pub const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Series longer than this are thinned before drawing.
pub const MAX_POINTS: usize = 4000;

pub struct Svg {
    pub width: f64,
    pub height: f64,
    body: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Svg {
        Svg { width, height, body: String::new() }
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str, width: f64) {
        let _ = writeln!(self.body, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{stroke}" stroke-width="{width}"/>"#, a.0, a.1, b.0, b.1);
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64) {
        if pts.len() < 2 {
            return;
        }
        let mut p = String::new();
        for (x, y) in pts {
            let _ = write!(p, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(self.body, r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#, p.trim_end());
    }

    pub fn circle(&mut self, c: (f64, f64), r: f64, fill: &str, stroke: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="{fill}" stroke="{stroke}"/>"#, c.0, c.1);
    }

    pub fn rect(&mut self, c: (f64, f64), side: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<rect x="{:.2}" y="{:.2}" width="{side:.2}" height="{side:.2}" fill="{fill}"/>"#, c.0 - side / 2.0, c.1 - side / 2.0);
    }

    pub fn text(&mut self, at: (f64, f64), s: &str, size: f64, anchor: &str) {
        let _ = writeln!(self.body, r#"<text x="{:.2}" y="{:.2}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{}</text>"#, at.0, at.1, esc(s));
    }

    pub fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Line chart of several `(x, y)` series with axes and a legend.
pub fn line_chart(series: &[(String, Vec<(f64, f64)>)], title: &str, xlabel: &str, ylabel: &str) -> String {
    let (w, h) = (800.0, 480.0);
    let (l, r, t, b) = (70.0, 130.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        if x.is_finite() && y.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = w - l - r;
    let ph = h - t - b;
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| t + ph - (y - y0) / (y1 - y0) * ph;
    let mut svg = Svg::new(w, h);
    svg.text((w / 2.0, 24.0), title, 16.0, "middle");
    svg.line((l, t + ph), (l + pw, t + ph), "black", 1.0);
    svg.line((l, t), (l, t + ph), "black", 1.0);
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        svg.line((sx(fx), t + ph), (sx(fx), t + ph + 5.0), "black", 1.0);
        svg.text((sx(fx), t + ph + 18.0), &format!("{fx:.3}"), 11.0, "middle");
        svg.line((l - 5.0, sy(fy)), (l, sy(fy)), "black", 1.0);
        svg.text((l - 8.0, sy(fy) + 4.0), &format!("{fy:.3}"), 11.0, "end");
    }
    svg.text((l + pw / 2.0, h - 10.0), xlabel, 13.0, "middle");
    svg.text((16.0, t + ph / 2.0), ylabel, 13.0, "middle");
    for (k, (name, data)) in series.iter().enumerate() {
        let col = PALETTE[k % PALETTE.len()];
        let stride = data.len().div_ceil(MAX_POINTS).max(1);
        let p: Vec<(f64, f64)> = data.iter().step_by(stride).filter(|p| p.0.is_finite() && p.1.is_finite()).map(|&(x, y)| (sx(x), sy(y))).collect();
        svg.polyline(&p, col, 1.5);
        let ly = t + 16.0 + 18.0 * k as f64;
        svg.line((w - r + 10.0, ly - 4.0), (w - r + 34.0, ly - 4.0), col, 3.0);
        svg.text((w - r + 40.0, ly), name, 12.0, "start");
    }
    svg.finish()
}
