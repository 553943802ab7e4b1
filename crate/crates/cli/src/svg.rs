//! Hand-written SVG: line plots and decision-boundary rasters. Coordinates
//! are printed at fixed precision so the same inputs give the same bytes.

use std::fmt::Write;

use freematch_core::ndcore::{argmax, MlpModel, Tensor};
use freematch_core::synthdata::SslData;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];
const LIGHT: [&str; 8] = [
    "#c6dbef", "#f7c6c5", "#c7e9c0", "#dadaeb", "#fdd0a2", "#c5eef2", "#e0cfc9", "#f7d5ec",
];

pub struct Series {
    pub name: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: &str, color: &'static str, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.to_string(),
            color,
            points,
        }
    }
}

pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub y_range: Option<(f64, f64)>,
    pub series: Vec<Series>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

impl LinePlot {
    pub fn render(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = bounds(all().map(|p| p.0));
        let (y0, y1) = self.y_range.unwrap_or_else(|| bounds(all().map(|p| p.1)));
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#ddd"/>"##,
                LEFT,
                sy(yv),
                LEFT + pw,
                sy(yv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                sy(yv) + 4.0,
                tick(yv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(xv),
                TOP + ph + 18.0,
                tick(xv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, series) in self.series.iter().enumerate() {
            let mut pts = String::new();
            for &(x, y) in series.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y.clamp(y0, y1)));
            }
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                series.color,
                pts.trim_end()
            );
            let ly = TOP + 14.0 + 16.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="3"/>"#,
                LEFT + pw - 150.0,
                LEFT + pw - 130.0,
                series.color
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
                LEFT + pw - 124.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Predicted class over a `cells x cells` grid covering the data, drawn as
/// one rectangle per run of equal predictions along each row, with the
/// unlabeled points and the labeled points on top.
pub fn boundary(model: &MlpModel, data: &SslData, cells: usize, title: &str) -> freematch_core::Result<String> {
    let xs = || {
        [&data.labeled, &data.unlabeled, &data.test]
            .into_iter()
            .flat_map(|d| (0..d.len()).map(move |i| d.points.row(i).to_vec()))
    };
    let (mut x0, mut x1) = bounds(xs().map(|p| p[0]));
    let (mut y0, mut y1) = bounds(xs().map(|p| p[1]));
    let (px, py) = (0.1 * (x1 - x0), 0.1 * (y1 - y0));
    x0 -= px;
    x1 += px;
    y0 -= py;
    y1 += py;

    let size = 600.0;
    let cell = size / cells as f64;
    let sx = |x: f64| (x - x0) / (x1 - x0) * size;
    let sy = |y: f64| (1.0 - (y - y0) / (y1 - y0)) * size;

    let mut grid = Vec::with_capacity(cells * cells * 2);
    for r in 0..cells {
        // row 0 at the top of the picture
        let y = y1 - (r as f64 + 0.5) / cells as f64 * (y1 - y0);
        for c in 0..cells {
            grid.push(x0 + (c as f64 + 0.5) / cells as f64 * (x1 - x0));
            grid.push(y);
        }
    }
    let logits = model.forward(&Tensor::new(vec![cells * cells, 2], grid)?)?;
    let pred: Vec<usize> = (0..cells * cells).map(|i| argmax(logits.row(i))).collect();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{:.0}" viewBox="0 0 {size} {:.0}" font-family="sans-serif" font-size="14" shape-rendering="crispEdges">"#,
        size + 30.0,
        size + 30.0
    );
    let _ = writeln!(s, "<g>");
    for r in 0..cells {
        let row = &pred[r * cells..(r + 1) * cells];
        let mut start = 0;
        while start < cells {
            let k = row[start];
            let mut end = start + 1;
            while end < cells && row[end] == k {
                end += 1;
            }
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                start as f64 * cell,
                r as f64 * cell,
                (end - start) as f64 * cell,
                cell,
                LIGHT[k % LIGHT.len()]
            );
            start = end;
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g shape-rendering="auto">"#);
    let u = &data.unlabeled;
    for i in 0..u.len() {
        let p = u.points.row(i);
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}" fill-opacity="0.55"/>"#,
            sx(p[0]),
            sy(p[1]),
            PALETTE[u.labels[i] % PALETTE.len()]
        );
    }
    let l = &data.labeled;
    for i in 0..l.len() {
        let p = l.points.row(i);
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="7" fill="{}" stroke="black" stroke-width="2"/>"#,
            sx(p[0]),
            sy(p[1]),
            PALETTE[l.labels[i] % PALETTE.len()]
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        size / 2.0,
        size + 21.0,
        escape(title)
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}
