//! CSV tables and minimal SVG charts.
//!
//! Every CSV carries a header row and a trailing `config_hash` column; fields
//! are comma separated with `.` decimals and LF line endings.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliResult;

#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    hash: String,
}

impl Table {
    pub fn new(header: &[&str], hash: &str) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            hash: hash.to_string(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{},config_hash", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{},{}", r.iter().map(|f| escape(f)).collect::<Vec<_>>().join(","), self.hash);
        }
        out
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

fn escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Shortest round-tripping decimal rendering.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// One line of a chart: `(x, mean, std)` points with a ±std band.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64, f64)>,
}

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let lo = |v: f64, w: f64| if v.is_finite() { v.min(w) } else { w };
        let hi = |v: f64, w: f64| if v.is_finite() { v.max(w) } else { w };
        let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (lo(a, v), hi(b, v)));
        let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (lo(a, v), hi(b, v)));
        if !(x1 > x0) {
            x0 -= 0.5;
            x1 = x0 + 1.0;
        }
        if !(y1 > y0) {
            y0 -= 0.5;
            y1 = y0 + 1.0;
        }
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, xml(title));
        let (l, r, t, b) = (PAD, W - PAD, PAD, H - PAD);
        let _ = writeln!(out, r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            let (xp, yp) = (self.px(xv), self.py(yv));
            let _ = writeln!(out, r#"<text x="{xp:.1}" y="{}" text-anchor="middle">{}</text>"#, b + 16.0, tick(xv));
            let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, l - 6.0, yp + 4.0, tick(yv));
        }
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, xml(xlabel));
        let _ = writeln!(
            out,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            xml(ylabel)
        );
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn legend(out: &mut String, names: &[&str]) {
    for (k, name) in names.iter().enumerate() {
        let y = PAD + 14.0 * k as f64;
        let c = PALETTE[k % PALETTE.len()];
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/>"#, W - PAD - 110.0, y - 9.0);
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, W - PAD - 95.0, xml(name));
    }
}

/// Mean lines with shaded ±std bands.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let frame = Frame::new(
        pts.clone().map(|p| p.0),
        pts.clone().flat_map(|p| [p.1 - p.2, p.1 + p.2]),
    );
    let mut out = String::new();
    frame.axes(&mut out, title, xlabel, ylabel);
    for (k, s) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let finite: Vec<_> = s.points.iter().filter(|p| p.1.is_finite()).collect();
        if finite.is_empty() {
            continue;
        }
        let mut band = String::new();
        for p in &finite {
            let _ = write!(band, "{:.2},{:.2} ", frame.px(p.0), frame.py(p.1 + p.2.max(0.0)));
        }
        for p in finite.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", frame.px(p.0), frame.py(p.1 - p.2.max(0.0)));
        }
        let _ = writeln!(out, r#"<polygon points="{}" fill="{c}" fill-opacity="0.2" stroke="none"/>"#, band.trim_end());
        let line: Vec<String> = finite.iter().map(|p| format!("{:.2},{:.2}", frame.px(p.0), frame.py(p.1))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, line.join(" "));
    }
    legend(&mut out, &series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Overlaid normalized histograms as step areas over shared bin edges.
pub fn histogram_chart(title: &str, xlabel: &str, edges: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let frame = Frame::new(
        edges.iter().copied(),
        series.iter().flat_map(|s| s.1.iter().copied()).chain([0.0]),
    );
    let mut out = String::new();
    frame.axes(&mut out, title, xlabel, "fraction");
    for (k, (_, fractions)) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let mut d = format!("M{:.2},{:.2}", frame.px(edges[0]), frame.py(0.0));
        for (i, &f) in fractions.iter().enumerate() {
            let _ = write!(
                d,
                " L{:.2},{:.2} L{:.2},{:.2}",
                frame.px(edges[i]),
                frame.py(f),
                frame.px(edges[i + 1]),
                frame.py(f)
            );
        }
        let _ = write!(d, " L{:.2},{:.2} Z", frame.px(edges[edges.len() - 1]), frame.py(0.0));
        let _ = writeln!(out, r#"<path d="{d}" fill="{c}" fill-opacity="0.35" stroke="{c}"/>"#);
    }
    legend(&mut out, &series.iter().map(|s| s.0.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Fixed-width histogram on `[lo, hi]`; values outside are clipped to the end bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo,
            hi,
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, x: f64) {
        let n = self.counts.len();
        let x = x.clamp(self.lo, self.hi);
        let k = (((x - self.lo) / (self.hi - self.lo)) * n as f64).floor() as usize;
        self.counts[k.min(n - 1)] += 1;
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n)
            .map(|k| if k == n { self.hi } else { self.lo + (self.hi - self.lo) * k as f64 / n as f64 })
            .collect()
    }

    pub fn fractions(&self) -> Vec<f64> {
        let t = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_hash_and_lf() {
        let mut t = Table::new(&["a", "b"], "00ff");
        t.push(vec!["1".into(), "x,y".into()]);
        assert_eq!(t.render(), "a,b,config_hash\n1,\"x,y\",00ff\n");
    }

    #[test]
    fn histogram_clips_into_end_bins() {
        let mut h = Histogram::new(-0.15, 0.15, 3);
        for x in [-1.0, -0.15, 0.0, 0.149, 0.15, 2.0] {
            h.add(x);
        }
        assert_eq!(h.counts, vec![2, 1, 3]);
        assert_eq!(h.edges().len(), 4);
    }

    #[test]
    fn charts_are_well_formed() {
        let s = Series {
            name: "svpg".into(),
            points: vec![(0.0, 1.0, 0.1), (1.0, 0.5, 0.2)],
        };
        let svg = line_chart("t", "x", "y", &[s]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        let h = histogram_chart("h", "w", &[0.0, 0.5, 1.0], &[("bp".into(), vec![0.3, 0.7])]);
        assert!(h.contains("<path"));
    }
}
