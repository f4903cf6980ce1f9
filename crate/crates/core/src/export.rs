//! CSV tables and SVG pictures.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use crate::circle::RadialFunction;

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:?}")
}

/// A header and rows of already formatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k].as_str()).collect())
    }

    pub fn write_to(&self, out: impl Write) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        self.write_to(std::fs::File::create(path)?)
    }
}

/// Format a float cell, or `""` for `None`.
pub fn cell(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

fn boundary_points(f: &RadialFunction) -> Vec<(f64, f64)> {
    f.grid()
        .nodes()
        .iter()
        .zip(f.values())
        .map(|(&t, &r)| (r * t.cos(), r * t.sin()))
        .collect()
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Closed boundary polylines `θ ↦ f(θ)(cos θ, sin θ)`, one per domain.
pub fn domains_svg(domains: &[(&str, &RadialFunction)]) -> String {
    let pts: Vec<Vec<(f64, f64)>> = domains.iter().map(|(_, f)| boundary_points(f)).collect();
    let extent = pts
        .iter()
        .flatten()
        .fold(0.0f64, |m, (x, y)| m.max(x.abs()).max(y.abs()))
        .max(1e-12)
        * 1.05;
    let size = 2.0 * extent;
    let stroke = size / 300.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}" width="480" height="480">"#,
        fmt_float(-extent),
        fmt_float(-extent),
        fmt_float(size),
        fmt_float(size)
    );
    let _ = writeln!(
        s,
        r#"<g transform="scale(1,-1)" fill="none" stroke-width="{}">"#,
        fmt_float(stroke)
    );
    let _ = writeln!(
        s,
        r##"<path d="M {e} 0 H {f} M 0 {e} V {f}" stroke="#bbbbbb"/>"##,
        e = fmt_float(-extent),
        f = fmt_float(extent)
    );
    for (k, poly) in pts.iter().enumerate() {
        let coords: Vec<String> = poly
            .iter()
            .map(|(x, y)| format!("{:.6},{:.6}", x, y))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" stroke="{}"><title>{}</title></polygon>"#,
            coords.join(" "),
            PALETTE[k % PALETTE.len()],
            domains[k].0
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// Energy traces against the step index. The axis is logarithmic when every
/// value is positive and linear otherwise.
pub fn energy_svg(traces: &[(&str, &[f64])]) -> String {
    let all: Vec<f64> = traces.iter().flat_map(|t| t.1.iter().copied()).filter(|v| v.is_finite()).collect();
    let log = !all.is_empty() && all.iter().all(|&v| v > 0.0);
    let tr = |v: f64| if log { v.log10() } else { v };
    let (lo, hi) = all
        .iter()
        .map(|&v| tr(v))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let steps = traces.iter().map(|t| t.1.len()).max().unwrap_or(1).max(2) - 1;
    let (w, h, pad) = (640.0, 400.0, 40.0);
    let x = |k: usize| pad + (w - 2.0 * pad) * k as f64 / steps as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (tr(v) - lo) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r##"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="#888888"/>"##,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let fmt_axis = |v: f64| if log { format!("1e{v:.2}") } else { format!("{v:.4}") };
    let _ = writeln!(s, r#"<text x="2" y="{}">{}</text>"#, pad, fmt_axis(hi));
    let _ = writeln!(s, r#"<text x="2" y="{}">{}</text>"#, h - pad, fmt_axis(lo));
    let _ = writeln!(s, r#"<text x="{}" y="{}">step</text>"#, w / 2.0, h - 10.0);
    for (k, (label, values)) in traces.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite() && (!log || **v > 0.0))
            .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{colour}">{label}</text>"#,
            w - pad - 80.0,
            pad + 16.0 * (k + 1) as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::uniform_grid;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02e23, 0.0, 4.13122872577886e-8] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_float(0.5), "0.5");
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut t = Table::new(&["n", "value"]);
        t.push(vec!["16".into(), fmt_float(0.25)]);
        t.push(vec!["32".into(), cell(None)]);
        assert_eq!(t.to_csv_string(), "n,value\n16,0.25\n32,\n");
        assert_eq!(t.column("n").unwrap(), vec!["16", "32"]);
        assert!(t.column("missing").is_none());
    }

    #[test]
    fn svg_outputs_are_closed_documents() {
        let f = RadialFunction::disk(uniform_grid(8).unwrap(), 2.0).unwrap();
        let d = domains_svg(&[("disk", &f)]);
        assert!(d.starts_with("<svg") && d.trim_end().ends_with("</svg>"));
        assert_eq!(d.matches("<polygon").count(), 1);
        let e = energy_svg(&[("a", &[3.0, 2.0, 1.0]), ("b", &[3.0, 2.5])]);
        assert_eq!(e.matches("<polyline").count(), 2);
        let neg = energy_svg(&[("a", &[-1.0, -2.0])]);
        assert!(neg.contains("polyline"));
    }
}
