//! Column tables written as CSV with a commented metadata header, and a
//! minimal SVG line-chart writer.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Named columns of equal length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    columns: Vec<(String, Vec<f64>)>,
}

/// Round-trippable decimal text for a double (17 significant digits).
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        // Keep the sign of negative zero out of the output.
        return "0".to_string();
    }
    format!("{v:.16e}")
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if let Some((_, first)) = self.columns.first() {
            if first.len() != values.len() {
                return Err(Error::Mismatch(format!(
                    "column {name} has {} rows, expected {}",
                    values.len(),
                    first.len()
                )));
            }
        }
        if self.columns.iter().any(|(n, _)| *n == name) {
            return Err(Error::Mismatch(format!("duplicate column {name}")));
        }
        self.columns.push((name, values));
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |(_, v)| v.len())
    }

    /// CSV text: `# key = value` metadata lines, a header row, then data.
    pub fn to_csv(&self, metadata: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in metadata {
            for line in v.lines() {
                let _ = writeln!(out, "# {k} = {line}");
            }
        }
        let header: Vec<&str> = self.names().collect();
        let _ = writeln!(out, "{}", header.join(","));
        for r in 0..self.n_rows() {
            let row: Vec<String> = self.columns.iter().map(|(_, v)| format_value(v[r])).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Data lines of a CSV produced by [`Table::to_csv`], without metadata.
pub fn csv_body(csv: &str) -> String {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// One polyline of a chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-300);
    let raw = span / count as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

/// Line chart of several series against a shared x axis.
pub fn line_chart_svg(title: &str, x: &[f64], series: &[Series]) -> String {
    let (w, h) = (720.0, 420.0);
    let (ml, mr, mt, mb) = (70.0, 150.0, 40.0, 50.0);
    let x_lo = x.first().copied().unwrap_or(0.0);
    let x_hi = x.last().copied().unwrap_or(1.0);
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for s in series {
        for v in s.values.iter().filter(|v| v.is_finite()) {
            y_lo = y_lo.min(*v);
            y_hi = y_hi.max(*v);
        }
    }
    if !y_lo.is_finite() {
        y_lo = -1.0;
        y_hi = 1.0;
    }
    if y_hi - y_lo < 1e-12 {
        y_lo -= 1.0;
        y_hi += 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    let px = |v: f64| ml + (v - x_lo) / (x_hi - x_lo).max(1e-300) * (w - ml - mr);
    let py = |v: f64| mt + (y_hi - v) / (y_hi - y_lo) * (h - mt - mb);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - ml - mr,
        h - mt - mb
    );
    for t in nice_ticks(x_lo, x_hi, 8) {
        let x0 = px(t);
        let _ = writeln!(out, r#"<line x1="{x0:.2}" y1="{}" x2="{x0:.2}" y2="{}" stroke="black"/>"#, h - mb, h - mb + 5.0);
        let _ = writeln!(out, r#"<text x="{x0:.2}" y="{}" text-anchor="middle">{}</text>"#, h - mb + 18.0, tick_label(t));
    }
    for t in nice_ticks(y_lo, y_hi, 6) {
        let y0 = py(t);
        let _ = writeln!(out, r#"<line x1="{}" y1="{y0:.2}" x2="{ml}" y2="{y0:.2}" stroke="black"/>"#, ml - 5.0);
        let _ = writeln!(out, r##"<line x1="{ml}" y1="{y0:.2}" x2="{}" y2="{y0:.2}" stroke="#dddddd"/>"##, w - mr);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, ml - 8.0, y0 + 4.0, tick_label(t));
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(&s.values)
            .filter(|(_, v)| v.is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", px(*a), py(*b)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = mt + 16.0 * (i as f64 + 1.0);
        let lx = w - mr + 10.0;
        let _ = writeln!(out, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_round_trip() {
        for v in [0.1, -1.0 / 3.0, 6.02214076e23, 5e-324, -0.0, 1.0] {
            let s = format_value(v);
            assert_eq!(s.parse::<f64>().unwrap(), if v == 0.0 { 0.0 } else { v });
        }
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new();
        t.push("t", vec![0.0, 0.5]).unwrap();
        t.push("x", vec![1.0, 2.0]).unwrap();
        assert!(t.push("y", vec![1.0]).is_err());
        let csv = t.to_csv(&[("seed".into(), "7".into())]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# seed = 7");
        assert_eq!(lines[1], "t,x");
        assert_eq!(lines[2], "0,1.0000000000000000e0");
        assert_eq!(csv_body(&csv).lines().count(), 3);
    }

    #[test]
    fn svg_is_well_formed() {
        let x = vec![0.0, 1.0, 2.0];
        let svg = line_chart_svg("a < b", &x, &[Series { label: "s".into(), values: vec![1.0, -1.0, 0.5] }]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn ticks_are_inside_range() {
        let t = nice_ticks(-15.3, 10.2, 6);
        assert!(t.iter().all(|v| (-15.3..=10.2).contains(v)));
        assert!(t.len() >= 3);
    }
}
