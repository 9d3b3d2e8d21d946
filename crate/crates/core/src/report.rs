//! Output artifacts: curve CSVs, static SVG line charts and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::sim::Curve;

/// `shift,accuracy` or, when any curve carries a bin, `shift,accuracy,bin`.
pub fn write_curve_csv<W: Write>(out: W, curves: &[(Option<u8>, &Curve)]) -> csv::Result<()> {
    let with_bin = curves.iter().any(|(b, _)| b.is_some());
    let mut w = csv::Writer::from_writer(out);
    if with_bin {
        w.write_record(["shift", "accuracy", "bin"])?;
    } else {
        w.write_record(["shift", "accuracy"])?;
    }
    for (bin, curve) in curves {
        for (k, a) in curve.iter() {
            let mut rec = vec![k.to_string(), a.to_string()];
            if with_bin {
                rec.push(bin.map(|b| b.to_string()).unwrap_or_default());
            }
            w.write_record(rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A self-contained SVG line chart; `y_range` fixes the vertical axis.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], y_range: Option<(f64, f64)>) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if let Some((a, b)) = y_range {
        (y0, y1) = (a, b);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = y0 + (y1 - y0) * i as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(svg, r##"<line x1="{left}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, left - 5.0, y + 4.0);
    }
    let ticks = 6;
    for i in 0..=ticks {
        let v = x0 + (x1 - x0) * i as f64 / ticks as f64;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{v:.0}</text>"#, sx(v), top + ph + 18.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let dash = if s.dashed { r#" stroke-dasharray="5,4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 10.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#, lx + 20.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 25.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub dataset_hash: Option<String>,
    pub provider: Option<String>,
    pub styles: Vec<String>,
    pub shifts: Vec<u8>,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<Artifact>,
    pub extra: BTreeMap<String, serde_json::Value>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_csv_layouts() {
        let c: Curve = vec![(1, 0.5), (2, 0.25)];
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &[(None, &c)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "shift,accuracy\n1,0.5\n2,0.25\n");
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &[(Some(1), &c), (Some(5), &c)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("shift,accuracy,bin\n1,0.5,1\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn chart_is_well_formed() {
        let svg = line_chart(
            "acc <by> shift",
            "shift",
            "accuracy",
            &[Series {
                label: "bin 1".into(),
                points: vec![(1.0, 0.2), (25.0, 0.9)],
                dashed: false,
            }],
            Some((0.0, 1.0)),
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("acc &lt;by&gt; shift"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        let empty = line_chart("t", "x", "y", &[], None);
        assert!(empty.contains("</svg>"));
    }

    #[test]
    fn hashes_are_content_derived() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
