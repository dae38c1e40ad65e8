//! Tabular and vector-graphic renderings of curves and calibration reports.

use std::fmt::Write as _;
use std::path::Path;

use super::calibration::CalibrationReport;
use super::rejection::RejectionCurve;
use crate::error::{Error, Result};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

/// Writes a header row followed by `rows` to `path`.
pub fn write_csv<R, I>(path: &Path, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        let row: Vec<String> = row.into_iter().collect();
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns: `rejected_fraction,retained_error`.
pub fn write_rejection_csv(path: &Path, curve: &RejectionCurve) -> Result<()> {
    write_csv(
        path,
        &["rejected_fraction", "retained_error"],
        curve.points().map(|(r, e)| [r.to_string(), e.to_string()]),
    )
}

/// Columns: `bin_lower,bin_upper,mean_confidence,accuracy,count`.
pub fn write_calibration_csv(path: &Path, report: &CalibrationReport) -> Result<()> {
    write_csv(
        path,
        &["bin_lower", "bin_upper", "mean_confidence", "accuracy", "count"],
        report.bins.iter().map(|b| {
            [
                b.lower.to_string(),
                b.upper.to_string(),
                b.confidence.to_string(),
                b.accuracy.to_string(),
                b.count.to_string(),
            ]
        }),
    )
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Line plot of one or more rejection curves with the random and oracle
/// references (taken from the first curve).
pub fn rejection_svg(curves: &[(&str, &RejectionCurve)]) -> String {
    let (w, h, m) = (480.0, 360.0, 48.0);
    let ymax = curves
        .iter()
        .map(|(_, c)| c.base_error)
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let px = |x: f64| m + x * (w - 2.0 * m);
    let py = |y: f64| h - m - y / ymax * (h - 2.0 * m);
    let poly = |pts: &mut dyn Iterator<Item = (f64, f64)>| {
        pts.map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{:.2},{:.2} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        px(0.0),
        py(ymax),
        py(0.0),
        px(1.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">rejected fraction</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">retained error</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{ymax:.3}</text>"#,
        px(0.0) - 4.0,
        py(ymax) + 4.0
    );
    if let Some((_, first)) = curves.first() {
        let e = first.base_error;
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="gray" stroke-dasharray="4 3"/>"#,
            poly(&mut [(0.0, e), (1.0, 0.0)].into_iter())
        );
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="black" stroke-dasharray="1 3"/>"#,
            poly(&mut [(0.0, e), (e, 0.0), (1.0, 0.0)].into_iter())
        );
    }
    for (i, (label, c)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            poly(&mut c.points())
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}" text-anchor="end">{}</text>"#,
            w - m,
            m + 16.0 * i as f64,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
