//! CSV and SVG outputs for BER curves and loss logs.
//!
//! Both CSV files may start with `#` comment lines (the effective run
//! configuration); readers skip them.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::{BerCurve, BerPoint, LossLog};

pub const BER_HEADER: [&str; 7] = ["detector", "k_factor", "ebn0_db", "bits_sent", "bit_errors", "ber", "seed"];
pub const LOSS_HEADER: [&str; 4] = ["step", "task_index", "loss", "effective_lr"];

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn write_csv(path: &Path, comments: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    let mut out = comments.as_bytes().to_vec();
    out.extend_from_slice(&body);
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes the curve with its config comment block first.
pub fn write_ber_csv(curve: &BerCurve, comments: &str, path: &Path) -> Result<()> {
    let rows = curve
        .points
        .iter()
        .map(|p| {
            vec![
                p.detector.clone(),
                p.k_factor.to_string(),
                p.ebn0_db.to_string(),
                p.bits_sent.to_string(),
                p.bit_errors.to_string(),
                p.ber().to_string(),
                p.seed.to_string(),
            ]
        })
        .collect();
    write_csv(path, comments, &BER_HEADER, rows)
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path)?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad or missing `{name}` in row {:?}", rec.position().map(|p| p.line()))))
}

pub fn read_ber_csv(path: &Path) -> Result<BerCurve> {
    let mut r = reader(path)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != BER_HEADER {
        return Err(Error::Format(format!("unexpected BER header {header:?}")));
    }
    let mut curve = BerCurve::default();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        curve.points.push(BerPoint {
            detector: field(&rec, 0, "detector")?,
            k_factor: field(&rec, 1, "k_factor")?,
            ebn0_db: field(&rec, 2, "ebn0_db")?,
            bits_sent: field(&rec, 3, "bits_sent")?,
            bit_errors: field(&rec, 4, "bit_errors")?,
            seed: field(&rec, 6, "seed")?,
        });
    }
    Ok(curve)
}

pub fn write_loss_csv(log: &LossLog, comments: &str, path: &Path) -> Result<()> {
    let rows = log
        .records
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                r.task_index.to_string(),
                r.loss.to_string(),
                r.effective_lr.to_string(),
            ]
        })
        .collect();
    write_csv(path, comments, &LOSS_HEADER, rows)
}

const PALETTE: [&str; 6] = ["#000000", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
const DASHES: [&str; 6] = ["", "6,3", "2,3", "8,3,2,3", "1,2", "10,4"];
const MARKERS: [&str; 3] = ["circle", "square", "triangle"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders BER (log scale) against Eb/N0, one polyline per (detector, K).
/// Colours follow the detector, dash patterns the K-factor. `comments` is
/// embedded verbatim inside an XML comment.
pub fn render_ber_svg(curve: &BerCurve, title: &str, comments: &str) -> String {
    let (width, height) = (760.0, 540.0);
    let (left, right, top, bottom) = (80.0, 200.0, 50.0, 60.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let keys = curve.series_keys();
    let mut detectors: Vec<&str> = Vec::new();
    let mut ks: Vec<f64> = Vec::new();
    for (d, k) in &keys {
        if !detectors.contains(&d.as_str()) {
            detectors.push(d);
        }
        if !ks.contains(k) {
            ks.push(*k);
        }
    }

    let visible: Vec<&BerPoint> = curve.points.iter().filter(|p| p.bit_errors > 0).collect();
    let (mut x_min, mut x_max) = curve
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.ebn0_db), b.max(p.ebn0_db)));
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
    }
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    let lowest = visible.iter().map(|p| p.ber()).fold(1.0f64, f64::min);
    let y_lo = lowest.log10().floor().min(-1.0);
    let y_hi = 0.0;
    let sx = |x: f64| left + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |ber: f64| top + (y_hi - ber.log10()) / (y_hi - y_lo) * plot_h;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, "<!--\n{}-->", comments.replace("--", "- -")).unwrap();
    writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="15">{}</text>"#,
        left + plot_w / 2.0,
        escape(title)
    )
    .unwrap();

    // grid and axes
    let mut decade = y_lo as i32;
    while decade <= y_hi as i32 {
        let y = sy(10f64.powi(decade));
        writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#cccccc"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{decade}</text>"##,
            left + plot_w,
            left - 6.0,
            y + 4.0
        )
        .unwrap();
        decade += 1;
    }
    let mut ebn0s: Vec<f64> = curve.points.iter().map(|p| p.ebn0_db).collect();
    ebn0s.sort_by(f64::total_cmp);
    ebn0s.dedup();
    for x in &ebn0s {
        let px = sx(*x);
        writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{top}" x2="{px:.2}" y2="{:.2}" stroke="#eeeeee"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{x}</text>"##,
            top + plot_h,
            top + plot_h + 18.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Eb/N0 (dB)</text>"#,
        left + plot_w / 2.0,
        height - 15.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">BER</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    )
    .unwrap();

    for (idx, (det, k)) in keys.iter().enumerate() {
        let di = detectors.iter().position(|d| d == det).unwrap_or(0);
        let ki = ks.iter().position(|v| v == k).unwrap_or(0);
        let colour = PALETTE[di % PALETTE.len()];
        let dash = DASHES[ki % DASHES.len()];
        let marker = MARKERS[di % MARKERS.len()];
        let pts: Vec<(f64, f64)> = curve
            .series(det, *k)
            .into_iter()
            .filter(|p| p.bit_errors > 0)
            .map(|p| (sx(p.ebn0_db), sy(p.ber())))
            .collect();
        let label = format!("{det}, K={k}");
        writeln!(s, r#"<g class="series" data-label="{}">"#, escape(&label)).unwrap();
        if pts.len() >= 2 {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let dash_attr = if dash.is_empty() {
                String::new()
            } else {
                format!(r#" stroke-dasharray="{dash}""#)
            };
            writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.6"{dash_attr}/>"#,
                path.join(" ")
            )
            .unwrap();
        }
        for (x, y) in &pts {
            s.push_str(&marker_svg(marker, *x, *y, colour));
        }
        // legend entry
        let ly = top + 10.0 + idx as f64 * 18.0;
        let lx = left + plot_w + 15.0;
        writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{:.2}" y2="{ly}" stroke="{colour}" stroke-width="1.6"{}/>"#,
            lx + 30.0,
            if dash.is_empty() {
                String::new()
            } else {
                format!(r#" stroke-dasharray="{dash}""#)
            }
        )
        .unwrap();
        s.push_str(&marker_svg(marker, lx + 15.0, ly, colour));
        writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 36.0, ly + 4.0, escape(&label)).unwrap();
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn marker_svg(kind: &str, x: f64, y: f64, colour: &str) -> String {
    match kind {
        "square" => format!(
            r#"<rect x="{:.2}" y="{:.2}" width="6" height="6" fill="none" stroke="{colour}"/>"#,
            x - 3.0,
            y - 3.0
        ) + "\n",
        "triangle" => format!(
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="none" stroke="{colour}"/>"#,
            x,
            y - 4.0,
            x - 3.5,
            y + 3.0,
            x + 3.5,
            y + 3.0
        ) + "\n",
        _ => format!(r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="none" stroke="{colour}"/>"#) + "\n",
    }
}

pub fn write_ber_svg(curve: &BerCurve, title: &str, comments: &str, path: &Path) -> Result<()> {
    std::fs::write(path, render_ber_svg(curve, title, comments))?;
    Ok(())
}
