use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Predictions, Source};
use crate::error::{Error, Result};
use crate::evaluation::{calibration_curve, CalibrationCurve, Resample};
use crate::models::ModelFamily;

const SIZE: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn px(v: f64) -> f64 {
    MARGIN + v * SIZE
}

fn py(v: f64) -> f64 {
    MARGIN + (1.0 - v) * SIZE
}

/// Standalone SVG reliability diagram: occupied bins joined by a line, with
/// the diagonal for reference.
pub fn calibration_svg(curve: &CalibrationCurve, title: &str) -> String {
    let w = SIZE + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {w} {w}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{w}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#,
            px(v),
            py(0.0) + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            px(0.0) - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 4"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let points: Vec<(f64, f64)> = curve
        .occupied()
        .filter_map(|b| Some((b.mean_pred?, b.obs_frac?)))
        .collect();
    let path = points
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
        .collect::<Vec<_>>()
        .join(" ");
    let _ = writeln!(s, r#"<polyline points="{path}" fill="none" stroke="steelblue" stroke-width="2"/>"#);
    for (x, y) in &points {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, px(*x), py(*y));
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{title} (ECE {:.4})</text>"#,
        w / 2.0,
        MARGIN - 16.0,
        curve.ece
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">mean predicted probability</text>"#,
        w / 2.0,
        w - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.2}" text-anchor="middle" transform="rotate(-90 12 {:.2})">observed fraction positive</text>"#,
        w / 2.0,
        w / 2.0
    );
    s.push_str("</svg>\n");
    s
}

fn points_csv(curve: &CalibrationCurve) -> String {
    let mut s = String::from("bin_lo,bin_hi,mean_pred,obs_frac,count\n");
    for b in curve.occupied() {
        let _ = writeln!(
            s,
            "{:.4},{:.4},{:.6},{:.6},{}",
            b.lo,
            b.hi,
            b.mean_pred.unwrap_or(f64::NAN),
            b.obs_frac.unwrap_or(f64::NAN),
            b.count
        );
    }
    s
}

type Pooled = BTreeMap<(ModelFamily, Resample, Source), (Vec<f64>, Vec<bool>)>;

/// One points file and one plot per (family, strategy, source), pooling
/// predictions across seeds in seed order, plus an ECE summary.
pub fn emit_calibration(predictions: &[Predictions], n_bins: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut pooled = Pooled::new();
    let mut ordered: Vec<&Predictions> = predictions.iter().collect();
    ordered.sort_by_key(|p| p.seed);
    for p in ordered {
        let entry = pooled.entry((p.family, p.strategy, p.source)).or_default();
        entry.0.extend_from_slice(&p.probs);
        entry.1.extend_from_slice(&p.labels);
    }
    let mut files = Vec::new();
    let mut summary = String::from("family,strategy,source,n,ece\n");
    for ((family, strategy, source), (probs, labels)) in &pooled {
        if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
            return Err(Error::SingleClass("a calibration curve"));
        }
        let curve = calibration_curve(probs, labels, n_bins)?;
        let stem = format!("calibration_{}_{strategy}_{source}", family.tag());
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, points_csv(&curve)).map_err(|e| Error::io(&csv, e))?;
        let svg = dir.join(format!("{stem}.svg"));
        let title = format!("{source} {family} ({strategy})");
        std::fs::write(&svg, calibration_svg(&curve, &title)).map_err(|e| Error::io(&svg, e))?;
        files.push(csv);
        files.push(svg);
        let _ = writeln!(summary, "{family},{strategy},{source},{},{:.6}", probs.len(), curve.ece);
    }
    let path = dir.join("calibration_summary.csv");
    std::fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(files)
}
