//! Report artifacts: metric and confusion-matrix CSV tables plus SVG figures
//! for loss curves and confusion matrices.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io_util;
use crate::metrics::ConfusionMatrix;
use crate::pipeline::MetricsFile;
use crate::train::EpochRecord;

fn csv_bytes(rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
}

pub fn metrics_rows(m: &MetricsFile) -> Vec<Vec<String>> {
    let e = &m.evaluation;
    let mut rows = vec![
        vec!["metric".to_string(), "value".to_string()],
        vec!["fusion_mode".into(), format!("{:?}", m.mode).to_lowercase()],
        vec!["single_frame".into(), m.single_frame.to_string()],
        vec!["merged_moving".into(), m.merged.to_string()],
        vec!["clips".into(), e.group.total().to_string()],
        vec!["mca".into(), format!("{:.6}", e.mca)],
        vec!["mpca".into(), format!("{:.6}", e.mpca)],
        vec!["action_accuracy".into(), format!("{:.6}", e.action_accuracy)],
    ];
    for (name, acc) in e.group_classes.iter().zip(e.group.per_class_accuracy()) {
        rows.push(vec![format!("accuracy[{name}]"), acc.map_or("n/a".into(), |a| format!("{a:.6}"))]);
    }
    rows
}

pub fn confusion_rows(cm: &ConfusionMatrix, names: &[String]) -> Vec<Vec<String>> {
    let mut header = vec!["truth\\pred".to_string()];
    header.extend(names.iter().cloned());
    let mut rows = vec![header];
    for (name, row) in names.iter().zip(cm.counts()) {
        let mut r = vec![name.clone()];
        r.extend(row.iter().map(|c| c.to_string()));
        rows.push(r);
    }
    rows
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line chart of total training loss per epoch, one line per stream.
pub fn loss_curve_svg(curves: &[(String, Vec<EpochRecord>)]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let max_epoch = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(1).max(2) - 1;
    let max_loss = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|r| r.loss.total))
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max)
        .max(1e-9);
    let px = |e: usize| pad + (w - 2.0 * pad) * e as f64 / max_epoch as f64;
    let py = |l: f64| h - pad - (h - 2.0 * pad) * l / max_loss;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(s, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">training loss</text>"#, h / 2.0, h / 2.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{max_loss:.3}</text>"#, pad - 5.0, pad + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, pad - 5.0, h - pad + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{max_epoch}</text>"#, w - pad, h - pad + 16.0);
    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> =
            curve.iter().map(|r| format!("{:.2},{:.2}", px(r.epoch), py(r.loss.total.min(max_loss)))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, points.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            w - pad - 120.0,
            pad + 16.0 * (i as f64 + 1.0),
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Row-normalized heat map of a confusion matrix with raw counts printed.
pub fn confusion_svg(cm: &ConfusionMatrix, names: &[String]) -> String {
    let n = cm.num_classes();
    let cell = 48.0;
    let left = 120.0;
    let top = 120.0;
    let size = left + cell * n as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" font-family="sans-serif" font-size="11">"#, top + cell * n as f64 + 20.0);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, row) in cm.counts().iter().enumerate() {
        let total: u64 = row.iter().sum();
        let y = top + cell * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, y + cell / 2.0 + 4.0, escape(&names[i]));
        for (j, &c) in row.iter().enumerate() {
            let x = left + cell * j as f64;
            let frac = if total > 0 { c as f64 / total as f64 } else { 0.0 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let text = if frac > 0.5 { "white" } else { "black" };
            let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="gray"/>"#);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" fill="{text}">{c}</text>"#, x + cell / 2.0, y + cell / 2.0 + 4.0);
        }
    }
    for (j, name) in names.iter().enumerate() {
        let x = left + cell * j as f64 + cell / 2.0;
        let _ = writeln!(s, r#"<text x="{x}" y="{}" transform="rotate(-45 {x} {})">{}</text>"#, top - 6.0, top - 6.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes every report artifact into `dir` and returns the files written.
pub fn write_report(
    dir: &Path,
    metrics: Option<&MetricsFile>,
    action_names: &[String],
    curves: &[(String, Vec<EpochRecord>)],
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        io_util::write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };
    if let Some(m) = metrics {
        let e = &m.evaluation;
        put("metrics.csv", csv_bytes(&metrics_rows(m))?)?;
        put("confusion_group.csv", csv_bytes(&confusion_rows(&e.group, &e.group_classes))?)?;
        put("confusion_group.svg", confusion_svg(&e.group, &e.group_classes).into_bytes())?;
        if action_names.len() == e.action.num_classes() {
            put("confusion_action.csv", csv_bytes(&confusion_rows(&e.action, action_names))?)?;
            put("confusion_action.svg", confusion_svg(&e.action, action_names).into_bytes())?;
        }
    }
    if !curves.is_empty() {
        let mut rows = vec![vec!["stream".to_string(), "epoch".into(), "l_i".into(), "l_g".into(), "l_gc".into(), "total".into()]];
        for (name, c) in curves {
            for r in c {
                rows.push(vec![
                    name.clone(),
                    r.epoch.to_string(),
                    format!("{:.8}", r.loss.l_i),
                    format!("{:.8}", r.loss.l_g),
                    format!("{:.8}", r.loss.l_gc),
                    format!("{:.8}", r.loss.total),
                ]);
            }
        }
        put("loss_history.csv", csv_bytes(&rows)?)?;
        put("loss_curves.svg", loss_curve_svg(curves).into_bytes())?;
    }
    if written.is_empty() {
        return Err(Error::Config("nothing to report: no metrics and no loss histories found".into()));
    }
    Ok(written)
}
