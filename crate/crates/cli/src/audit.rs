use std::path::Path;

use polykit_core::anchors::{
    audit_config, kmeans_iou, nearest_centroid, report_csv, AuditConfig, ReportRow, Scene,
    SizeSample,
};
use polykit_core::annotation::AnnotationRecord;
use serde_json::json;

use crate::error::{usage, CliError, CliResult};
use crate::io::{emit, read_annotations, to_input_frame};
use crate::{AnchorsArgs, AuditArgs, Resize};

fn scenes_for(records: &[AnnotationRecord], size: (u32, u32), resize: Resize) -> CliResult<Vec<Scene>> {
    records.iter().map(|r| to_input_frame(r, size, resize)).collect()
}

fn samples_of(scenes: &[Scene]) -> CliResult<Vec<SizeSample>> {
    Ok(scenes
        .iter()
        .flatten()
        .map(SizeSample::from_box)
        .collect::<Result<_, _>>()?)
}

/// Anchor file: optional `w,h` header, then one `w,h` pair per line.
pub fn read_anchor_file(path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == "w,h" {
            continue;
        }
        let bad = || CliError::Data(format!("{}: line {}: expected w,h", path.display(), i + 1));
        let (w, h) = line.split_once(',').ok_or_else(bad)?;
        let w: f64 = w.trim().parse().map_err(|_| bad())?;
        let h: f64 = h.trim().parse().map_err(|_| bad())?;
        SizeSample::new(w, h).map_err(|e| CliError::Data(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        out.push((w, h));
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no anchors", path.display())));
    }
    Ok(out)
}

pub fn anchor_file_text(anchors: &[(f64, f64)]) -> String {
    let mut s = String::from("w,h\n");
    for (w, h) in anchors {
        s += &format!("{w},{h}\n");
    }
    s
}

enum AnchorSource {
    Count(usize),
    File(Vec<(f64, f64)>),
}

fn empty_row(cfg: AuditConfig) -> ReportRow {
    ReportRow {
        scale_counts: cfg.strides.iter().map(|&s| (s, 0)).collect(),
        config: cfg,
        anchors: Vec::new(),
        mean_iou: 0.0,
        total_labels: 0,
        rewritten: 0,
        colliding_pairs: 0,
        ratio: 0.0,
    }
}

pub fn audit(a: &AuditArgs) -> CliResult<()> {
    if !a.per_scale && a.scales.len() != 1 {
        return usage("without --per-scale exactly one scale is audited");
    }
    let source = match a.anchors.parse::<usize>() {
        Ok(0) => return usage("--anchors count must be positive"),
        Ok(k) => AnchorSource::Count(k),
        Err(_) => AnchorSource::File(read_anchor_file(Path::new(&a.anchors))?),
    };
    let records = read_annotations(&a.annotations)?;
    let mut rows = Vec::new();
    for &size in &a.input_size {
        for &s in &a.scales {
            if size.0 % s != 0 || size.1 % s != 0 {
                return usage(format!("input {}x{} is not divisible by stride {s}", size.0, size.1));
            }
        }
        let cfg = AuditConfig {
            input_w: size.0,
            input_h: size.1,
            strides: a.scales.clone(),
            per_scale: a.per_scale,
        };
        let scenes = scenes_for(&records, size, a.resize)?;
        let samples = samples_of(&scenes)?;
        if samples.is_empty() {
            rows.push(empty_row(cfg));
            continue;
        }
        let (anchors, mean_iou) = match &source {
            AnchorSource::Count(k) => {
                let km = kmeans_iou(&samples, *k, a.seed, 300)?;
                (km.centroids.clone(), km.mean_iou)
            }
            AnchorSource::File(v) => {
                let m = samples.iter().map(|s| nearest_centroid(s, v).1).sum::<f64>() / samples.len() as f64;
                (v.clone(), m)
            }
        };
        if a.per_scale && anchors.len() % a.scales.len() != 0 {
            return usage(format!(
                "{} anchors cannot be split evenly over {} scales",
                anchors.len(),
                a.scales.len()
            ));
        }
        let mut row = audit_config(&scenes, &anchors, &cfg)?;
        row.mean_iou = mean_iou;
        rows.push(row);
    }
    emit(None, &report_csv(&rows))?;
    if let Some(path) = &a.json {
        let value: Vec<_> = rows
            .iter()
            .map(|r| {
                json!({
                    "input_w": r.config.input_w,
                    "input_h": r.config.input_h,
                    "strides": r.config.strides,
                    "per_scale": r.config.per_scale,
                    "anchors": r.anchors,
                    "mean_iou": r.mean_iou,
                    "total_labels": r.total_labels,
                    "rewritten": r.rewritten,
                    "colliding_pairs": r.colliding_pairs,
                    "ratio": r.ratio,
                    "scale_counts": r.scale_counts,
                })
            })
            .collect();
        let text = serde_json::to_string_pretty(&value).map_err(|e| CliError::Internal(e.to_string()))?;
        emit(Some(path), &(text + "\n"))?;
    }
    Ok(())
}

pub fn anchors(a: &AnchorsArgs) -> CliResult<()> {
    if a.k == 0 {
        return usage("-k must be positive");
    }
    let records = read_annotations(&a.annotations)?;
    let scenes: Vec<Scene> = match a.input_size {
        Some(size) => scenes_for(&records, size, a.resize)?,
        None => records
            .iter()
            .map(|r| r.boxes().map_err(CliError::from))
            .collect::<CliResult<_>>()?,
    };
    let samples = samples_of(&scenes)?;
    if samples.is_empty() {
        return Err(CliError::Data("no boxes to cluster".into()));
    }
    let km = kmeans_iou(&samples, a.k, a.seed, a.max_iter)?;
    eprintln!(
        "k={} samples={} mean_iou={:.6} iterations={} converged={}",
        a.k,
        samples.len(),
        km.mean_iou,
        km.iterations,
        km.converged
    );
    emit(a.out.as_deref(), &anchor_file_text(&km.centroids))
}
