//! Greedy NMS and COCO-style average precision for boxes and polygon masks.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{iou_box, rasterize_polygon, BBox, Mask, Polygon};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BBox,
    pub polygon: Option<Polygon>,
    pub score: f64,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: String,
    pub bbox: BBox,
    pub polygon: Option<Polygon>,
    pub class_id: u32,
}

fn check_score(d: &Detection) -> Result<()> {
    if !(0.0..=1.0).contains(&d.score) {
        return Err(Error::InvalidArgument(format!(
            "detection score {} outside [0, 1]",
            d.score
        )));
    }
    Ok(())
}

/// Indices of `dets` sorted by descending score; equal scores keep input order.
fn by_score(dets: &[&Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

fn overlap(a: &BBox, b: &BBox) -> f64 {
    iou_box(a, b).unwrap_or(0.0)
}

/// Per (image, class) greedy suppression: a detection is dropped iff its box
/// IoU with an already kept, higher-scored detection exceeds `iou_threshold`.
/// Survivors keep their input order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
    let mut groups: BTreeMap<(&str, u32), Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        check_score(d)?;
        groups.entry((d.image_id.as_str(), d.class_id)).or_default().push(i);
    }
    let mut keep = vec![false; dets.len()];
    for idx in groups.values() {
        let members: Vec<&Detection> = idx.iter().map(|&i| &dets[i]).collect();
        let mut kept: Vec<usize> = Vec::new();
        for j in by_score(&members) {
            if kept
                .iter()
                .all(|&k| overlap(&members[k].bbox, &members[j].bbox) <= iou_threshold)
            {
                kept.push(j);
                keep[idx[j]] = true;
            }
        }
    }
    Ok(dets
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(d, _)| d.clone())
        .collect())
}

/// COCO IoU thresholds 0.50:0.05:0.95.
pub fn coco_thresholds() -> Vec<f64> {
    let step = (0.95 - 0.5) / 9.0;
    (0..10).map(|i| 0.5 + i as f64 * step).collect()
}

/// The 101 recall sample points 0, 0.01, ..., 1.
pub fn recall_points() -> Vec<f64> {
    (0..=100).map(|i| i as f64 * 0.01).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalMode {
    Box,
    /// IoU on polygons rasterized at each image's native size, keyed by image id.
    /// Objects without a polygon use their box outline.
    Mask(HashMap<String, (usize, usize)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApTriple {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub per_class: BTreeMap<u32, ApTriple>,
    /// Unweighted mean over classes with at least one ground truth; zeros
    /// when there are none.
    pub mean: ApTriple,
}

impl EvalResult {
    pub const CSV_HEADER: &'static str = "class_id,ap,ap50,ap75";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for (c, t) in &self.per_class {
            s += &format!("{c},{:.6},{:.6},{:.6}\n", t.ap, t.ap50, t.ap75);
        }
        s += &format!("mean,{:.6},{:.6},{:.6}\n", self.mean.ap, self.mean.ap50, self.mean.ap75);
        s
    }
}

/// Interpolated precision at each of the 101 recall points, given the
/// cumulative PR curve of score-ordered detections.
pub fn interpolated_precision(recall: &[f64], precision: &[f64]) -> Vec<f64> {
    let mut env = precision.to_vec();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    recall_points()
        .into_iter()
        .map(|r| {
            let i = recall.partition_point(|&x| x < r);
            env.get(i).copied().unwrap_or(0.0)
        })
        .collect()
}

/// Mean interpolated precision over the 101 recall points.
pub fn average_precision(recall: &[f64], precision: &[f64]) -> f64 {
    let p = interpolated_precision(recall, precision);
    p.iter().sum::<f64>() / p.len() as f64
}

enum Region {
    Box(BBox),
    Pixels(Mask),
}

fn region(bbox: &BBox, polygon: Option<&Polygon>, mode: &EvalMode, image: &str) -> Result<Region> {
    match mode {
        EvalMode::Box => Ok(Region::Box(*bbox)),
        EvalMode::Mask(sizes) => {
            let &(w, h) = sizes.get(image).ok_or_else(|| {
                Error::InvalidArgument(format!("no image size for image '{image}'"))
            })?;
            let owned;
            let p = match polygon {
                Some(p) => p,
                None => {
                    owned = bbox.to_polygon()?;
                    &owned
                }
            };
            Ok(Region::Pixels(rasterize_polygon(p, w, h)?))
        }
    }
}

fn region_iou(a: &Region, b: &Region) -> f64 {
    match (a, b) {
        (Region::Box(a), Region::Box(b)) => overlap(a, b),
        (Region::Pixels(a), Region::Pixels(b)) => a.iou(b).unwrap_or(0.0),
        _ => unreachable!("regions of one evaluation share a mode"),
    }
}

struct ClassData {
    n_gt: usize,
    /// (score, image index, rank within image) per detection, plus IoU rows.
    dets: Vec<(f64, usize, usize)>,
    /// ious[image][det rank][gt] for this class.
    ious: Vec<Vec<Vec<f64>>>,
}

/// PR curve for one class at one IoU threshold.
fn pr_curve(cd: &ClassData, threshold: f64) -> (Vec<f64>, Vec<f64>) {
    let mut matched_det: Vec<Vec<bool>> = cd.ious.iter().map(|m| vec![false; m.len()]).collect();
    for (img, rows) in cd.ious.iter().enumerate() {
        let n_gt = rows.first().map_or(0, |r| r.len());
        let mut taken = vec![false; n_gt];
        for (rank, row) in rows.iter().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            for (g, &iou) in row.iter().enumerate() {
                if !taken[g] && iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
                matched_det[img][rank] = true;
            }
        }
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(cd.dets.len());
    let mut precision = Vec::with_capacity(cd.dets.len());
    for &(_, img, rank) in &cd.dets {
        if matched_det[img][rank] {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / cd.n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    (recall, precision)
}

/// COCO-style AP per class and averaged over classes.
///
/// `ap` averages over `iou_thresholds` (normally [`coco_thresholds`]); `ap50`
/// and `ap75` use the single thresholds 0.5 and 0.75.
pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thresholds: &[f64],
    mode: &EvalMode,
) -> Result<EvalResult> {
    if iou_thresholds.is_empty() {
        return Err(Error::InvalidArgument("no IoU thresholds".into()));
    }
    for d in dets {
        check_score(d)?;
    }
    for g in gts {
        if g.bbox.area() <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "ground truth in image '{}' has zero area",
                g.image_id
            )));
        }
    }
    let mut images: Vec<&str> = gts
        .iter()
        .map(|g| g.image_id.as_str())
        .chain(dets.iter().map(|d| d.image_id.as_str()))
        .collect();
    images.sort_unstable();
    images.dedup();
    let image_index: HashMap<&str, usize> = images.iter().enumerate().map(|(i, s)| (*s, i)).collect();

    let mut classes: Vec<u32> = gts.iter().map(|g| g.class_id).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut per_class = BTreeMap::new();
    for &class in &classes {
        let mut gt_by_image: Vec<Vec<Region>> = (0..images.len()).map(|_| Vec::new()).collect();
        let mut n_gt = 0;
        for g in gts.iter().filter(|g| g.class_id == class) {
            let r = region(&g.bbox, g.polygon.as_ref(), mode, &g.image_id)?;
            gt_by_image[image_index[g.image_id.as_str()]].push(r);
            n_gt += 1;
        }
        let mut det_by_image: Vec<Vec<&Detection>> = vec![Vec::new(); images.len()];
        for d in dets.iter().filter(|d| d.class_id == class) {
            det_by_image[image_index[d.image_id.as_str()]].push(d);
        }
        let mut all = Vec::new();
        let mut ious = Vec::with_capacity(images.len());
        for (img, ds) in det_by_image.iter().enumerate() {
            let mut rows = Vec::with_capacity(ds.len());
            for (rank, i) in by_score(ds).into_iter().enumerate() {
                let d = ds[i];
                let r = region(&d.bbox, d.polygon.as_ref(), mode, &d.image_id)?;
                rows.push(gt_by_image[img].iter().map(|g| region_iou(&r, g)).collect::<Vec<_>>());
                all.push((d.score, img, rank));
            }
            ious.push(rows);
        }
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let cd = ClassData { n_gt, dets: all, ious };

        let ap_at = |t: f64| {
            let (r, p) = pr_curve(&cd, t);
            average_precision(&r, &p)
        };
        let ap = iou_thresholds.iter().map(|&t| ap_at(t)).sum::<f64>() / iou_thresholds.len() as f64;
        per_class.insert(
            class,
            ApTriple {
                ap,
                ap50: ap_at(0.5),
                ap75: ap_at(0.75),
            },
        );
    }

    let n = per_class.len();
    let mean = if n == 0 {
        ApTriple { ap: 0.0, ap50: 0.0, ap75: 0.0 }
    } else {
        let sum = |f: fn(&ApTriple) -> f64| per_class.values().map(f).sum::<f64>() / n as f64;
        ApTriple {
            ap: sum(|t| t.ap),
            ap50: sum(|t| t.ap50),
            ap75: sum(|t| t.ap75),
        }
    };
    Ok(EvalResult { per_class, mean })
}
