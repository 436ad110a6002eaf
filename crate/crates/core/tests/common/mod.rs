//! Seeded generators shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::TAU;

use polykit_core::eval::{Detection, GroundTruth};
use polykit_core::geometry::{BBox, Point, Polygon};
use polykit_core::loss::CheckInstance;
use polykit_core::hypercolumn::{FeatureMap, HypercolumnSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Rounds to a multiple of 2^-10 so that scaling by small integers and
/// powers of two stays exact.
pub fn dyadic(v: f64) -> f64 {
    (v * 1024.0).round() / 1024.0
}

/// A star-shaped polygon with at most one vertex per sector of an
/// `n_sectors` polar grid around the center of the returned box.
///
/// Every coordinate is dyadic, vertex angles keep a 15% margin from sector
/// bounds and the box is symmetric about the polygon's origin.
pub fn star_polygon(rng: &mut ChaCha8Rng, n_sectors: usize) -> (Polygon, BBox) {
    let c = Point::new(dyadic(rng.random_range(100.0..300.0)), dyadic(rng.random_range(100.0..300.0)));
    let span = TAU / n_sectors as f64;
    let keep = rng.random_range(0.5..1.0);
    let mut pts = Vec::new();
    for k in 0..n_sectors {
        if pts.len() + (n_sectors - k) > 3 && !rng.random_bool(keep) {
            continue;
        }
        let theta = (k as f64 + rng.random_range(0.15..0.85)) * span;
        let r = rng.random_range(8.0..60.0);
        pts.push(Point::new(dyadic(c.x + r * theta.cos()), dyadic(c.y + r * theta.sin())));
    }
    let hw = pts.iter().map(|p| (p.x - c.x).abs()).fold(0.0, f64::max).ceil() + 1.0;
    let hh = pts.iter().map(|p| (p.y - c.y).abs()).fold(0.0, f64::max).ceil() + 1.0;
    let b = BBox::new(c.x - hw, c.y - hh, c.x + hw, c.y + hh).unwrap();
    (Polygon::new(pts).unwrap(), b)
}

/// `p` scaled by `s` about `origin`.
pub fn scale_point(p: Point, origin: Point, s: f64) -> Point {
    Point::new(origin.x + s * (p.x - origin.x), origin.y + s * (p.y - origin.y))
}

/// Up to `max_boxes` boxes with centers inside a `w x h` input.
pub fn random_scene(rng: &mut ChaCha8Rng, max_boxes: usize, w: f64, h: f64) -> Vec<BBox> {
    let n = rng.random_range(0..=max_boxes);
    (0..n)
        .map(|_| {
            let c = Point::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
            let bw = rng.random_range(2.0..w / 2.0);
            let bh = rng.random_range(2.0..h / 2.0);
            let mut b = BBox::from_center(c, bw, bh).unwrap();
            b.class_id = rng.random_range(0..3);
            b
        })
        .collect()
}

pub fn random_anchors(rng: &mut ChaCha8Rng, k: usize) -> Vec<(f64, f64)> {
    (0..k)
        .map(|_| (rng.random_range(4.0..200.0), rng.random_range(4.0..200.0)))
        .collect()
}

pub fn random_levels(rng: &mut ChaCha8Rng, spec: &HypercolumnSpec) -> Vec<FeatureMap> {
    (0..spec.levels)
        .map(|i| {
            let (h, w) = spec.level_size(i);
            let data = (0..h * w * spec.delta).map(|_| rng.random_range(-1.0..1.0)).collect();
            FeatureMap::from_vec(h, w, spec.delta, data).unwrap()
        })
        .collect()
}

// loss oracle

pub fn naive_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn naive_bce(t: f64, logit: f64) -> f64 {
    let p = naive_sigmoid(logit).clamp(1e-15, 1.0 - 1e-15);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Scalar-loop loss over `rows x cols x anchors` with hand-computed offsets.
pub fn scalar_loss(inst: &CheckInstance) -> [f64; 6] {
    let layout = inst.target.layout();
    let grid = inst.target.grid();
    let (nc, nv, na) = (layout.n_classes, layout.n_vertices, layout.n_anchors);
    let len = 5 + nc + 3 * nv;
    let (iw, ih) = (grid.input_w() as f64, grid.input_h() as f64);
    let t = inst.target.data();
    let p = inst.pred.data();
    let mut parts = [0.0f64; 6];
    for row in 0..grid.rows() {
        for col in 0..grid.cols() {
            for a in 0..na {
                let slot = (row * grid.cols() + col) * na + a;
                let o = slot * len;
                let ignore = if inst.ignore.is_ignored(slot) { 0.0 } else { 1.0 };
                let q = t[o + 4];
                let (aw, ah) = inst.anchors.size(a);
                let w = aw * t[o + 2].exp();
                let h = ah * t[o + 3].exp();
                let z = 2.0 - (w * h) / (iw * ih);

                let l1 = q * z * (naive_bce(t[o], p[o]) + naive_bce(t[o + 1], p[o + 1]));
                let l2 = q * 0.5 * z * ((t[o + 2] - p[o + 2]).powi(2) + (t[o + 3] - p[o + 3]).powi(2));
                let l3 = q * naive_bce(q, p[o + 4]) + (1.0 - q) * naive_bce(q, p[o + 4]) * ignore;
                let mut l4 = 0.0;
                for k in 0..nc {
                    l4 += naive_bce(t[o + 5 + k], p[o + 5 + k]);
                }
                let mut l5 = 0.0;
                if q > 0.0 {
                    let diag = (w * w + h * h).sqrt();
                    let anchor_diag = (aw * aw + ah * ah).sqrt();
                    for v in 0..nv {
                        let base = o + 5 + nc + 3 * v;
                        let g = t[base + 2];
                        let mut term = naive_bce(g, p[base + 2]);
                        if g > 0.0 {
                            let d = (t[base] * diag / anchor_diag).ln() - p[base];
                            term += g * d * d + g * naive_bce(t[base + 1], p[base + 1]);
                        }
                        l5 += term;
                    }
                    l5 *= q * 0.2 * z;
                }
                parts[0] += l1;
                parts[1] += l2;
                parts[2] += l3;
                parts[3] += l4;
                parts[4] += l5;
                parts[5] += l1 + l2 + l3 + l4 + l5;
            }
        }
    }
    parts
}

// AP oracle

fn plain_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    inter / (a.width() * a.height() + b.width() * b.height() - inter)
}

/// Exhaustive AP: global score order, greedy per-image matching, and for every
/// recall point the maximum precision over all curve points reaching it.
pub fn brute_force_ap(dets: &[Detection], gts: &[GroundTruth], class: u32, t: f64) -> f64 {
    let gts: Vec<&GroundTruth> = gts.iter().filter(|g| g.class_id == class).collect();
    let mut dets: Vec<&Detection> = dets.iter().filter(|d| d.class_id == class).collect();
    dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut taken = vec![false; gts.len()];
    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for d in dets {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.image_id != d.image_id {
                continue;
            }
            let iou = plain_iou(&d.bbox, &gt.bbox);
            if iou >= t && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, _)) => {
                taken[g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push((tp as f64 / gts.len() as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut sum = 0.0;
    for i in 0..=100 {
        let r = i as f64 * 0.01;
        let best = curve
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0f64, f64::max);
        sum += best;
    }
    sum / 101.0
}

