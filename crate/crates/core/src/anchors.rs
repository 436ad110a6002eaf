//! Anchor estimation by k-means under IoU, and per-scale diagnostics.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::grid::{count_rewrites, AnchorSet, GridSpec};

/// IoU of two boxes sharing a center, from their sizes alone.
pub fn size_iou(w1: f64, h1: f64, w2: f64, h2: f64) -> f64 {
    let inter = w1.min(w2) * h1.min(h2);
    inter / (w1 * h1 + w2 * h2 - inter)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeSample {
    pub w: f64,
    pub h: f64,
}

impl SizeSample {
    pub fn new(w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "box size must be positive, got {w}x{h}"
            )));
        }
        Ok(Self { w, h })
    }

    pub fn from_box(b: &BBox) -> Result<Self> {
        Self::new(b.width(), b.height())
    }

    fn iou(&self, c: (f64, f64)) -> f64 {
        size_iou(self.w, self.h, c.0, c.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Sorted by area, ascending.
    pub centroids: Vec<(f64, f64)>,
    pub assignments: Vec<usize>,
    pub mean_iou: f64,
    /// Lloyd iterations performed (assignment steps).
    pub iterations: usize,
    pub converged: bool,
    /// Mean IoU after every assignment step.
    pub history: Vec<f64>,
}

impl KMeansResult {
    pub fn anchor_set(&self) -> Result<AnchorSet> {
        AnchorSet::new(self.centroids.clone())
    }
}

fn distinct_count(samples: &[SizeSample]) -> usize {
    let mut keys: Vec<(u64, u64)> = samples.iter().map(|s| (s.w.to_bits(), s.h.to_bits())).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Index and IoU of the best centroid; ties go to the lowest index.
pub fn nearest_centroid(s: &SizeSample, centroids: &[(f64, f64)]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, &c) in centroids.iter().enumerate() {
        let iou = s.iou(c);
        if iou > best.1 {
            best = (j, iou);
        }
    }
    best
}

/// k-means++ style seeding with distance `1 - IoU`, deterministic in `seed`.
pub fn seed_centroids(samples: &[SizeSample], k: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to cluster".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let distinct = distinct_count(samples);
    if k > distinct {
        return Err(Error::InfeasibleK { k, distinct });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = samples[rng.random_range(0..samples.len())];
    let mut centroids = vec![(first.w, first.h)];
    let mut weight: Vec<f64> = samples.iter().map(|s| (1.0 - s.iou(centroids[0])).powi(2)).collect();
    while centroids.len() < k {
        let total: f64 = weight.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in weight.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            chosen.expect("positive total weight")
        } else {
            // numerically every sample sits on a centroid; take the farthest
            farthest_sample(samples, &centroids)
        };
        let c = (samples[pick].w, samples[pick].h);
        centroids.push(c);
        for (w, s) in weight.iter_mut().zip(samples) {
            *w = w.min((1.0 - s.iou(c)).powi(2));
        }
    }
    Ok(centroids)
}

/// Sample with the lowest best-IoU to the given centroids (lowest index on ties).
fn farthest_sample(samples: &[SizeSample], centroids: &[(f64, f64)]) -> usize {
    let mut worst = (0, f64::INFINITY);
    for (i, s) in samples.iter().enumerate() {
        let iou = nearest_centroid(s, centroids).1;
        if iou < worst.1 {
            worst = (i, iou);
        }
    }
    worst.0
}

/// Lloyd iterations from explicit starting centroids.
///
/// Each cluster moves to the arithmetic mean of its members' `(w, h)`. Empty
/// clusters are re-seeded on the sample farthest from all centroids. Stops
/// once an assignment step changes nothing.
pub fn lloyd_iou(samples: &[SizeSample], initial: Vec<(f64, f64)>, max_iter: usize) -> Result<KMeansResult> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to cluster".into()));
    }
    let k = initial.len();
    let mut centroids = initial;
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..max_iter.max(1) {
        let next: Vec<(usize, f64)> = samples.iter().map(|s| nearest_centroid(s, &centroids)).collect();
        history.push(next.iter().map(|p| p.1).sum::<f64>() / samples.len() as f64);
        let next: Vec<usize> = next.into_iter().map(|p| p.0).collect();
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;

        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for (s, &a) in samples.iter().zip(&assignments) {
            sums[a].0 += s.w;
            sums[a].1 += s.h;
            sums[a].2 += 1;
        }
        for j in 0..k {
            let (sw, sh, n) = sums[j];
            if n == 0 {
                continue;
            }
            centroids[j] = (sw / n as f64, sh / n as f64);
        }
        for j in 0..k {
            if sums[j].2 == 0 {
                let i = farthest_sample(samples, &centroids);
                centroids[j] = (samples[i].w, samples[i].h);
            }
        }
    }
    let iterations = history.len();

    // sort by area and remap
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| (centroids[a].0 * centroids[a].1).total_cmp(&(centroids[b].0 * centroids[b].1)));
    let mut rank = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let sorted: Vec<(f64, f64)> = order.iter().map(|&j| centroids[j]).collect();
    let assignments: Vec<usize> = if converged {
        assignments.iter().map(|&a| rank[a]).collect()
    } else {
        samples.iter().map(|s| nearest_centroid(s, &sorted).0).collect()
    };
    let mean_iou = samples
        .iter()
        .zip(&assignments)
        .map(|(s, &a)| s.iou(sorted[a]))
        .sum::<f64>()
        / samples.len() as f64;
    Ok(KMeansResult {
        centroids: sorted,
        assignments,
        mean_iou,
        iterations,
        converged,
        history,
    })
}

/// k-means over box sizes with distance `1 - IoU` of co-centered boxes.
pub fn kmeans_iou(samples: &[SizeSample], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let initial = seed_centroids(samples, k, seed)?;
    lloyd_iou(samples, initial, max_iter)
}

/// Number of samples per output stride, by the stride owning each sample's
/// best-IoU anchor. Returned as `(stride, count)` ascending by stride.
pub fn scale_histogram(samples: &[SizeSample], anchors: &AnchorSet) -> Result<Vec<(u32, usize)>> {
    let partition = anchors
        .partition()
        .ok_or_else(|| Error::InvalidArgument("anchor set has no per-scale partition".into()))?;
    let scales = anchors.scales();
    let mut counts = vec![0usize; scales.len()];
    for s in samples {
        let (a, _) = nearest_centroid(s, anchors.sizes());
        let idx = scales.binary_search(&partition[a]).expect("stride from partition");
        counts[idx] += 1;
    }
    Ok(scales.into_iter().zip(counts).collect())
}

/// One audit configuration: input size plus either a single stride or a
/// per-scale anchor partition.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    pub input_w: u32,
    pub input_h: u32,
    pub strides: Vec<u32>,
    /// Split anchors over `strides` by area instead of using one stride.
    pub per_scale: bool,
}

impl AuditConfig {
    pub fn label(&self) -> String {
        let scales: Vec<String> = self.strides.iter().map(|s| format!("1/{s}")).collect();
        scales.join(" ")
    }
}

/// Boxes of one image, already mapped into the network input frame.
pub type Scene = Vec<BBox>;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub config: AuditConfig,
    pub anchors: Vec<(f64, f64)>,
    pub mean_iou: f64,
    pub total_labels: usize,
    pub rewritten: usize,
    pub colliding_pairs: usize,
    pub ratio: f64,
    pub scale_counts: Vec<(u32, usize)>,
}

/// Audits rewrite ratios for a list of configurations using k-means anchors.
pub fn anchor_report(scenes: &[Scene], k: usize, seed: u64, configs: &[AuditConfig]) -> Result<Vec<ReportRow>> {
    let samples: Vec<SizeSample> = scenes
        .iter()
        .flatten()
        .map(SizeSample::from_box)
        .collect::<Result<_>>()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no boxes to derive anchors from".into()));
    }
    let km = kmeans_iou(&samples, k, seed, 300)?;
    configs
        .iter()
        .map(|cfg| audit_config(scenes, &km.centroids, cfg).map(|mut row| {
            row.mean_iou = km.mean_iou;
            row
        }))
        .collect()
}

/// Rewrite audit of one configuration with fixed anchors.
pub fn audit_config(scenes: &[Scene], anchors: &[(f64, f64)], cfg: &AuditConfig) -> Result<ReportRow> {
    let first = *cfg
        .strides
        .first()
        .ok_or_else(|| Error::InvalidArgument("configuration lists no scales".into()))?;
    let grid = GridSpec::new(cfg.input_w, cfg.input_h, first)?;
    let set = if cfg.per_scale {
        AnchorSet::partitioned_by_area(anchors.to_vec(), &cfg.strides)?
    } else {
        if cfg.strides.len() != 1 {
            return Err(Error::InvalidArgument(
                "a single-scale configuration takes exactly one scale".into(),
            ));
        }
        AnchorSet::new(anchors.to_vec())?
    };
    for &s in &cfg.strides {
        grid.with_stride(s)?;
    }
    let mut total = 0;
    let mut rewritten = 0;
    let mut pairs = 0;
    for scene in scenes {
        let r = count_rewrites(scene, &grid, &set)?;
        total += r.total_labels;
        rewritten += r.rewritten;
        pairs += r.colliding_pairs;
    }
    let scale_counts = if cfg.per_scale {
        let samples: Vec<SizeSample> = scenes
            .iter()
            .flatten()
            .map(SizeSample::from_box)
            .collect::<Result<_>>()?;
        scale_histogram(&samples, &set)?
    } else {
        vec![(first, total)]
    };
    Ok(ReportRow {
        config: cfg.clone(),
        anchors: set.sizes().to_vec(),
        mean_iou: f64::NAN,
        total_labels: total,
        rewritten,
        colliding_pairs: pairs,
        ratio: if total == 0 { 0.0 } else { rewritten as f64 / total as f64 },
        scale_counts,
    })
}

pub const REPORT_CSV_HEADER: &str =
    "input_w,input_h,scales,per_scale,n_anchors,mean_iou,total_labels,rewritten,colliding_pairs,rewritten_pct,scale_counts";

/// CSV with [`REPORT_CSV_HEADER`] and one line per row.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let counts: Vec<String> = r.scale_counts.iter().map(|(s, c)| format!("1/{s}:{c}")).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6},{},{},{},{:.4},{}",
            r.config.input_w,
            r.config.input_h,
            r.config.label(),
            r.config.per_scale,
            r.anchors.len(),
            r.mean_iou,
            r.total_labels,
            r.rewritten,
            r.colliding_pairs,
            100.0 * r.ratio,
            counts.join(" ")
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(w: f64, h: f64) -> SizeSample {
        SizeSample::new(w, h).unwrap()
    }

    #[test]
    fn two_point_clusters() {
        let mut s = vec![sample(10., 10.); 50];
        s.extend(vec![sample(100., 100.); 50]);
        let r = kmeans_iou(&s, 2, 7, 100).unwrap();
        assert_eq!(r.centroids, vec![(10., 10.), (100., 100.)]);
        assert_eq!(r.mean_iou, 1.0);
        assert!(r.converged);
        assert!(r.assignments[..50].iter().all(|&a| a == 0));
        assert!(r.assignments[50..].iter().all(|&a| a == 1));
    }

    #[test]
    fn identical_samples_k1() {
        let s = vec![sample(13., 7.); 9];
        let r = kmeans_iou(&s, 1, 0, 10).unwrap();
        assert_eq!(r.centroids, vec![(13., 7.)]);
    }

    #[test]
    fn infeasible_k() {
        let s = vec![sample(1., 1.), sample(1., 1.), sample(2., 2.)];
        assert_eq!(
            kmeans_iou(&s, 3, 0, 10).unwrap_err(),
            Error::InfeasibleK { k: 3, distinct: 2 }
        );
        assert!(kmeans_iou(&[], 1, 0, 10).is_err());
        assert!(kmeans_iou(&s, 0, 0, 10).is_err());
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // start both centroids on the same point: one cluster stays empty
        let s = vec![sample(10., 10.), sample(11., 10.), sample(90., 100.), sample(100., 100.)];
        let r = lloyd_iou(&s, vec![(10., 10.), (10., 10.)], 50).unwrap();
        assert!(r.converged);
        assert_eq!(r.centroids.len(), 2);
        assert!(r.centroids[1].0 > 80.0, "{:?}", r.centroids);
    }

    #[test]
    fn deterministic_in_seed() {
        let s: Vec<SizeSample> = (1..60).map(|i| sample(i as f64, (i * 7 % 50 + 1) as f64)).collect();
        let a = kmeans_iou(&s, 5, 42, 100).unwrap();
        let b = kmeans_iou(&s, 5, 42, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn histogram_single_anchor_scale() {
        let anchors = AnchorSet::partitioned_by_area(
            (1..=9).map(|i| (i as f64 * 10., i as f64 * 10.)).collect(),
            &[8, 16, 32],
        )
        .unwrap();
        let s = vec![sample(10., 10.); 20];
        assert_eq!(scale_histogram(&s, &anchors).unwrap(), vec![(8, 20), (16, 0), (32, 0)]);
        let unpartitioned = AnchorSet::new(vec![(1., 1.)]).unwrap();
        assert!(scale_histogram(&s, &unpartitioned).is_err());
    }

    #[test]
    fn report_requires_samples() {
        let cfg = AuditConfig {
            input_w: 416,
            input_h: 416,
            strides: vec![32],
            per_scale: false,
        };
        assert!(anchor_report(&[], 3, 0, &[cfg]).is_err());
    }

    #[test]
    fn report_single_row_csv() {
        let scene = vec![
            BBox::new(90., 90., 110., 110.).unwrap(),
            BBox::new(100., 95., 120., 115.).unwrap(),
            BBox::new(300., 300., 340., 360.).unwrap(),
        ];
        let cfg = AuditConfig {
            input_w: 416,
            input_h: 416,
            strides: vec![32],
            per_scale: false,
        };
        let rows = anchor_report(&[scene], 1, 0, &[cfg]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].total_labels, rows[0].rewritten), (3, 1));
        let csv = report_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("416,416,1/32,false,1,"));
    }
}
