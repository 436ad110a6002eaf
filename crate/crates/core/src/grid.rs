//! Single-scale YOLO grid: target tensors, label-rewrite auditing and decoding.
//!
//! Grid coordinates are `(col, row)` with the origin at the top-left cell. A
//! label is owned by the cell holding its box center and by its best-IoU
//! anchor; two labels owning the same `(cell, anchor)` slot collide and the
//! later one overwrites the earlier one.

use crate::anchors::size_iou;
use crate::error::{Error, Result};
use crate::geometry::{box_center, iou_box, BBox, Polygon};
use crate::polar::{decode_polygon, encode_polygon, PolarGridSpec, PolarPolygon, PolarVertex};
use crate::{logit, sigmoid};

/// Output grid of an `input_w x input_h` image at scale `1 / stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    input_w: u32,
    input_h: u32,
    stride: u32,
}

impl GridSpec {
    pub fn new(input_w: u32, input_h: u32, stride: u32) -> Result<Self> {
        if stride == 0 || input_w == 0 || input_h == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid {input_w}x{input_h} at stride {stride} must be positive"
            )));
        }
        if !input_w.is_multiple_of(stride) || !input_h.is_multiple_of(stride) {
            return Err(Error::InvalidArgument(format!(
                "input {input_w}x{input_h} is not divisible by stride {stride}"
            )));
        }
        Ok(Self {
            input_w,
            input_h,
            stride,
        })
    }

    pub fn input_w(&self) -> u32 {
        self.input_w
    }

    pub fn input_h(&self) -> u32 {
        self.input_h
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    /// The scale ratio `s = 1 / stride`.
    pub fn scale(&self) -> f64 {
        1.0 / self.stride as f64
    }

    pub fn cols(&self) -> usize {
        (self.input_w / self.stride) as usize
    }

    pub fn rows(&self) -> usize {
        (self.input_h / self.stride) as usize
    }

    pub fn with_stride(&self, stride: u32) -> Result<Self> {
        Self::new(self.input_w, self.input_h, stride)
    }
}

/// Prior box sizes, optionally partitioned over output strides.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    sizes: Vec<(f64, f64)>,
    strides: Option<Vec<u32>>,
}

impl AnchorSet {
    pub fn new(sizes: Vec<(f64, f64)>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidArgument("anchor set is empty".into()));
        }
        if let Some(bad) = sizes.iter().find(|(w, h)| !(*w > 0.0 && *h > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "anchor dimensions must be positive, got {bad:?}"
            )));
        }
        Ok(Self {
            sizes,
            strides: None,
        })
    }

    /// Assigns every anchor to an output stride.
    pub fn with_partition(mut self, strides: Vec<u32>) -> Result<Self> {
        if strides.len() != self.sizes.len() {
            return Err(Error::InvalidArgument(format!(
                "partition has {} entries for {} anchors",
                strides.len(),
                self.sizes.len()
            )));
        }
        if strides.contains(&0) {
            return Err(Error::InvalidArgument("stride 0 in partition".into()));
        }
        self.strides = Some(strides);
        Ok(self)
    }

    /// Splits area-sorted anchors into equal consecutive groups, smallest
    /// anchors on the finest stride. Nine anchors over `[8, 16, 32]` give
    /// the usual three-scale triplets.
    pub fn partitioned_by_area(sizes: Vec<(f64, f64)>, strides: &[u32]) -> Result<Self> {
        if strides.is_empty() || !sizes.len().is_multiple_of(strides.len()) {
            return Err(Error::InvalidArgument(format!(
                "{} anchors cannot be split evenly over {} scales",
                sizes.len(),
                strides.len()
            )));
        }
        let mut sizes = sizes;
        sizes.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
        let mut sorted = strides.to_vec();
        sorted.sort_unstable();
        let per = sizes.len() / strides.len();
        let part = (0..sizes.len()).map(|i| sorted[i / per]).collect();
        Self::new(sizes)?.with_partition(part)
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn sizes(&self) -> &[(f64, f64)] {
        &self.sizes
    }

    pub fn size(&self, j: usize) -> (f64, f64) {
        self.sizes[j]
    }

    pub fn diagonal(&self, j: usize) -> f64 {
        let (w, h) = self.sizes[j];
        w.hypot(h)
    }

    pub fn partition(&self) -> Option<&[u32]> {
        self.strides.as_deref()
    }

    /// Distinct strides of the partition, ascending.
    pub fn scales(&self) -> Vec<u32> {
        let mut s = self.strides.clone().unwrap_or_default();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Per-slot channel layout: `tx, ty, tw, th, q`, class one-hot, then
/// `(alpha, beta, gamma)` per polar sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotLayout {
    pub n_anchors: usize,
    pub n_classes: usize,
    pub n_vertices: usize,
}

impl SlotLayout {
    pub const TX: usize = 0;
    pub const TY: usize = 1;
    pub const TW: usize = 2;
    pub const TH: usize = 3;
    pub const Q: usize = 4;
    pub const CLASSES: usize = 5;

    pub fn slot_len(&self) -> usize {
        5 + self.n_classes + 3 * self.n_vertices
    }

    /// Filters of the 1x1 output convolution, `n_a (n_c + 5 + 3 n_v)`.
    pub fn filter_count(&self) -> usize {
        self.n_anchors * self.slot_len()
    }

    pub fn class(&self, k: usize) -> usize {
        Self::CLASSES + k
    }

    pub fn alpha(&self, v: usize) -> usize {
        Self::CLASSES + self.n_classes + 3 * v
    }

    pub fn beta(&self, v: usize) -> usize {
        self.alpha(v) + 1
    }

    pub fn gamma(&self, v: usize) -> usize {
        self.alpha(v) + 2
    }
}

/// Dense `rows x cols x anchors x slot_len` tensor, used both for targets and
/// for raw network predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor {
    grid: GridSpec,
    layout: SlotLayout,
    data: Vec<f64>,
}

/// Ground-truth encoding.
pub type TargetTensor = GridTensor;
/// Pre-activation network output.
pub type RawPrediction = GridTensor;

impl GridTensor {
    pub fn zeros(grid: GridSpec, layout: SlotLayout) -> Self {
        let len = grid.rows() * grid.cols() * layout.n_anchors * layout.slot_len();
        Self {
            grid,
            layout,
            data: vec![0.0; len],
        }
    }

    pub fn from_raw(grid: GridSpec, layout: SlotLayout, data: Vec<f64>) -> Result<Self> {
        let len = grid.rows() * grid.cols() * layout.n_anchors * layout.slot_len();
        if data.len() != len {
            return Err(Error::ShapeMismatch {
                expected: format!(
                    "{}x{}x{}x{} = {len} values",
                    grid.rows(),
                    grid.cols(),
                    layout.n_anchors,
                    layout.slot_len()
                ),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self { grid, layout, data })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn layout(&self) -> SlotLayout {
        self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn n_slots(&self) -> usize {
        self.grid.rows() * self.grid.cols() * self.layout.n_anchors
    }

    pub fn slot_index(&self, col: usize, row: usize, anchor: usize) -> usize {
        (row * self.grid.cols() + col) * self.layout.n_anchors + anchor
    }

    /// `(col, row, anchor)` of a slot index.
    pub fn slot_position(&self, slot: usize) -> (usize, usize, usize) {
        let na = self.layout.n_anchors;
        let cell = slot / na;
        (cell % self.grid.cols(), cell / self.grid.cols(), slot % na)
    }

    pub fn slot(&self, slot: usize) -> &[f64] {
        let n = self.layout.slot_len();
        &self.data[slot * n..(slot + 1) * n]
    }

    pub fn slot_mut(&mut self, slot: usize) -> &mut [f64] {
        let n = self.layout.slot_len();
        &mut self.data[slot * n..(slot + 1) * n]
    }

    pub fn same_shape(&self, other: &GridTensor) -> Result<()> {
        if self.grid != other.grid || self.layout != other.layout {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?} {:?}", self.grid, self.layout),
                actual: format!("{:?} {:?}", other.grid, other.layout),
            });
        }
        Ok(())
    }
}

/// `1` iff `x` and `y` fall into the same grid cell at scale `z`.
pub fn xi(x: f64, y: f64, z: f64) -> u8 {
    u8::from((x * z).floor() == (y * z).floor())
}

/// Index of the anchor with maximal co-centered IoU; ties go to the lowest index.
pub fn match_anchor(b: &BBox, anchors: &AnchorSet) -> Result<usize> {
    let (w, h) = (b.width(), b.height());
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::InvalidBox(format!(
            "degenerate box {w}x{h} cannot be matched to an anchor"
        )));
    }
    let mut best = 0;
    let mut best_iou = f64::NEG_INFINITY;
    for (j, &(aw, ah)) in anchors.sizes().iter().enumerate() {
        let iou = size_iou(w, h, aw, ah);
        if iou > best_iou {
            best = j;
            best_iou = iou;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RewriteEvent {
    /// Input index of the label that is lost.
    pub overwritten: usize,
    /// Input index of the label written over it.
    pub by: usize,
    pub cell: (i64, i64),
    pub anchor: usize,
    pub stride: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewriteReport {
    pub total_labels: usize,
    /// Labels lost to a later label in the same slot.
    pub rewritten: usize,
    /// `rewritten / total_labels`, 0 for an empty scene.
    pub ratio: f64,
    /// Unordered label pairs sharing a slot.
    pub colliding_pairs: usize,
    pub events: Vec<RewriteEvent>,
}

impl RewriteReport {
    fn from_events(total_labels: usize, colliding_pairs: usize, events: Vec<RewriteEvent>) -> Self {
        let rewritten = events.len();
        Self {
            total_labels,
            rewritten,
            ratio: if total_labels == 0 {
                0.0
            } else {
                rewritten as f64 / total_labels as f64
            },
            colliding_pairs,
            events,
        }
    }
}

/// Pairwise label-rewrite audit.
///
/// Labels `i` and `j` collide when `xi` holds on both center coordinates at
/// the stride of their common best anchor. A label counts as rewritten when a
/// later label collides with it. With a per-scale anchor partition each anchor
/// uses its own stride; otherwise `grid.stride()`.
pub fn count_rewrites(boxes: &[BBox], grid: &GridSpec, anchors: &AnchorSet) -> Result<RewriteReport> {
    let assigned = boxes
        .iter()
        .map(|b| {
            let a = match_anchor(b, anchors)?;
            let stride = anchors.partition().map_or(grid.stride(), |p| p[a]);
            Ok((box_center(b), a, stride))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut events = Vec::new();
    let mut pairs = 0usize;
    for i in 0..assigned.len() {
        let (ci, ai, stride) = assigned[i];
        let z = 1.0 / stride as f64;
        let mut first_later = None;
        for (j, &(cj, aj, _)) in assigned.iter().enumerate().skip(i + 1) {
            if ai == aj && xi(ci.x, cj.x, z) + xi(ci.y, cj.y, z) == 2 {
                pairs += 1;
                first_later.get_or_insert(j);
            }
        }
        if let Some(j) = first_later {
            events.push(RewriteEvent {
                overwritten: i,
                by: j,
                cell: ((ci.x * z).floor() as i64, (ci.y * z).floor() as i64),
                anchor: ai,
                stride,
            });
        }
    }
    Ok(RewriteReport::from_events(boxes.len(), pairs, events))
}

/// A ground-truth object: box (carrying the class id) and optional polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub bbox: BBox,
    pub polygon: Option<Polygon>,
}

impl Label {
    pub fn new(bbox: BBox, polygon: Option<Polygon>) -> Self {
        Self { bbox, polygon }
    }
}

/// Writes labels into a dense target tensor, in input order.
///
/// A later label in an occupied `(cell, anchor)` slot replaces the earlier one
/// and the overwrite is recorded in the returned report.
pub fn build_targets(
    labels: &[Label],
    grid: &GridSpec,
    anchors: &AnchorSet,
    n_classes: usize,
    polar: PolarGridSpec,
) -> Result<(TargetTensor, RewriteReport)> {
    if anchors.partition().is_some() {
        return Err(Error::InvalidArgument(
            "target building is single-scale; anchor set must not be partitioned".into(),
        ));
    }
    if n_classes == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    let layout = SlotLayout {
        n_anchors: anchors.len(),
        n_classes,
        n_vertices: polar.n_vertices(),
    };
    let mut target = GridTensor::zeros(*grid, layout);
    let mut owner: Vec<Option<usize>> = vec![None; target.n_slots()];
    let mut events = Vec::new();
    let mut pairs = 0usize;
    let mut slot_counts = vec![0usize; target.n_slots()];
    let s = grid.scale();

    for (index, label) in labels.iter().enumerate() {
        let b = &label.bbox;
        if b.class_id as usize >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "label {index} has class {} but only {n_classes} classes",
                b.class_id
            )));
        }
        let c = box_center(b);
        let (gx, gy) = (c.x * s, c.y * s);
        let (col, row) = (gx.floor(), gy.floor());
        if col < 0.0 || row < 0.0 || col >= grid.cols() as f64 || row >= grid.rows() as f64 {
            return Err(Error::OutOfBounds {
                index,
                x: c.x,
                y: c.y,
                grid_w: grid.cols(),
                grid_h: grid.rows(),
            });
        }
        let anchor = match_anchor(b, anchors)?;
        let (aw, ah) = anchors.size(anchor);
        let slot = target.slot_index(col as usize, row as usize, anchor);

        pairs += slot_counts[slot];
        slot_counts[slot] += 1;
        if let Some(prev) = owner[slot].replace(index) {
            events.push(RewriteEvent {
                overwritten: prev,
                by: index,
                cell: (col as i64, row as i64),
                anchor,
                stride: grid.stride(),
            });
        }

        let values = target.slot_mut(slot);
        values.fill(0.0);
        values[SlotLayout::TX] = gx - col;
        values[SlotLayout::TY] = gy - row;
        values[SlotLayout::TW] = (b.width() / aw).ln();
        values[SlotLayout::TH] = (b.height() / ah).ln();
        values[SlotLayout::Q] = 1.0;
        values[layout.class(b.class_id as usize)] = 1.0;
        if let Some(poly) = &label.polygon {
            let enc = encode_polygon(poly, b, polar)?;
            for (v, cell) in enc.polygon.cells.iter().enumerate() {
                values[layout.alpha(v)] = cell.alpha;
                values[layout.beta(v)] = cell.beta;
                values[layout.gamma(v)] = cell.gamma;
            }
        }
    }
    // events are recorded in write order; report them by lost label
    events.sort_by_key(|e| e.overwritten);
    Ok((target, RewriteReport::from_events(labels.len(), pairs, events)))
}

/// Box decoded from one raw slot, before thresholding.
fn decode_slot_box(raw: &GridTensor, anchors: &AnchorSet, slot: usize) -> BBox {
    let grid = raw.grid();
    let (col, row, a) = raw.slot_position(slot);
    let v = raw.slot(slot);
    let stride = grid.stride() as f64;
    let cx = (col as f64 + sigmoid(v[SlotLayout::TX])) * stride;
    let cy = (row as f64 + sigmoid(v[SlotLayout::TY])) * stride;
    let (aw, ah) = anchors.size(a);
    let w = aw * v[SlotLayout::TW].exp();
    let h = ah * v[SlotLayout::TH].exp();
    BBox {
        x1: cx - 0.5 * w,
        y1: cy - 0.5 * h,
        x2: cx + 0.5 * w,
        y2: cy + 0.5 * h,
        class_id: 0,
        score: None,
    }
}

fn check_anchors(raw: &GridTensor, anchors: &AnchorSet) -> Result<()> {
    if raw.layout().n_anchors != anchors.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} anchors", anchors.len()),
            actual: format!("{} anchors", raw.layout().n_anchors),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub bbox: BBox,
    /// `None` when fewer than three sectors reach confidence 0.5.
    pub polygon: Option<Polygon>,
    pub score: f64,
    pub class_id: u32,
    pub slot: usize,
}

/// Turns raw logits into detections with `q * max class >= conf_threshold`.
///
/// Center offsets, confidences, classes and in-sector angles pass through the
/// logistic function; sizes and vertex distances are exponentiated against
/// the anchor (`w = a_w e^tw`, distance `= a_d e^alpha`). Distances are then
/// made relative to the decoded box diagonal before polygon decoding.
pub fn decode_predictions(raw: &RawPrediction, anchors: &AnchorSet, conf_threshold: f64) -> Result<Vec<Decoded>> {
    check_anchors(raw, anchors)?;
    let layout = raw.layout();
    let spec = PolarGridSpec::new(layout.n_vertices).ok();
    let mut out = Vec::new();
    for slot in 0..raw.n_slots() {
        let v = raw.slot(slot);
        let q = sigmoid(v[SlotLayout::Q]);
        let (class_id, class_p) = (0..layout.n_classes)
            .map(|k| (k, sigmoid(v[layout.class(k)])))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let score = q * class_p;
        if !(score >= conf_threshold) {
            continue;
        }
        let mut bbox = decode_slot_box(raw, anchors, slot);
        bbox.class_id = class_id as u32;
        bbox.score = Some(score.clamp(0.0, 1.0));
        let (_, _, a) = raw.slot_position(slot);
        let polygon = spec.and_then(|spec| {
            let diag = bbox.diagonal();
            let ad = anchors.diagonal(a);
            let cells = (0..layout.n_vertices)
                .map(|k| PolarVertex {
                    alpha: ad * v[layout.alpha(k)].exp() / diag,
                    beta: sigmoid(v[layout.beta(k)]),
                    gamma: sigmoid(v[layout.gamma(k)]),
                })
                .collect();
            decode_polygon(&PolarPolygon { spec, cells }, &bbox, 0.5).ok()
        });
        out.push(Decoded {
            bbox,
            polygon,
            score,
            class_id: class_id as u32,
            slot,
        });
    }
    Ok(out)
}

/// Slots excluded from the no-object confidence loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IgnoreMask {
    ignored: Vec<bool>,
}

impl IgnoreMask {
    /// Nothing ignored.
    pub fn none(n_slots: usize) -> Self {
        Self {
            ignored: vec![false; n_slots],
        }
    }

    pub fn from_flags(ignored: Vec<bool>) -> Self {
        Self { ignored }
    }

    pub fn len(&self) -> usize {
        self.ignored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ignored.is_empty()
    }

    pub fn is_ignored(&self, slot: usize) -> bool {
        self.ignored[slot]
    }

    /// The loss factor `I` for a slot: 0 when ignored, 1 otherwise.
    pub fn factor(&self, slot: usize) -> f64 {
        if self.ignored[slot] {
            0.0
        } else {
            1.0
        }
    }

    pub fn count(&self) -> usize {
        self.ignored.iter().filter(|&&b| b).count()
    }
}

/// Marks `q = 0` slots whose decoded box overlaps some label with IoU strictly
/// above `iou_threshold`.
pub fn compute_ignore_mask(
    raw: &RawPrediction,
    target: &TargetTensor,
    anchors: &AnchorSet,
    labels: &[BBox],
    iou_threshold: f64,
) -> Result<IgnoreMask> {
    raw.same_shape(target)?;
    check_anchors(raw, anchors)?;
    let ignored = (0..raw.n_slots())
        .map(|slot| {
            if target.slot(slot)[SlotLayout::Q] != 0.0 {
                return false;
            }
            let pred = decode_slot_box(raw, anchors, slot);
            labels
                .iter()
                .any(|l| iou_box(&pred, l).is_ok_and(|iou| iou > iou_threshold))
        })
        .collect();
    Ok(IgnoreMask { ignored })
}

/// Raw logits that decode exactly to `target`.
///
/// Probabilities of 0 or 1 map to `-saturation` / `+saturation`; vertex
/// distances become `ln(alpha * box_diag / anchor_diag)`.
pub fn inverse_encode(target: &TargetTensor, anchors: &AnchorSet, saturation: f64) -> Result<RawPrediction> {
    check_anchors(target, anchors)?;
    let layout = target.layout();
    let mut raw = GridTensor::zeros(target.grid(), layout);
    for slot in 0..target.n_slots() {
        let t = target.slot(slot);
        let (_, _, a) = target.slot_position(slot);
        let r = raw.slot_mut(slot);
        let q = t[SlotLayout::Q];
        r[SlotLayout::Q] = logit(q, saturation);
        for k in 0..layout.n_classes {
            r[layout.class(k)] = logit(t[layout.class(k)], saturation);
        }
        for v in 0..layout.n_vertices {
            r[layout.gamma(v)] = logit(t[layout.gamma(v)], saturation);
        }
        if q == 0.0 {
            continue;
        }
        r[SlotLayout::TX] = logit(t[SlotLayout::TX], saturation);
        r[SlotLayout::TY] = logit(t[SlotLayout::TY], saturation);
        r[SlotLayout::TW] = t[SlotLayout::TW];
        r[SlotLayout::TH] = t[SlotLayout::TH];
        let (aw, ah) = anchors.size(a);
        let diag = (aw * t[SlotLayout::TW].exp()).hypot(ah * t[SlotLayout::TH].exp());
        for v in 0..layout.n_vertices {
            if t[layout.gamma(v)] > 0.0 {
                r[layout.alpha(v)] = (t[layout.alpha(v)] * diag / anchors.diagonal(a)).ln();
                r[layout.beta(v)] = logit(t[layout.beta(v)], saturation);
            }
        }
    }
    Ok(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    fn centered(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::from_center(Point::new(cx, cy), w, h).unwrap()
    }

    fn one_anchor() -> AnchorSet {
        AnchorSet::new(vec![(10.0, 10.0)]).unwrap()
    }

    #[test]
    fn xi_examples() {
        assert_eq!(xi(100.0, 120.0, 1.0 / 32.0), 1);
        assert_eq!(xi(100.0, 129.0, 1.0 / 32.0), 0);
        for x in [0.0, 3.7, 100.0, 415.9] {
            for z in [0.25, 1.0 / 32.0, 0.3] {
                assert_eq!(xi(x, x, z), 1);
            }
        }
    }

    #[test]
    fn grid_dimensions() {
        let g = GridSpec::new(608, 800, 32).unwrap();
        assert_eq!((g.cols(), g.rows()), (19, 25));
        assert!(GridSpec::new(600, 800, 32).is_err());
        assert!(GridSpec::new(416, 416, 0).is_err());
    }

    #[test]
    fn filter_count_formula() {
        let l = SlotLayout {
            n_anchors: 9,
            n_classes: 20,
            n_vertices: 30,
        };
        assert_eq!(l.filter_count(), 9 * (20 + 5 + 90));
        let boxes_only = 9 * (20 + 5);
        assert!((l.filter_count() as f64 / boxes_only as f64 - 4.6).abs() < 0.01);
    }

    #[test]
    fn rewrite_examples() {
        let boxes = [centered(100., 100., 10., 10.), centered(110., 105., 10., 10.)];
        let g32 = GridSpec::new(416, 416, 32).unwrap();
        let r = count_rewrites(&boxes, &g32, &one_anchor()).unwrap();
        assert_eq!((r.rewritten, r.total_labels, r.colliding_pairs), (1, 2, 1));
        assert_eq!(r.ratio, 0.5);
        assert_eq!(r.events[0].cell, (3, 3));

        let g4 = GridSpec::new(416, 416, 4).unwrap();
        assert_eq!(count_rewrites(&boxes, &g4, &one_anchor()).unwrap().rewritten, 0);
    }

    #[test]
    fn rewrite_empty_scene() {
        let g = GridSpec::new(416, 416, 32).unwrap();
        let r = count_rewrites(&[], &g, &one_anchor()).unwrap();
        assert_eq!((r.total_labels, r.rewritten, r.ratio), (0, 0, 0.0));
    }

    #[test]
    fn different_anchors_do_not_collide() {
        let anchors = AnchorSet::new(vec![(10., 10.), (100., 100.)]).unwrap();
        let boxes = [centered(100., 100., 10., 10.), centered(101., 101., 90., 90.)];
        let g = GridSpec::new(416, 416, 32).unwrap();
        assert_eq!(count_rewrites(&boxes, &g, &anchors).unwrap().rewritten, 0);
    }

    #[test]
    fn three_labels_in_one_slot_lose_two() {
        let boxes = [
            centered(100., 100., 10., 10.),
            centered(101., 100., 10., 10.),
            centered(102., 100., 10., 10.),
        ];
        let g = GridSpec::new(416, 416, 32).unwrap();
        let r = count_rewrites(&boxes, &g, &one_anchor()).unwrap();
        assert_eq!((r.rewritten, r.colliding_pairs), (2, 3));
        assert_eq!(
            r.events.iter().map(|e| (e.overwritten, e.by)).collect::<Vec<_>>(),
            vec![(0, 1), (1, 2)]
        );
    }

    #[test]
    fn per_scale_partition_uses_anchor_stride() {
        // small anchor on stride 8, large anchor on stride 32
        let anchors = AnchorSet::new(vec![(10., 10.), (100., 100.)])
            .unwrap()
            .with_partition(vec![8, 32])
            .unwrap();
        let g = GridSpec::new(416, 416, 8).unwrap();
        let small = [centered(100., 100., 10., 10.), centered(110., 100., 10., 10.)];
        assert_eq!(count_rewrites(&small, &g, &anchors).unwrap().rewritten, 0);
        let large = [centered(100., 100., 100., 100.), centered(110., 100., 100., 100.)];
        let r = count_rewrites(&large, &g, &anchors).unwrap();
        assert_eq!((r.rewritten, r.events[0].stride), (1, 32));
    }

    #[test]
    fn partition_by_area_makes_triplets() {
        let sizes: Vec<(f64, f64)> = (1..=9).rev().map(|i| (i as f64 * 10.0, i as f64 * 10.0)).collect();
        let a = AnchorSet::partitioned_by_area(sizes, &[32, 8, 16]).unwrap();
        assert_eq!(a.partition().unwrap(), &[8, 8, 8, 16, 16, 16, 32, 32, 32]);
        assert_eq!(a.size(0), (10.0, 10.0));
        assert_eq!(a.scales(), vec![8, 16, 32]);
    }

    #[test]
    fn match_anchor_examples() {
        let two = AnchorSet::new(vec![(10., 10.), (100., 100.)]).unwrap();
        assert_eq!(match_anchor(&centered(50., 50., 10., 10.), &two).unwrap(), 0);
        assert_eq!(match_anchor(&centered(50., 50., 100., 100.), &two).unwrap(), 1);
        let three = AnchorSet::new(vec![(10., 10.), (32., 64.), (100., 100.)]).unwrap();
        // co-centered IoU oracle: 100/1800, 1800/2048, 1800/10000
        let ious: [f64; 3] = [100.0 / 1800.0, 1800.0 / 2048.0, 1800.0 / 10000.0];
        let want = ious
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(want, 1);
        assert_eq!(match_anchor(&centered(50., 50., 30., 60.), &three).unwrap(), want);
        assert!(match_anchor(&BBox::new(1., 1., 1., 5.).unwrap(), &three).is_err());
    }

    #[test]
    fn match_anchor_tie_prefers_lowest_index() {
        let a = AnchorSet::new(vec![(20., 10.), (10., 20.)]).unwrap();
        assert_eq!(match_anchor(&centered(50., 50., 10., 10.), &a).unwrap(), 0);
    }

    fn polar4() -> PolarGridSpec {
        PolarGridSpec::new(4).unwrap()
    }

    #[test]
    fn target_at_cell_center() {
        let g = GridSpec::new(64, 64, 16).unwrap();
        let label = Label::new(centered(24., 40., 10., 10.), None);
        let (t, report) = build_targets(&[label], &g, &one_anchor(), 2, polar4()).unwrap();
        assert_eq!(report.rewritten, 0);
        let slot = t.slot_index(1, 2, 0);
        let v = t.slot(slot);
        assert_eq!(&v[..5], &[0.5, 0.5, 0.0, 0.0, 1.0]);
        assert_eq!(&v[5..7], &[1.0, 0.0]);
        let occupied = (0..t.n_slots()).filter(|&s| t.slot(s)[SlotLayout::Q] == 1.0).count();
        assert_eq!(occupied, 1);
        // every q = 0 slot is all zero
        for s in (0..t.n_slots()).filter(|&s| s != slot) {
            assert!(t.slot(s).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn target_log_size_offsets() {
        let g = GridSpec::new(64, 64, 16).unwrap();
        let anchors = AnchorSet::new(vec![(10., 20.)]).unwrap();
        let label = Label::new(centered(20., 20., 20., 10.), None);
        let (t, _) = build_targets(&[label], &g, &anchors, 1, polar4()).unwrap();
        let v = t.slot(t.slot_index(1, 1, 0));
        assert!((v[SlotLayout::TW] - 2f64.ln()).abs() < 1e-15);
        assert!((v[SlotLayout::TH] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn later_label_wins() {
        let g = GridSpec::new(416, 416, 32).unwrap();
        let a = Label::new(BBox::with_class(95., 95., 105., 105., 0).unwrap(), None);
        let b = Label::new(BBox::with_class(105., 100., 115., 110., 1).unwrap(), None);
        let (t, report) = build_targets(&[a, b], &g, &one_anchor(), 2, polar4()).unwrap();
        assert_eq!(report.events.len(), 1);
        assert_eq!((report.events[0].overwritten, report.events[0].by), (0, 1));
        let v = t.slot(t.slot_index(3, 3, 0));
        assert_eq!(v[SlotLayout::CLASSES], 0.0);
        assert_eq!(v[SlotLayout::CLASSES + 1], 1.0);
        assert!((v[SlotLayout::TX] - (110.0 / 32.0 - 3.0)).abs() < 1e-15);
    }

    #[test]
    fn target_out_of_grid_names_label() {
        let g = GridSpec::new(64, 64, 16).unwrap();
        let inside = Label::new(centered(10., 10., 4., 4.), None);
        let outside = Label::new(centered(70., 10., 4., 4.), None);
        let err = build_targets(&[inside, outside], &g, &one_anchor(), 1, polar4()).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { index: 1, .. }));
    }

    #[test]
    fn target_polar_channels() {
        let g = GridSpec::new(64, 64, 16).unwrap();
        let b = BBox::new(10., 10., 30., 30.).unwrap();
        let label = Label::new(b, Some(b.to_polygon().unwrap()));
        let (t, _) = build_targets(&[label], &g, &one_anchor(), 1, polar4()).unwrap();
        let layout = t.layout();
        let v = t.slot(t.slot_index(1, 1, 0));
        for k in 0..4 {
            assert!((v[layout.alpha(k)] - 0.5).abs() < 1e-15);
            assert!((v[layout.beta(k)] - 0.5).abs() < 1e-15);
            assert_eq!(v[layout.gamma(k)], 1.0);
        }
    }

    #[test]
    fn decode_inverse_encoding_roundtrip() {
        let g = GridSpec::new(128, 96, 8).unwrap();
        let anchors = AnchorSet::new(vec![(12., 12.), (40., 24.)]).unwrap();
        let b = BBox::with_class(33.3, 21.7, 70.9, 48.2, 1).unwrap();
        let c = b.center();
        let poly = Polygon::new(vec![
            Point::new(c.x + 15.0, c.y + 2.0),
            Point::new(c.x - 3.0, c.y + 12.0),
            Point::new(c.x - 17.0, c.y - 1.0),
            Point::new(c.x + 1.0, c.y - 11.0),
        ])
        .unwrap();
        let polar = PolarGridSpec::new(8).unwrap();
        let (t, _) = build_targets(&[Label::new(b, Some(poly.clone()))], &g, &anchors, 3, polar).unwrap();
        let raw = inverse_encode(&t, &anchors, 40.0).unwrap();
        let dets = decode_predictions(&raw, &anchors, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert_eq!(d.class_id, 1);
        for (got, want) in [(d.bbox.x1, b.x1), (d.bbox.y1, b.y1), (d.bbox.x2, b.x2), (d.bbox.y2, b.y2)] {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
        let dp = d.polygon.as_ref().unwrap();
        assert_eq!(dp.len(), 4);
        for want in poly.vertices() {
            assert!(dp.vertices().iter().any(|v| v.distance(want) < 1e-4));
        }
    }

    #[test]
    fn decode_saturated_negative_is_empty() {
        let g = GridSpec::new(32, 32, 8).unwrap();
        let layout = SlotLayout {
            n_anchors: 1,
            n_classes: 2,
            n_vertices: 4,
        };
        let raw = GridTensor::from_raw(g, layout, vec![-1000.0; 16 * layout.slot_len()]).unwrap();
        assert!(decode_predictions(&raw, &one_anchor(), 0.1).unwrap().is_empty());
        // threshold 0 admits every finite slot
        assert_eq!(decode_predictions(&raw, &one_anchor(), 0.0).unwrap().len(), 16);
    }

    #[test]
    fn decode_shape_mismatch() {
        let g = GridSpec::new(32, 32, 8).unwrap();
        let layout = SlotLayout {
            n_anchors: 2,
            n_classes: 1,
            n_vertices: 3,
        };
        assert!(GridTensor::from_raw(g, layout, vec![0.0; 7]).is_err());
        let raw = GridTensor::zeros(g, layout);
        assert!(decode_predictions(&raw, &one_anchor(), 0.5).is_err());
    }

    #[test]
    fn ignore_mask_rules() {
        let g = GridSpec::new(32, 32, 16).unwrap();
        let anchors = one_anchor();
        let label = centered(8., 8., 10., 10.);
        let (t, _) = build_targets(&[Label::new(label, None)], &g, &anchors, 1, polar4()).unwrap();
        let mut raw = inverse_encode(&t, &anchors, 40.0).unwrap();
        // slot of cell (1, 0) predicts a box identical to the label
        let s = raw.slot_index(1, 0, 0);
        raw.slot_mut(s)[SlotLayout::TX] = -40.0; // center x -> 16 px
        let shifted = centered(16., 8., 10., 10.);
        let mask = compute_ignore_mask(&raw, &t, &anchors, &[shifted], 0.5).unwrap();
        assert!(mask.is_ignored(s));
        // the labelled slot itself is never ignored
        let own = raw.slot_index(0, 0, 0);
        assert!(!mask.is_ignored(own));

        // far away labels: nothing ignored
        let far = centered(100., 100., 4., 4.);
        let mask = compute_ignore_mask(&raw, &t, &anchors, &[far], 0.5).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn ignore_mask_iou_exactly_half_not_masked() {
        let g = GridSpec::new(32, 32, 16).unwrap();
        let layout = SlotLayout {
            n_anchors: 1,
            n_classes: 1,
            n_vertices: 3,
        };
        let t = GridTensor::zeros(g, layout);
        let mut raw = GridTensor::zeros(g, layout);
        // slot (0,0): center (8,8), size 16x16 with tw = ln(16/10)
        for s in 0..raw.n_slots() {
            raw.slot_mut(s)[SlotLayout::TW] = (1.6f64).ln();
            raw.slot_mut(s)[SlotLayout::TH] = (1.6f64).ln();
        }
        let pred = decode_slot_box(&raw, &one_anchor(), 0);
        // a label covering exactly half of the prediction, inside it: IoU = 0.5
        let label = BBox::new(pred.x1, pred.y1, pred.x1 + 0.5 * pred.width(), pred.y2).unwrap();
        assert_eq!(iou_box(&pred, &label).unwrap(), 0.5);
        let mask = compute_ignore_mask(&raw, &t, &one_anchor(), &[label], 0.5).unwrap();
        assert!(!mask.is_ignored(0));
    }
}
