//! Five-part detection + polygon loss and its analytic gradient.
//!
//! For every slot `(cell, anchor)` with objectness target `q`:
//!
//! ```text
//! total = sum_slots q (l1 + l2 + l5) + l3 + l4
//! l1 = z [H(tx, tx^) + H(ty, ty^)]
//! l2 = 0.5 z [(tw - w^)^2 + (th - h^)^2]
//! l3 = q H(q, q^) + (1 - q) H(q, q^) I
//! l4 = sum_k H(C_k, C^_k)
//! l5 = 0.2 sum_v z [g_v (ln(a_v / a_d) - a^_v)^2 + g_v H(b_v, b^_v) + H(g_v, g^_v)]
//! ```
//!
//! `H` is binary cross-entropy on a logit, `z = 2 - w h` with `w, h` the
//! target box size relative to the input image, `I` the ignore factor, `a_v`
//! the absolute vertex distance (relative alpha times target box diagonal)
//! and `a_d` the anchor diagonal. The no-object branch of `l3` and the class
//! term `l4` apply to every slot.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point, Polygon};
use crate::grid::{
    build_targets, AnchorSet, GridSpec, GridTensor, IgnoreMask, Label, RawPrediction, SlotLayout,
    TargetTensor,
};
use crate::polar::PolarGridSpec;
use crate::sigmoid;

const BOX_SIZE_WEIGHT: f64 = 0.5;
const POLYGON_WEIGHT: f64 = 0.2;

/// Binary cross-entropy of a target probability against a logit, in the
/// overflow-free form `max(x, 0) - t x + ln(1 + e^-|x|)`.
pub fn bce(target: f64, logit: f64) -> f64 {
    logit.max(0.0) - target * logit + (-logit.abs()).exp().ln_1p()
}

/// Derivative of [`bce`] with respect to the logit.
pub fn bce_grad(target: f64, logit: f64) -> f64 {
    sigmoid(logit) - target
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub l5: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown) {
        self.l1 += o.l1;
        self.l2 += o.l2;
        self.l3 += o.l3;
        self.l4 += o.l4;
        self.l5 += o.l5;
        self.total += o.total;
    }
}

struct SlotContext<'a> {
    layout: SlotLayout,
    anchors: &'a AnchorSet,
    input_w: f64,
    input_h: f64,
}

/// Gated loss parts of one slot; writes d(total)/d(pred) into `grad` if given.
fn slot_eval(
    ctx: &SlotContext<'_>,
    anchor: usize,
    p: &[f64],
    t: &[f64],
    ignore: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    let layout = ctx.layout;
    let q = t[SlotLayout::Q];
    let mut parts = LossBreakdown::default();

    let q_weight = q + (1.0 - q) * ignore;
    let hq = bce(q, p[SlotLayout::Q]);
    parts.l3 = q * hq + (1.0 - q) * hq * ignore;
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
        g[SlotLayout::Q] = q_weight * bce_grad(q, p[SlotLayout::Q]);
    }
    for k in 0..layout.n_classes {
        let i = layout.class(k);
        parts.l4 += bce(t[i], p[i]);
        if let Some(g) = grad.as_deref_mut() {
            g[i] = bce_grad(t[i], p[i]);
        }
    }

    if q != 0.0 {
        let (aw, ah) = ctx.anchors.size(anchor);
        let w = aw * t[SlotLayout::TW].exp();
        let h = ah * t[SlotLayout::TH].exp();
        let z = 2.0 - (w / ctx.input_w) * (h / ctx.input_h);

        let l1 = z * (bce(t[SlotLayout::TX], p[SlotLayout::TX]) + bce(t[SlotLayout::TY], p[SlotLayout::TY]));
        let dw = t[SlotLayout::TW] - p[SlotLayout::TW];
        let dh = t[SlotLayout::TH] - p[SlotLayout::TH];
        let l2 = BOX_SIZE_WEIGHT * z * (dw * dw + dh * dh);

        let diag = w.hypot(h);
        let anchor_diag = ctx.anchors.diagonal(anchor);
        let mut l5 = 0.0;
        for v in 0..layout.n_vertices {
            let (ia, ib, ig) = (layout.alpha(v), layout.beta(v), layout.gamma(v));
            let gamma = t[ig];
            let mut term = bce(gamma, p[ig]);
            let mut da = 0.0;
            if gamma != 0.0 {
                let alpha = t[ia];
                if !(alpha > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "vertex {v} is present (gamma {gamma}) but has distance {alpha}"
                    )));
                }
                da = (alpha * diag / anchor_diag).ln() - p[ia];
                term += gamma * da * da + gamma * bce(t[ib], p[ib]);
            }
            l5 += term;
            if let Some(g) = grad.as_deref_mut() {
                let c = q * POLYGON_WEIGHT * z;
                g[ia] = -c * 2.0 * gamma * da;
                g[ib] = if gamma != 0.0 { c * gamma * bce_grad(t[ib], p[ib]) } else { 0.0 };
                g[ig] = c * bce_grad(gamma, p[ig]);
            }
        }
        l5 *= POLYGON_WEIGHT * z;

        parts.l1 = q * l1;
        parts.l2 = q * l2;
        parts.l5 = q * l5;
        if let Some(g) = grad {
            g[SlotLayout::TX] = q * z * bce_grad(t[SlotLayout::TX], p[SlotLayout::TX]);
            g[SlotLayout::TY] = q * z * bce_grad(t[SlotLayout::TY], p[SlotLayout::TY]);
            g[SlotLayout::TW] = -q * BOX_SIZE_WEIGHT * z * 2.0 * dw;
            g[SlotLayout::TH] = -q * BOX_SIZE_WEIGHT * z * 2.0 * dh;
        }
    }
    parts.total = parts.l1 + parts.l2 + parts.l3 + parts.l4 + parts.l5;
    Ok(parts)
}

fn context<'a>(
    pred: &RawPrediction,
    target: &TargetTensor,
    anchors: &'a AnchorSet,
    ignore: &IgnoreMask,
) -> Result<SlotContext<'a>> {
    pred.same_shape(target)?;
    if target.layout().n_anchors != anchors.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} anchors", target.layout().n_anchors),
            actual: format!("{} anchors", anchors.len()),
        });
    }
    if ignore.len() != target.n_slots() {
        return Err(Error::ShapeMismatch {
            expected: format!("ignore mask over {} slots", target.n_slots()),
            actual: format!("{} entries", ignore.len()),
        });
    }
    Ok(SlotContext {
        layout: target.layout(),
        anchors,
        input_w: target.grid().input_w() as f64,
        input_h: target.grid().input_h() as f64,
    })
}

/// Loss contribution of a single slot.
pub fn slot_loss(
    pred: &RawPrediction,
    target: &TargetTensor,
    anchors: &AnchorSet,
    ignore: &IgnoreMask,
    slot: usize,
) -> Result<LossBreakdown> {
    let ctx = context(pred, target, anchors, ignore)?;
    let (_, _, a) = target.slot_position(slot);
    slot_eval(&ctx, a, pred.slot(slot), target.slot(slot), ignore.factor(slot), None)
}

/// Total loss and its five parts, summed in slot order.
pub fn loss_total(
    pred: &RawPrediction,
    target: &TargetTensor,
    anchors: &AnchorSet,
    ignore: &IgnoreMask,
) -> Result<LossBreakdown> {
    let ctx = context(pred, target, anchors, ignore)?;
    let mut sum = LossBreakdown::default();
    for slot in 0..target.n_slots() {
        let (_, _, a) = target.slot_position(slot);
        let parts = slot_eval(&ctx, a, pred.slot(slot), target.slot(slot), ignore.factor(slot), None)?;
        sum.add(&parts);
    }
    Ok(sum)
}

/// Analytic derivative of the total loss with respect to every raw prediction.
pub fn loss_gradient(
    pred: &RawPrediction,
    target: &TargetTensor,
    anchors: &AnchorSet,
    ignore: &IgnoreMask,
) -> Result<GridTensor> {
    let ctx = context(pred, target, anchors, ignore)?;
    let mut grad = GridTensor::zeros(target.grid(), target.layout());
    for slot in 0..target.n_slots() {
        let (_, _, a) = target.slot_position(slot);
        slot_eval(
            &ctx,
            a,
            pred.slot(slot),
            target.slot(slot),
            ignore.factor(slot),
            Some(grad.slot_mut(slot)),
        )?;
    }
    Ok(grad)
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheck {
    pub entries: usize,
    /// Largest relative error over entries with `|analytic| >= 1e-8`.
    pub max_rel_err: f64,
    /// Largest absolute error over the remaining near-zero entries.
    pub max_abs_err_small: f64,
}

impl GradCheck {
    pub const REL_TOL: f64 = 1e-4;
    pub const ABS_TOL: f64 = 1e-7;
    pub const SMALL: f64 = 1e-8;

    pub fn passed(&self) -> bool {
        self.max_rel_err < Self::REL_TOL && self.max_abs_err_small <= Self::ABS_TOL
    }

    pub fn merge(&mut self, other: &GradCheck) {
        self.entries += other.entries;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.max_abs_err_small = self.max_abs_err_small.max(other.max_abs_err_small);
    }
}

/// Compares [`loss_gradient`] against central differences of [`loss_total`].
pub fn check_gradient(
    pred: &RawPrediction,
    target: &TargetTensor,
    anchors: &AnchorSet,
    ignore: &IgnoreMask,
    step: f64,
) -> Result<GradCheck> {
    let analytic = loss_gradient(pred, target, anchors, ignore)?;
    let mut probe = pred.clone();
    let mut out = GradCheck::default();
    for i in 0..pred.data().len() {
        let x = pred.data()[i];
        probe.data_mut()[i] = x + step;
        let up = loss_total(&probe, target, anchors, ignore)?.total;
        probe.data_mut()[i] = x - step;
        let down = loss_total(&probe, target, anchors, ignore)?.total;
        probe.data_mut()[i] = x;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.data()[i];
        let abs = (a - numeric).abs();
        if a.abs() < GradCheck::SMALL {
            out.max_abs_err_small = out.max_abs_err_small.max(abs);
        } else {
            out.max_rel_err = out.max_rel_err.max(abs / a.abs().max(numeric.abs()));
        }
        out.entries += 1;
    }
    Ok(out)
}

/// A small random problem for gradient checking: 64x64 input at stride 32
/// (2x2 cells), 2 anchors, 2 classes, 3 polar sectors, 1 to 3 labels.
#[derive(Debug, Clone)]
pub struct CheckInstance {
    pub pred: RawPrediction,
    pub target: TargetTensor,
    pub anchors: AnchorSet,
    pub ignore: IgnoreMask,
    pub labels: Vec<Label>,
}

/// Builds instance `index` of the stream selected by `seed`.
///
/// Predictions are uniform in [-3, 3]; every empty slot is ignored with
/// probability 0.3 so both confidence branches are exercised.
pub fn random_instance(seed: u64, index: u64) -> Result<CheckInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let grid = GridSpec::new(64, 64, 32)?;
    let anchors = AnchorSet::new(
        (0..2)
            .map(|_| (rng.random_range(8.0..40.0), rng.random_range(8.0..40.0)))
            .collect(),
    )?;
    let n_labels = rng.random_range(1..=3);
    let mut labels = Vec::with_capacity(n_labels);
    for _ in 0..n_labels {
        let c = Point::new(rng.random_range(4.0..60.0), rng.random_range(4.0..60.0));
        let (w, h) = (rng.random_range(6.0..40.0), rng.random_range(6.0..40.0));
        let mut b = BBox::from_center(c, w, h)?;
        b.class_id = rng.random_range(0..2);
        let n = rng.random_range(3..=5);
        let phase = rng.random_range(0.0..TAU);
        let pts = (0..n)
            .map(|k| {
                let t = phase + TAU * (k as f64 + rng.random_range(0.0..0.5)) / n as f64;
                let r = rng.random_range(0.3..0.5) * w.min(h);
                Point::new(c.x + r * t.cos(), c.y + r * t.sin())
            })
            .collect();
        labels.push(Label::new(b, Some(Polygon::new(pts)?)));
    }
    let (target, _) = build_targets(&labels, &grid, &anchors, 2, PolarGridSpec::new(3)?)?;
    let mut pred = GridTensor::zeros(grid, target.layout());
    for v in pred.data_mut() {
        *v = rng.random_range(-3.0..3.0);
    }
    let ignore = IgnoreMask::from_flags(
        (0..target.n_slots())
            .map(|s| target.slot(s)[SlotLayout::Q] == 0.0 && rng.random_bool(0.3))
            .collect(),
    );
    Ok(CheckInstance {
        pred,
        target,
        anchors,
        ignore,
        labels,
    })
}

/// Runs [`check_gradient`] with step `1e-5` on `count` instances of the
/// `seed` stream and merges the results.
pub fn gradient_suite(count: usize, seed: u64) -> Result<GradCheck> {
    let mut out = GradCheck::default();
    for i in 0..count {
        let inst = random_instance(seed, i as u64)?;
        let c = check_gradient(&inst.pred, &inst.target, &inst.anchors, &inst.ignore, 1e-5)?;
        out.merge(&c);
    }
    Ok(out)
}
