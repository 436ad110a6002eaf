//! Detection-geometry toolkit around a single high-resolution YOLO-style output.
//!
//! The crate covers the closed-form parts of a polygon-capable detector:
//!
//! * [`geometry`]: boxes, polygons, rasterization.
//! * [`polar`]: the per-sector `(alpha, beta, gamma)` polygon codec.
//! * [`grid`]: target tensors, label-rewrite auditing, prediction decoding.
//! * [`anchors`]: IoU k-means anchors and per-scale diagnostics.
//! * [`hypercolumn`]: direct and stairstep multi-level aggregation.
//! * [`loss`]: the five-part loss and its analytic gradient.
//! * [`mask`]: polygon labels from pixel blobs, angle-interval splitting.
//! * [`eval`]: NMS and COCO-style AP.
//! * [`synth`]: seeded synthetic scenes.
//! * [`annotation`] and [`pnm`]: the JSON-lines schema and PGM/PPM images.

// `!(x > 0.0)` style guards deliberately reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod anchors;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod hypercolumn;
pub mod loss;
pub mod mask;
pub mod pnm;
pub mod polar;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{BBox, Mask, Point, Polygon};

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`], clamped to `[-limit, limit]`.
pub fn logit(p: f64, limit: f64) -> f64 {
    if p <= 0.0 {
        return -limit;
    }
    if p >= 1.0 {
        return limit;
    }
    (p / (1.0 - p)).ln().clamp(-limit, limit)
}
