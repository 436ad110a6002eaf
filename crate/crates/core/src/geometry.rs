//! Axis-aligned boxes, points, polygons and binary masks.
//!
//! Coordinates are image pixels with the origin at the top-left corner, x to
//! the right and y downwards. Pixel `(i, j)` covers `[i, i+1) x [j, j+1)` and
//! its center is `(i + 0.5, j + 0.5)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Corner-form box with a class id and an optional confidence score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class_id: u32,
    pub score: Option<f64>,
}

impl BBox {
    /// Builds a class-0 box without a score, checking corner order.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::with_class(x1, y1, x2, y2, 0)
    }

    pub fn with_class(x1: f64, y1: f64, x2: f64, y2: f64, class_id: u32) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite corner in ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x2 < x1 || y2 < y1 {
            return Err(Error::InvalidBox(format!(
                "corners out of order: ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self {
            x1,
            y1,
            x2,
            y2,
            class_id,
            score: None,
        })
    }

    /// Box of the given size centered on `center`.
    pub fn from_center(center: Point, w: f64, h: f64) -> Result<Self> {
        Self::new(
            center.x - 0.5 * w,
            center.y - 0.5 * h,
            center.x + 0.5 * w,
            center.y + 0.5 * h,
        )
    }

    pub fn with_score(mut self, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidBox(format!("score {score} outside [0, 1]")));
        }
        self.score = Some(score);
        Ok(self)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        box_center(self)
    }

    pub fn diagonal(&self) -> f64 {
        box_diagonal(self)
    }

    /// The four corners, counter-clockwise in the `atan2(dy, dx)` sense.
    pub fn to_polygon(&self) -> Result<Polygon> {
        Polygon::new(vec![
            Point::new(self.x1, self.y1),
            Point::new(self.x2, self.y1),
            Point::new(self.x2, self.y2),
            Point::new(self.x1, self.y2),
        ])
    }
}

pub fn box_center(b: &BBox) -> Point {
    Point::new(0.5 * (b.x1 + b.x2), 0.5 * (b.y1 + b.y2))
}

pub fn box_diagonal(b: &BBox) -> f64 {
    b.width().hypot(b.height())
}

/// Intersection over union. Two zero-area boxes have no defined IoU.
pub fn iou_box(a: &BBox, b: &BBox) -> Result<f64> {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Err(Error::UndefinedIou);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Closed polygon given by its vertex ring.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    /// Needs at least three vertices with no two cyclically consecutive ones equal.
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "{} vertices, need at least 3",
                vertices.len()
            )));
        }
        if let Some(p) = vertices.iter().find(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidPolygon(format!("non-finite vertex {p:?}")));
        }
        let n = vertices.len();
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(Error::InvalidPolygon(format!(
                    "consecutive duplicate vertex at index {i}"
                )));
            }
        }
        Ok(Self { vertices })
    }

    /// Drops consecutive duplicates (cyclically) before validating.
    pub fn from_points_dedup(points: Vec<Point>) -> Result<Self> {
        let mut out: Vec<Point> = Vec::with_capacity(points.len());
        for p in points {
            if out.last() != Some(&p) {
                out.push(p);
            }
        }
        while out.len() > 1 && out.first() == out.last() {
            out.pop();
        }
        Self::new(out)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn into_vertices(self) -> Vec<Point> {
        self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| self.vertices[i].distance(&self.vertices[(i + 1) % n]))
            .sum()
    }

    /// Tight axis-aligned bounds of the vertices.
    pub fn bounds(&self) -> BBox {
        let (mut x1, mut y1) = (f64::INFINITY, f64::INFINITY);
        let (mut x2, mut y2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            x1 = x1.min(p.x);
            y1 = y1.min(p.y);
            x2 = x2.max(p.x);
            y2 = y2.max(p.y);
        }
        BBox {
            x1,
            y1,
            x2,
            y2,
            class_id: 0,
            score: None,
        }
    }

    /// Even-odd containment with the same half-open tie rule as [`rasterize_polygon`].
    pub fn contains(&self, p: Point) -> bool {
        let v = &self.vertices;
        let n = v.len();
        let mut inside = false;
        for i in 0..n {
            let a = v[i];
            let b = v[(i + 1) % n];
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn signed_area(v: &[Point]) -> f64 {
    let n = v.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let a = v[i];
            let b = v[(i + 1) % n];
            a.x * b.y - b.x * a.y
        })
        .sum();
    0.5 * twice
}

/// Absolute shoelace area.
pub fn polygon_area(p: &Polygon) -> f64 {
    p.area()
}

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            width,
            height,
            bits: vec![false; width * height],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    /// Pixels set here but not in `other`.
    pub fn difference_count(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && !**b)
            .count()
    }

    /// Pixel IoU; two empty masks give 0.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.width, self.height),
                actual: format!("{}x{}", other.width, other.height),
            });
        }
        let inter = self.intersection_count(other);
        let union = self.count() + other.count() - inter;
        Ok(if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        })
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }
}

/// Sets pixel `(i, j)` iff its center lies inside the polygon (even-odd rule).
///
/// Edges are half-open: a center exactly on a left or top edge is inside, one
/// on a right or bottom edge is outside.
pub fn rasterize_polygon(p: &Polygon, width: usize, height: usize) -> Result<Mask> {
    let mut mask = Mask::new(width, height)?;
    let v = p.vertices();
    let n = v.len();
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    for row in 0..height {
        let py = row as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let a = v[i];
            let b = v[(i + 1) % n];
            if (a.y > py) != (b.y > py) {
                xs.push(a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // centers i + 0.5 in [pair[0], pair[1])
            let lo = (pair[0] - 0.5).ceil().max(0.0);
            let hi = (pair[1] - 0.5).ceil().min(width as f64);
            if hi <= lo {
                continue;
            }
            for col in lo as usize..hi as usize {
                mask.set(col, row, true);
            }
        }
    }
    Ok(mask)
}
