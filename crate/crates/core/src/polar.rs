//! Polar bounding-polygon codec.
//!
//! A polygon is described relative to its bounding box: the box center is the
//! origin and the full angle is split into `n_vertices` equal sectors. Each
//! sector holds at most one vertex as `(alpha, beta, gamma)`:
//!
//! * `alpha`: distance from the origin divided by the box diagonal,
//! * `beta`: angular position inside the sector, 0 at its lower bound and 1 at
//!   its upper bound,
//! * `gamma`: presence confidence (1 = vertex, 0 = empty sector).
//!
//! Angles are `atan2(dy, dx)` on raw image coordinates, so 90 degrees points
//! along +y (downwards on screen). Sector `k` covers `[k, k+1) * 360 / n`.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::{box_center, box_diagonal, BBox, Point, Polygon};

/// Positions closer than this (in sector units) to a sector boundary snap to it.
const BOUNDARY_SNAP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolarGridSpec {
    n_vertices: usize,
}

impl PolarGridSpec {
    pub fn new(n_vertices: usize) -> Result<Self> {
        if n_vertices < 3 {
            return Err(Error::InvalidArgument(format!(
                "polar grid needs at least 3 sectors, got {n_vertices}"
            )));
        }
        Ok(Self { n_vertices })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    /// Angular width of one sector in degrees.
    pub fn sector_span_deg(&self) -> f64 {
        360.0 / self.n_vertices as f64
    }

    /// `[low, high)` of sector `k` in degrees.
    pub fn sector_bounds_deg(&self, k: usize) -> (f64, f64) {
        let span = self.sector_span_deg();
        (k as f64 * span, (k + 1) as f64 * span)
    }

    /// Sector and in-sector position of a direction given in turns `[0, 1)`.
    fn locate(&self, turns: f64) -> (usize, f64) {
        let n = self.n_vertices;
        let u = turns * n as f64;
        let nearest = u.round();
        let (k, beta) = if (u - nearest).abs() < BOUNDARY_SNAP {
            (nearest, 0.0)
        } else {
            let k = u.floor();
            (k, (u - k).clamp(0.0, 1.0))
        };
        ((k as usize) % n, beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolarVertex {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarPolygon {
    pub spec: PolarGridSpec,
    pub cells: Vec<PolarVertex>,
}

impl PolarPolygon {
    /// All sectors empty.
    pub fn empty(spec: PolarGridSpec) -> Self {
        Self {
            spec,
            cells: vec![PolarVertex::default(); spec.n_vertices],
        }
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|c| c.gamma > 0.0).count()
    }
}

/// Result of [`encode_polygon`] with dataset-QA counters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarEncoding {
    pub polygon: PolarPolygon,
    /// Vertices farther than one box diagonal, stored with alpha = 1.
    pub clamped: usize,
    /// Vertices dropped because a farther vertex shares their sector, or
    /// because they coincide with the origin.
    pub discarded: usize,
}

/// Direction of `(dx, dy)` in turns, `[0, 1)`.
///
/// The vector is normalized by its largest component first, so exactly scaled
/// vectors give bit-identical results.
fn direction_turns(dx: f64, dy: f64) -> f64 {
    let m = dx.abs().max(dy.abs());
    let t = (dy / m).atan2(dx / m) / TAU;
    let t = if t < 0.0 { t + 1.0 } else { t };
    if t >= 1.0 {
        0.0
    } else {
        t
    }
}

/// `|(a, b)| / |(c, d)|`, evaluated on max-normalized components.
fn length_ratio(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let m = a.abs().max(b.abs());
    let big = c.abs().max(d.abs());
    let (a, b, c, d) = (a / m, b / m, c / big, d / big);
    (m / big) * ((a * a + b * b) / (c * c + d * d)).sqrt()
}

/// Index of the sector containing `v` as seen from `origin`.
pub fn sector_index(origin: Point, v: Point, spec: PolarGridSpec) -> Result<usize> {
    let (dx, dy) = (v.x - origin.x, v.y - origin.y);
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::ZeroRadius);
    }
    Ok(spec.locate(direction_turns(dx, dy)).0)
}

/// Encodes polygon vertices into one polar slot per sector around the box center.
///
/// When several vertices fall into one sector the farthest is kept (first wins
/// on exact ties). This is where strongly non-convex shapes lose detail.
pub fn encode_polygon(p: &Polygon, b: &BBox, spec: PolarGridSpec) -> Result<PolarEncoding> {
    let diag = box_diagonal(b);
    if !(diag > 0.0) {
        return Err(Error::ZeroDiagonal);
    }
    let origin = box_center(b);
    let (bw, bh) = (b.width(), b.height());
    let mut out = PolarPolygon::empty(spec);
    let mut filled = 0usize;
    let mut clamped = 0usize;
    let mut discarded = 0usize;
    let mut raw_alpha = vec![0.0f64; spec.n_vertices];

    for v in p.vertices() {
        let (dx, dy) = (v.x - origin.x, v.y - origin.y);
        if dx == 0.0 && dy == 0.0 {
            discarded += 1;
            continue;
        }
        let (k, beta) = spec.locate(direction_turns(dx, dy));
        let alpha = length_ratio(dx, dy, bw, bh);
        let cell = &mut out.cells[k];
        if cell.gamma == 0.0 {
            filled += 1;
        } else {
            discarded += 1;
            if alpha <= raw_alpha[k] {
                continue;
            }
        }
        raw_alpha[k] = alpha;
        *cell = PolarVertex {
            alpha: alpha.min(1.0),
            beta,
            gamma: 1.0,
        };
    }
    for (cell, &a) in out.cells.iter().zip(&raw_alpha) {
        if cell.gamma > 0.0 && a > 1.0 {
            clamped += 1;
        }
    }
    debug_assert_eq!(filled, out.occupied());
    Ok(PolarEncoding {
        polygon: out,
        clamped,
        discarded,
    })
}

/// Decodes sectors with `gamma >= threshold` into cartesian vertices, in sector order.
///
/// The result is not clipped to the box.
pub fn decode_polygon(pp: &PolarPolygon, b: &BBox, threshold: f64) -> Result<Polygon> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let spec = pp.spec;
    if pp.cells.len() != spec.n_vertices {
        return Err(Error::ShapeMismatch {
            expected: format!("{} sectors", spec.n_vertices),
            actual: format!("{} sectors", pp.cells.len()),
        });
    }
    let origin = box_center(b);
    let diag = box_diagonal(b);
    let n = spec.n_vertices as f64;
    let points: Vec<Point> = pp
        .cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.gamma >= threshold)
        .map(|(k, c)| {
            let theta = (k as f64 + c.beta) / n * TAU;
            let r = c.alpha * diag;
            Point::new(origin.x + r * theta.cos(), origin.y + r * theta.sin())
        })
        .collect();
    let passing = points.len();
    if passing < 3 {
        return Err(Error::TooFewVertices(passing));
    }
    Polygon::from_points_dedup(points).map_err(|_| Error::TooFewVertices(passing))
}
