//! Polygon labels from instance pixel blobs, plus angle-interval splitting.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::{BBox, Mask, Point, Polygon};

pub const DEFAULT_SECTORS: usize = 72;
pub const DEFAULT_EPS: f64 = 0.5;

/// Pixels of one object instance inside a `width x height` image.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelBlob {
    mask: Mask,
    count: usize,
}

impl PixelBlob {
    pub fn new(width: usize, height: usize, pixels: &[(usize, usize)]) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::DegenerateBlob(0));
        }
        let mut mask = Mask::new(width, height)?;
        for &(x, y) in pixels {
            if x >= width || y >= height {
                return Err(Error::InvalidArgument(format!(
                    "pixel ({x}, {y}) outside {width}x{height} image"
                )));
            }
            mask.set(x, y, true);
        }
        let count = mask.count();
        Ok(Self { mask, count })
    }

    pub fn from_mask(mask: Mask) -> Result<Self> {
        let count = mask.count();
        if count == 0 {
            return Err(Error::DegenerateBlob(0));
        }
        Ok(Self { mask, count })
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width()
            && (y as usize) < self.height()
            && self.mask.get(x as usize, y as usize)
    }

    /// Pixel-extent bounds: a blob covering columns `a..=b` spans `[a, b + 1]`.
    pub fn bounds(&self) -> BBox {
        let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
        for (x, y) in self.mask.iter_set() {
            x1 = x1.min(x);
            y1 = y1.min(y);
            x2 = x2.max(x);
            y2 = y2.max(y);
        }
        BBox {
            x1: x1 as f64,
            y1: y1 as f64,
            x2: (x2 + 1) as f64,
            y2: (y2 + 1) as f64,
            class_id: 0,
            score: None,
        }
    }

    /// Blob pixels with at least one 4-neighbour outside the blob.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        self.mask
            .iter_set()
            .filter(|&(x, y)| {
                let (x, y) = (x as i64, y as i64);
                [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
                    .iter()
                    .any(|&(u, v)| !self.contains(u, v))
            })
            .collect()
    }
}

/// Splits a label image into one blob per distinct non-zero gray level,
/// ordered by level.
pub fn blobs_from_levels(width: usize, height: usize, levels: &[u8]) -> Result<Vec<(u8, PixelBlob)>> {
    if levels.len() != width * height {
        return Err(Error::ShapeMismatch {
            expected: format!("{} pixels", width * height),
            actual: format!("{} pixels", levels.len()),
        });
    }
    let mut masks: Vec<Option<Mask>> = vec![None; 256];
    for (i, &g) in levels.iter().enumerate() {
        if g == 0 {
            continue;
        }
        let m = match &mut masks[g as usize] {
            Some(m) => m,
            slot => slot.insert(Mask::new(width, height)?),
        };
        m.set(i % width, i / width, true);
    }
    masks
        .into_iter()
        .enumerate()
        .filter_map(|(g, m)| m.map(|m| (g as u8, m)))
        .map(|(g, m)| Ok((g, PixelBlob::from_mask(m)?)))
        .collect()
}

/// Farthest boundary pixel per angular bin around the box center, then
/// collinear erasure with tolerance `eps`.
///
/// Each vertex is a boundary pixel center moved half a pixel away from the
/// origin. The returned box is the blob's pixel extent.
pub fn extract_polygon(blob: &PixelBlob, n_sectors: usize, eps: f64) -> Result<(Polygon, BBox)> {
    if n_sectors < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 sectors, got {n_sectors}")));
    }
    let bbox = blob.bounds();
    let c = bbox.center();
    let mut best: Vec<Option<(f64, Point)>> = vec![None; n_sectors];
    for (x, y) in blob.boundary() {
        let (dx, dy) = (x as f64 + 0.5 - c.x, y as f64 + 0.5 - c.y);
        let d2 = dx * dx + dy * dy;
        if d2 == 0.0 {
            continue;
        }
        // half a pixel outward along the ray, onto the blob's outer edge
        let push = 1.0 + 0.5 / d2.sqrt();
        let p = Point::new(c.x + dx * push, c.y + dy * push);
        let turns = dy.atan2(dx).rem_euclid(TAU) / TAU;
        let bin = ((turns * n_sectors as f64) as usize).min(n_sectors - 1);
        if best[bin].is_none_or(|(d, _)| d2 > d) {
            best[bin] = Some((d2, p));
        }
    }
    let points: Vec<Point> = best.into_iter().flatten().map(|(_, p)| p).collect();
    if points.len() < 3 {
        return Err(Error::DegenerateBlob(points.len()));
    }
    let raw = Polygon::from_points_dedup(points).map_err(|_| Error::DegenerateBlob(2))?;
    let simplified = simplify_collinear(&raw, eps).map_err(|_| Error::DegenerateBlob(2))?;
    Ok((simplified, bbox))
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (ux, uy) = (b.x - a.x, b.y - a.y);
    let len2 = ux * ux + uy * uy;
    if len2 == 0.0 {
        return p.distance(&a);
    }
    let t = (((p.x - a.x) * ux + (p.y - a.y) * uy) / len2).clamp(0.0, 1.0);
    p.distance(&Point::new(a.x + t * ux, a.y + t * uy))
}

/// Repeatedly removes the vertex closest to the segment joining its
/// neighbours while that distance is at most `eps`.
pub fn simplify_collinear(p: &Polygon, eps: f64) -> Result<Polygon> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be >= 0, got {eps}")));
    }
    let mut v = p.vertices().to_vec();
    loop {
        let n = v.len();
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..n {
            let d = segment_distance(v[i], v[(i + n - 1) % n], v[(i + 1) % n]);
            if d <= eps && pick.is_none_or(|(_, m)| d < m) {
                pick = Some((i, d));
            }
        }
        match pick {
            None => break,
            Some(_) if n == 3 => {
                return Err(Error::InvalidPolygon(
                    "collinear erasure leaves fewer than 3 vertices".into(),
                ))
            }
            Some((i, _)) => {
                v.remove(i);
            }
        }
    }
    Polygon::new(v)
}

/// Angular range `[low, high]` in degrees, read counter to the image y axis
/// the same way as the polar codec (`atan2(dy, dx)`). Wraps through 0 when
/// `high < low`; `(0, 360)` is the full circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleInterval {
    pub low: f64,
    pub high: f64,
    pub class_id: u32,
}

impl AngleInterval {
    pub fn new(low: f64, high: f64, class_id: u32) -> Result<Self> {
        if !(0.0..360.0).contains(&low) || !(high > 0.0 && high <= 360.0) || low == high {
            return Err(Error::InvalidArgument(format!(
                "bad angle interval [{low}, {high}]"
            )));
        }
        Ok(Self { low, high, class_id })
    }

    pub fn width_deg(&self) -> f64 {
        if self.high > self.low {
            self.high - self.low
        } else {
            self.high + 360.0 - self.low
        }
    }

    pub fn is_full(&self) -> bool {
        self.width_deg() >= 360.0
    }

    /// Whether direction `deg` (any real) falls strictly inside the interval.
    pub fn contains_deg(&self, deg: f64) -> bool {
        let off = (deg - self.low).rem_euclid(360.0);
        off > 0.0 && off < self.width_deg()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub emphasized: Option<Polygon>,
    pub dimmed: Option<Polygon>,
    /// False when the polygon is not star-shaped about the box center; the
    /// split is then best-effort and need not conserve area.
    pub star_shaped: bool,
}

fn angle_deg(c: Point, p: Point) -> f64 {
    (p.y - c.y).atan2(p.x - c.x).to_degrees().rem_euclid(360.0)
}

fn is_star_shaped(c: Point, v: &[Point]) -> bool {
    let n = v.len();
    let mut sign = 0.0;
    let mut sweep = 0.0;
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        let (ax, ay, bx, by) = (a.x - c.x, a.y - c.y, b.x - c.x, b.y - c.y);
        if (ax == 0.0 && ay == 0.0) || (bx == 0.0 && by == 0.0) {
            return false;
        }
        let step = (ax * by - ay * bx).atan2(ax * bx + ay * by);
        if step == 0.0 {
            return false;
        }
        if sign == 0.0 {
            sign = step.signum();
        } else if step.signum() != sign {
            return false;
        }
        sweep += step;
    }
    (sweep.abs() - TAU).abs() < 1e-9
}

/// Farthest point where the ray from `c` at `deg` meets the polygon boundary.
fn ray_hit(c: Point, deg: f64, v: &[Point]) -> Option<Point> {
    let (dx, dy) = (deg.to_radians().cos(), deg.to_radians().sin());
    let n = v.len();
    let mut far: Option<f64> = None;
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        let (ex, ey) = (b.x - a.x, b.y - a.y);
        let den = dx * ey - dy * ex;
        if den == 0.0 {
            continue;
        }
        let (wx, wy) = (a.x - c.x, a.y - c.y);
        let t = (wx * ey - wy * ex) / den;
        let u = (wx * dy - wy * dx) / den;
        if t > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u) && far.is_none_or(|f| t > f) {
            far = Some(t);
        }
    }
    far.map(|t| Point::new(c.x + t * dx, c.y + t * dy))
}

fn fan_piece(c: Point, start: Option<Point>, mid: Vec<Point>, end: Option<Point>) -> Option<Polygon> {
    let mut pts = vec![c];
    pts.extend(start);
    pts.extend(mid);
    pts.extend(end);
    Polygon::from_points_dedup(pts).ok().filter(|p| p.area() > 0.0)
}

/// Cuts a polygon along the two bounding rays of `interval`, cast from the
/// box center. The part inside the interval is dimmed, the rest emphasized.
pub fn split_by_angle_interval(p: &Polygon, b: &BBox, interval: &AngleInterval) -> SplitResult {
    let c = b.center();
    let v = p.vertices();
    let star_shaped = is_star_shaped(c, v);
    if interval.is_full() {
        return SplitResult {
            emphasized: None,
            dimmed: Some(p.clone()),
            star_shaped,
        };
    }
    let mut by_angle: Vec<(f64, Point)> = v
        .iter()
        .filter(|q| **q != c)
        .map(|&q| (angle_deg(c, q), q))
        .collect();
    by_angle.sort_by(|a, b| a.0.total_cmp(&b.0));

    let high = interval.high.rem_euclid(360.0);
    let low_hit = ray_hit(c, interval.low, v);
    let high_hit = ray_hit(c, high, v);
    let after = |from: f64, (a, _): &(f64, Point)| (a - from).rem_euclid(360.0);

    let mut inside: Vec<(f64, Point)> = by_angle
        .iter()
        .filter(|q| interval.contains_deg(q.0))
        .copied()
        .collect();
    inside.sort_by(|a, b| after(interval.low, a).total_cmp(&after(interval.low, b)));
    let mut outside: Vec<(f64, Point)> = by_angle
        .iter()
        .filter(|q| !interval.contains_deg(q.0) && (q.0 - interval.low).rem_euclid(360.0) != 0.0 && (q.0 - high).rem_euclid(360.0) != 0.0)
        .copied()
        .collect();
    outside.sort_by(|a, b| after(high, a).total_cmp(&after(high, b)));

    let dimmed = fan_piece(c, low_hit, inside.into_iter().map(|q| q.1).collect(), high_hit);
    let emphasized = fan_piece(c, high_hit, outside.into_iter().map(|q| q.1).collect(), low_hit);
    SplitResult {
        emphasized,
        dimmed,
        star_shaped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rasterize_polygon;

    fn disk(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> PixelBlob {
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    px.push((x, y));
                }
            }
        }
        PixelBlob::new(w, h, &px).unwrap()
    }

    fn poly(pts: &[(f64, f64)]) -> Polygon {
        Polygon::new(pts.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
    }

    fn blob_iou(p: &Polygon, blob: &PixelBlob) -> f64 {
        rasterize_polygon(p, blob.width(), blob.height())
            .unwrap()
            .iou(blob.mask())
            .unwrap()
    }

    #[test]
    fn square_blob_gives_four_corners() {
        let mut px = Vec::new();
        for y in 10..30 {
            for x in 10..30 {
                px.push((x, y));
            }
        }
        let blob = PixelBlob::new(40, 40, &px).unwrap();
        for n in [8, 24, 72] {
            let (p, b) = extract_polygon(&blob, n, DEFAULT_EPS).unwrap();
            assert_eq!((b.x1, b.y1, b.x2, b.y2), (10.0, 10.0, 30.0, 30.0));
            assert_eq!(p.len(), 4, "n={n}");
            for q in p.vertices() {
                let corner = [(10.5, 10.5), (10.5, 29.5), (29.5, 10.5), (29.5, 29.5)]
                    .iter()
                    .any(|&(x, y)| (q.x - x).abs() <= 0.5 && (q.y - y).abs() <= 0.5);
                assert!(corner, "n={n}: {q:?}");
            }
        }
    }

    #[test]
    fn disk_blob_fidelity() {
        let blob = disk(64, 64, 32.0, 32.0, 20.0);
        let (p, _) = extract_polygon(&blob, 24, DEFAULT_EPS).unwrap();
        assert!(p.len() <= 24);
        let iou = blob_iou(&p, &blob);
        // inscribed 24-gon keeps (n / 2 pi) sin(2 pi / n) of the disk area
        let ratio = 24.0 / TAU * (TAU / 24.0).sin();
        assert!(ratio > 0.988 && ratio < 0.989);
        assert!(iou >= 0.97, "iou {iou}");
    }

    #[test]
    fn vertices_are_boundary_pixels() {
        let blob = disk(80, 70, 37.3, 33.1, 26.0);
        let boundary = blob.boundary();
        let (p, _) = extract_polygon(&blob, 36, DEFAULT_EPS).unwrap();
        let c = blob.bounds().center();
        for q in p.vertices() {
            // undo the half-pixel outward shift
            let d = q.distance(&c);
            let back = (d - 0.5) / d;
            let (x, y) = (c.x + (q.x - c.x) * back - 0.5, c.y + (q.y - c.y) * back - 0.5);
            assert!((x - x.round()).abs() < 1e-9 && (y - y.round()).abs() < 1e-9, "{q:?}");
            assert!(boundary.contains(&(x.round() as usize, y.round() as usize)), "{q:?}");
        }
    }

    #[test]
    fn annulus_keeps_outer_boundary() {
        let outer = disk(64, 64, 32.0, 32.0, 24.0);
        let mut px = Vec::new();
        for (x, y) in outer.mask().iter_set() {
            let (dx, dy) = (x as f64 + 0.5 - 32.0, y as f64 + 0.5 - 32.0);
            if dx * dx + dy * dy > 12.0 * 12.0 {
                px.push((x, y));
            }
        }
        let blob = PixelBlob::new(64, 64, &px).unwrap();
        let (p, _) = extract_polygon(&blob, 72, DEFAULT_EPS).unwrap();
        for q in p.vertices() {
            assert!(q.distance(&Point::new(32.0, 32.0)) > 22.0, "{q:?}");
        }
    }

    #[test]
    fn tiny_blob_is_degenerate() {
        let blob = PixelBlob::new(5, 5, &[(2, 2)]).unwrap();
        assert!(matches!(extract_polygon(&blob, 8, 0.5), Err(Error::DegenerateBlob(_))));
        let line = PixelBlob::new(9, 9, &[(1, 4), (2, 4), (3, 4), (4, 4), (5, 4), (6, 4)]).unwrap();
        assert!(matches!(extract_polygon(&line, 8, 0.5), Err(Error::DegenerateBlob(_))));
        assert!(PixelBlob::new(5, 5, &[]).is_err());
        assert!(PixelBlob::new(5, 5, &[(5, 0)]).is_err());
    }

    #[test]
    fn simplify_examples() {
        let sq = poly(&[(0., 0.), (1., 0.), (2., 0.), (2., 1.), (2., 2.), (1., 2.), (0., 2.), (0., 1.)]);
        let s = simplify_collinear(&sq, 1e-6).unwrap();
        assert_eq!(s.vertices(), poly(&[(0., 0.), (2., 0.), (2., 2.), (0., 2.)]).vertices());
        let tri = poly(&[(0., 0.), (4., 0.), (1., 3.)]);
        assert_eq!(simplify_collinear(&tri, 0.5).unwrap(), tri);
        assert!(simplify_collinear(&poly(&[(0., 0.), (1., 0.), (2., 0.01), (1., 0.02)]), 0.5).is_err());
    }

    #[test]
    fn simplify_regular_polygon() {
        let ngon = Polygon::new(
            (0..64)
                .map(|i| {
                    let t = TAU * i as f64 / 64.0;
                    Point::new(100.0 * t.cos(), 100.0 * t.sin())
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(simplify_collinear(&ngon, 0.0).unwrap(), ngon);
        for eps in [0.5, 2.0, 5.0] {
            let s = simplify_collinear(&ngon, eps).unwrap();
            assert!(s.len() < 64);
            let loss = ngon.area() - s.area();
            assert!(loss >= 0.0 && loss <= eps * ngon.perimeter(), "eps {eps}: loss {loss}");
        }
    }

    #[test]
    fn split_full_circle_dims_everything() {
        let sq = poly(&[(0., 0.), (10., 0.), (10., 10.), (0., 10.)]);
        let b = BBox::new(0., 0., 10., 10.).unwrap();
        let s = split_by_angle_interval(&sq, &b, &AngleInterval::new(0.0, 360.0, 0).unwrap());
        assert_eq!(s.dimmed, Some(sq));
        assert!(s.emphasized.is_none());
        assert!(s.star_shaped);
    }

    #[test]
    fn split_square_conserves_area() {
        let sq = poly(&[(0., 0.), (10., 0.), (10., 10.), (0., 10.)]);
        let b = BBox::new(0., 0., 10., 10.).unwrap();
        let iv = AngleInterval::new(80.0, 100.0, 0).unwrap();
        let s = split_by_angle_interval(&sq, &b, &iv);
        let (e, d) = (s.emphasized.unwrap(), s.dimmed.unwrap());
        assert!((e.area() + d.area() - 100.0).abs() < 1e-6 * 100.0);
        // wedge of half-angle 10 deg reaching the edge at distance 5
        let want = 5.0 * 5.0 * 10f64.to_radians().tan();
        assert!((d.area() - want).abs() < 1e-9);
        // the 90 deg direction (increasing y) lies inside the dimmed part
        assert!(d.contains(Point::new(5.0, 9.0)));
        assert!(!e.contains(Point::new(5.0, 9.0)));
    }

    #[test]
    fn split_wrapping_interval_and_scale() {
        let star: Vec<Point> = (0..10)
            .map(|i| {
                let t = TAU * i as f64 / 10.0;
                let r = if i % 2 == 0 { 10.0 } else { 4.0 };
                Point::new(20.0 + r * t.cos(), 20.0 + r * t.sin())
            })
            .collect();
        let p = Polygon::new(star.clone()).unwrap();
        let b = BBox::new(10.0, 10.0, 30.0, 30.0).unwrap();
        let iv = AngleInterval::new(340.0, 50.0, 1).unwrap();
        let s = split_by_angle_interval(&p, &b, &iv);
        assert!(s.star_shaped);
        let d = s.dimmed.unwrap().area();
        let e = s.emphasized.unwrap().area();
        assert!((d + e - p.area()).abs() <= 1e-6 * p.area());

        let big = Polygon::new(
            star.iter()
                .map(|q| Point::new(20.0 + 2.0 * (q.x - 20.0), 20.0 + 2.0 * (q.y - 20.0)))
                .collect(),
        )
        .unwrap();
        let bb = BBox::new(0.0, 0.0, 40.0, 40.0).unwrap();
        let s2 = split_by_angle_interval(&big, &bb, &iv);
        let d2 = s2.dimmed.unwrap().area();
        assert!((d2 / big.area() - d / p.area()).abs() < 1e-12);
    }

    #[test]
    fn non_star_polygon_is_flagged() {
        // U shape seen from its box center, which sits in the notch
        let u = poly(&[(0., 0.), (3., 0.), (3., 8.), (7., 8.), (7., 0.), (10., 0.), (10., 10.), (0., 10.)]);
        let b = u.bounds();
        let s = split_by_angle_interval(&u, &b, &AngleInterval::new(10.0, 60.0, 0).unwrap());
        assert!(!s.star_shaped);
    }

    #[test]
    fn interval_validation() {
        assert!(AngleInterval::new(10.0, 10.0, 0).is_err());
        assert!(AngleInterval::new(360.0, 10.0, 0).is_err());
        assert!(AngleInterval::new(-1.0, 10.0, 0).is_err());
        let w = AngleInterval::new(350.0, 10.0, 0).unwrap();
        assert_eq!(w.width_deg(), 20.0);
        assert!(w.contains_deg(0.0) && w.contains_deg(355.0) && !w.contains_deg(20.0));
    }

    #[test]
    fn levels_split_into_instances() {
        let mut img = vec![0u8; 6 * 4];
        img[0] = 7;
        img[1] = 7;
        img[10] = 3;
        let blobs = blobs_from_levels(6, 4, &img).unwrap();
        assert_eq!(blobs.iter().map(|(g, b)| (*g, b.len())).collect::<Vec<_>>(), vec![(3, 1), (7, 2)]);
        assert!(blobs_from_levels(6, 3, &img).is_err());
    }
}
