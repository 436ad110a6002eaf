//! Seeded synthetic scenes of filled geometric primitives.
//!
//! Every image draws from its own ChaCha stream (`seed`, stream `2i` for
//! geometry and `2i + 1` for pixels), so the output does not depend on thread
//! scheduling and annotations do not depend on whether pixels are rendered.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::annotation::{AnnotationRecord, ObjectRecord};
use crate::error::{Error, Result};
use crate::geometry::{rasterize_polygon, Point, Polygon};
use crate::pnm::RgbImage;

pub const CIRCLE_SEGMENTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Primitive {
    Circle,
    Rectangle,
    Triangle,
    Star,
    RandomPolygon,
}

impl Primitive {
    pub const ALL: [Primitive; 5] = [
        Primitive::Circle,
        Primitive::Rectangle,
        Primitive::Triangle,
        Primitive::Star,
        Primitive::RandomPolygon,
    ];

    /// Class id written to annotations.
    pub fn class_id(self) -> u32 {
        self as u32
    }

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Circle => "circle",
            Primitive::Rectangle => "rectangle",
            Primitive::Triangle => "triangle",
            Primitive::Star => "star",
            Primitive::RandomPolygon => "polygon",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Background {
    Flat,
    Noise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of objects per image.
    pub objects: (usize, usize),
    pub primitives: Vec<Primitive>,
    /// Inclusive range of the circumradius in pixels.
    pub size: (f64, f64),
    pub background: Background,
    pub star_spikes: usize,
    pub seed: u64,
    pub count: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            objects: (1, 8),
            primitives: Primitive::ALL.to_vec(),
            size: (8.0, 40.0),
            background: Background::Flat,
            star_spikes: 5,
            seed: 0,
            count: 16,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleConfig(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("image size {}x{}", self.width, self.height));
        }
        if self.objects.0 > self.objects.1 {
            return bad(format!("object range {:?} is empty", self.objects));
        }
        if self.primitives.is_empty() {
            return bad("no primitives selected".into());
        }
        let (lo, hi) = self.size;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("size range [{lo}, {hi}]"));
        }
        if 2.0 * hi > self.width.min(self.height) as f64 {
            return bad(format!(
                "objects of radius {hi} do not fit a {}x{} image",
                self.width, self.height
            ));
        }
        if self.star_spikes < 5 {
            return bad(format!("stars need at least 5 spikes, got {}", self.star_spikes));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthObject {
    pub primitive: Primitive,
    pub center: Point,
    pub radius: f64,
    pub polygon: Polygon,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub record: AnnotationRecord,
    pub objects: Vec<SynthObject>,
    pub image: Option<RgbImage>,
}

fn ring(center: Point, radii_angles: impl Iterator<Item = (f64, f64)>) -> Result<Polygon> {
    Polygon::from_points_dedup(
        radii_angles
            .map(|(r, t)| Point::new(center.x + r * t.cos(), center.y + r * t.sin()))
            .collect(),
    )
}

fn shape(prim: Primitive, c: Point, r: f64, spikes: usize, rng: &mut ChaCha8Rng) -> Result<Polygon> {
    let phase = rng.random_range(0.0..TAU);
    match prim {
        Primitive::Circle => ring(
            c,
            (0..CIRCLE_SEGMENTS).map(|i| (r, TAU * i as f64 / CIRCLE_SEGMENTS as f64)),
        ),
        Primitive::Rectangle => {
            let half = rng.random_range(TAU / 16.0..3.0 * TAU / 16.0);
            let a = [half, TAU / 2.0 - half, TAU / 2.0 + half, TAU - half];
            ring(c, a.into_iter().map(|t| (r, t + phase)))
        }
        Primitive::Triangle => {
            let jitter: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
            ring(
                c,
                (0..3).map(|i| (r, phase + TAU * i as f64 / 3.0 + jitter[i])),
            )
        }
        Primitive::Star => {
            let inner = r * rng.random_range(0.35..0.6);
            let n = 2 * spikes;
            ring(
                c,
                (0..n).map(|i| {
                    let rad = if i % 2 == 0 { r } else { inner };
                    (rad, phase + TAU * i as f64 / n as f64)
                }),
            )
        }
        Primitive::RandomPolygon => {
            let n = rng.random_range(5..=12usize);
            // sorted angles with a minimum gap keep the ring star-shaped about c
            let gap = TAU / n as f64;
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let t = phase + gap * (i as f64 + rng.random_range(0.1..0.9));
                    (r * rng.random_range(0.4..=1.0), t)
                })
                .collect();
            ring(c, pts.into_iter())
        }
    }
}

fn scene_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn make_objects(cfg: &SynthConfig, index: usize) -> Result<Vec<SynthObject>> {
    let mut rng = scene_rng(cfg.seed, 2 * index as u64);
    let n = rng.random_range(cfg.objects.0..=cfg.objects.1);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    (0..n)
        .map(|_| {
            let primitive = cfg.primitives[rng.random_range(0..cfg.primitives.len())];
            let radius = rng.random_range(cfg.size.0..=cfg.size.1);
            let center = Point::new(
                rng.random_range(radius..=w - radius),
                rng.random_range(radius..=h - radius),
            );
            let polygon = shape(primitive, center, radius, cfg.star_spikes, &mut rng)?;
            let color = [rng.random(), rng.random(), rng.random()];
            Ok(SynthObject {
                primitive,
                center,
                radius,
                polygon,
                color,
            })
        })
        .collect()
}

fn render(cfg: &SynthConfig, index: usize, objects: &[SynthObject]) -> Result<RgbImage> {
    let mut rng = scene_rng(cfg.seed, 2 * index as u64 + 1);
    let mut img = match cfg.background {
        Background::Flat => RgbImage::filled(cfg.width, cfg.height, [rng.random(), rng.random(), rng.random()]),
        Background::Noise => {
            let mut img = RgbImage::filled(cfg.width, cfg.height, [0; 3]);
            rng.fill(img.data.as_mut_slice());
            img
        }
    };
    for o in objects {
        let m = rasterize_polygon(&o.polygon, cfg.width, cfg.height)?;
        for (x, y) in m.iter_set() {
            img.put(x, y, o.color);
        }
    }
    Ok(img)
}

fn make_scene(cfg: &SynthConfig, index: usize, with_image: bool) -> Result<Scene> {
    let objects = make_objects(cfg, index)?;
    let image = with_image.then(|| render(cfg, index, &objects)).transpose()?;
    let records = objects
        .iter()
        .map(|o| {
            let mut b = o.polygon.bounds();
            b.class_id = o.primitive.class_id();
            ObjectRecord::new(&b, Some(&o.polygon))
        })
        .collect();
    Ok(Scene {
        record: AnnotationRecord {
            image_id: format!("{index:06}"),
            width: cfg.width as u32,
            height: cfg.height as u32,
            objects: records,
        },
        objects,
        image,
    })
}

/// Scenes with rendered images, in image order.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Scene>> {
    cfg.validate()?;
    (0..cfg.count)
        .into_par_iter()
        .map(|i| make_scene(cfg, i, true))
        .collect()
}

/// Same scenes as [`generate`] without rendering pixels.
pub fn generate_annotations(cfg: &SynthConfig) -> Result<Vec<Scene>> {
    cfg.validate()?;
    (0..cfg.count)
        .into_par_iter()
        .map(|i| make_scene(cfg, i, false))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mask;

    fn cfg(count: usize) -> SynthConfig {
        SynthConfig {
            width: 96,
            height: 80,
            count,
            seed: 7,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_count_is_empty() {
        assert!(generate(&cfg(0)).unwrap().is_empty());
    }

    #[test]
    fn deterministic_and_render_independent() {
        let c = SynthConfig {
            background: Background::Noise,
            ..cfg(6)
        };
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a, b);
        let lines = |s: &[Scene]| s.iter().map(|x| x.record.to_json_line().unwrap()).collect::<Vec<_>>();
        assert_eq!(lines(&a), lines(&generate_annotations(&c).unwrap()));
        let other = generate(&SynthConfig { seed: 8, ..c }).unwrap();
        assert_ne!(lines(&a), lines(&other));
    }

    #[test]
    fn infeasible_configs() {
        let big = SynthConfig {
            size: (10.0, 41.0),
            ..cfg(1)
        };
        assert!(matches!(generate(&big), Err(Error::InfeasibleConfig(_))));
        assert!(generate(&SynthConfig { objects: (3, 2), ..cfg(1) }).is_err());
        assert!(generate(&SynthConfig { primitives: vec![], ..cfg(1) }).is_err());
        assert!(generate(&SynthConfig { star_spikes: 4, ..cfg(1) }).is_err());
        assert!(generate(&SynthConfig { size: (0.0, 4.0), ..cfg(1) }).is_err());
    }

    #[test]
    fn boxes_bound_polygons_inside_image() {
        for s in generate_annotations(&cfg(40)).unwrap() {
            for (o, rec) in s.objects.iter().zip(&s.record.objects) {
                let b = rec.to_bbox().unwrap();
                assert_eq!(b, {
                    let mut t = o.polygon.bounds();
                    t.class_id = o.primitive.class_id();
                    t
                });
                assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 96.0 && b.y2 <= 80.0);
                assert_eq!(rec.class_id, o.primitive.class_id());
            }
        }
    }

    #[test]
    fn star_shapes_have_requested_spikes() {
        let c = SynthConfig {
            primitives: vec![Primitive::Star],
            star_spikes: 7,
            ..cfg(3)
        };
        for s in generate_annotations(&c).unwrap() {
            for o in &s.objects {
                assert_eq!(o.polygon.len(), 14);
            }
        }
    }

    #[test]
    fn circles_match_analytic_disks() {
        let c = SynthConfig {
            width: 64,
            height: 64,
            primitives: vec![Primitive::Circle],
            size: (10.0, 20.0),
            objects: (1, 3),
            count: 100,
            ..SynthConfig::default()
        };
        for s in generate_annotations(&c).unwrap() {
            for o in &s.objects {
                let raster = rasterize_polygon(&o.polygon, 64, 64).unwrap();
                let mut disk = Mask::new(64, 64).unwrap();
                for y in 0..64 {
                    for x in 0..64 {
                        let (dx, dy) = (x as f64 + 0.5 - o.center.x, y as f64 + 0.5 - o.center.y);
                        disk.set(x, y, dx * dx + dy * dy <= o.radius * o.radius);
                    }
                }
                assert!(raster.iou(&disk).unwrap() >= 0.97);
            }
        }
    }

    #[test]
    fn class_histogram_is_uniform() {
        let c = SynthConfig {
            objects: (10, 10),
            count: 1000,
            ..cfg(0)
        };
        let mut counts = [0usize; 5];
        for s in generate_annotations(&c).unwrap() {
            for o in &s.record.objects {
                counts[o.class_id as usize] += 1;
            }
        }
        let n: usize = counts.iter().sum();
        assert_eq!(n, 10_000);
        let e = n as f64 / 5.0;
        let chi2: f64 = counts.iter().map(|&k| (k as f64 - e).powi(2) / e).sum();
        // chi-square, 4 degrees of freedom, upper 0.001 quantile
        assert!(chi2 < 18.467, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn rendering_draws_objects() {
        let c = SynthConfig {
            primitives: vec![Primitive::Rectangle],
            objects: (1, 1),
            ..cfg(2)
        };
        for s in generate(&c).unwrap() {
            let img = s.image.unwrap();
            let o = &s.objects[0];
            assert_eq!(img.get(o.center.x as usize, o.center.y as usize), o.color);
        }
    }
}
