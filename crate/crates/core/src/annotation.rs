//! JSON-lines annotation files: one image record per line.
//!
//! ```json
//! {"image_id":"000001","width":640,"height":480,
//!  "objects":[{"class_id":2,"bbox":[10,20,50,80],"polygon":[[10,20],[50,20],[30,80]]}]}
//! ```
//!
//! `polygon` and `score` are optional. Detections use the same schema with a
//! `score` on every object.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Detection, GroundTruth};
use crate::geometry::{BBox, Point, Polygon};
use crate::grid::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub class_id: u32,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<ObjectRecord>,
}

impl ObjectRecord {
    pub fn new(bbox: &BBox, polygon: Option<&Polygon>) -> Self {
        Self {
            class_id: bbox.class_id,
            bbox: [bbox.x1, bbox.y1, bbox.x2, bbox.y2],
            polygon: polygon.map(|p| p.vertices().iter().map(|v| [v.x, v.y]).collect()),
            score: bbox.score,
        }
    }

    pub fn to_bbox(&self) -> Result<BBox> {
        let [x1, y1, x2, y2] = self.bbox;
        let b = BBox::with_class(x1, y1, x2, y2, self.class_id)?;
        match self.score {
            Some(s) => b.with_score(s),
            None => Ok(b),
        }
    }

    pub fn to_polygon(&self) -> Result<Option<Polygon>> {
        self.polygon
            .as_ref()
            .map(|v| Polygon::new(v.iter().map(|&[x, y]| Point::new(x, y)).collect()))
            .transpose()
    }

    pub fn validate(&self) -> Result<()> {
        self.to_bbox()?;
        self.to_polygon()?;
        Ok(())
    }
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::Parse("empty image_id".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            o.validate()
                .map_err(|e| Error::Parse(format!("object {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn boxes(&self) -> Result<Vec<BBox>> {
        self.objects.iter().map(ObjectRecord::to_bbox).collect()
    }

    pub fn labels(&self) -> Result<Vec<Label>> {
        self.objects
            .iter()
            .map(|o| Ok(Label::new(o.to_bbox()?, o.to_polygon()?)))
            .collect()
    }

    pub fn ground_truth(&self) -> Result<Vec<GroundTruth>> {
        self.objects
            .iter()
            .map(|o| {
                Ok(GroundTruth {
                    image_id: self.image_id.clone(),
                    bbox: o.to_bbox()?,
                    polygon: o.to_polygon()?,
                    class_id: o.class_id,
                })
            })
            .collect()
    }

    /// Objects as detections; every object must carry a score.
    pub fn detections(&self) -> Result<Vec<Detection>> {
        self.objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let score = o.score.ok_or_else(|| {
                    Error::Parse(format!("image '{}' object {i}: detection without score", self.image_id))
                })?;
                Ok(Detection {
                    image_id: self.image_id.clone(),
                    bbox: o.to_bbox()?,
                    polygon: o.to_polygon()?,
                    score,
                    class_id: o.class_id,
                })
            })
            .collect()
    }

    pub fn to_json_line(&self) -> Result<String> {
        self.validate()?;
        serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Parses and validates a JSON-lines stream. Blank lines are skipped; errors
/// carry the 1-based line number.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        rec.validate()
            .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl_file(path: &std::path::Path) -> Result<Vec<AnnotationRecord>> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_jsonl(std::io::BufReader::new(f))
        .map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
}

/// Validates every record, then writes one line each.
pub fn write_jsonl<W: Write>(mut w: W, records: &[AnnotationRecord]) -> Result<()> {
    for r in records {
        writeln!(w, "{}", r.to_json_line()?)?;
    }
    Ok(())
}
