use std::io::Write;
use std::path::Path;

use polykit_core::annotation::{read_jsonl_file, AnnotationRecord};
use polykit_core::BBox;

use crate::error::{CliError, CliResult};
use crate::Resize;

/// `WxH`, both positive.
pub fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let parse = |t: &str| match t.trim().parse::<u32>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("bad dimension '{t}' in '{s}'")),
    };
    Ok((parse(w)?, parse(h)?))
}

/// A grid scale given as `1/s` or as the stride `s`.
pub fn parse_stride(s: &str) -> Result<u32, String> {
    let t = s.trim();
    let digits = t.strip_prefix("1/").unwrap_or(t);
    match digits.parse::<u32>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("bad scale '{s}', expected 1/s or s")),
    }
}

fn split_range(s: &str) -> Result<(&str, &str), String> {
    s.split_once('-')
        .map(|(a, b)| (a.trim(), b.trim()))
        .or_else(|| (!s.contains('-')).then(|| (s.trim(), s.trim())))
        .ok_or_else(|| format!("expected MIN-MAX, got '{s}'"))
}

pub fn parse_count_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = split_range(s)?;
    let p = |t: &str| t.parse::<usize>().map_err(|_| format!("bad count '{t}'"));
    Ok((p(a)?, p(b)?))
}

pub fn parse_real_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = split_range(s)?;
    let p = |t: &str| match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("bad number '{t}'")),
    };
    Ok((p(a)?, p(b)?))
}

pub fn read_annotations(path: &Path) -> CliResult<Vec<AnnotationRecord>> {
    Ok(read_jsonl_file(path)?)
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

/// Boxes of one record mapped into a `w x h` network input.
pub fn to_input_frame(rec: &AnnotationRecord, size: (u32, u32), resize: Resize) -> CliResult<Vec<BBox>> {
    if rec.width == 0 || rec.height == 0 {
        return Err(CliError::Data(format!(
            "image '{}' has zero size {}x{}",
            rec.image_id, rec.width, rec.height
        )));
    }
    let (iw, ih) = (rec.width as f64, rec.height as f64);
    let (w, h) = (size.0 as f64, size.1 as f64);
    let (sx, sy, ox, oy) = match resize {
        Resize::Stretch => (w / iw, h / ih, 0.0, 0.0),
        Resize::Letterbox => {
            let s = (w / iw).min(h / ih);
            (s, s, (w - iw * s) / 2.0, (h - ih * s) / 2.0)
        }
    };
    rec.boxes()?
        .into_iter()
        .map(|b| {
            let mut m = BBox::with_class(
                ox + b.x1 * sx,
                oy + b.y1 * sy,
                ox + b.x2 * sx,
                oy + b.y2 * sy,
                b.class_id,
            )?;
            m.score = b.score;
            Ok(m)
        })
        .collect()
}
