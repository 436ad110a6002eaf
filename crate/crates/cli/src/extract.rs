use std::path::{Path, PathBuf};

use polykit_core::annotation::{write_jsonl, AnnotationRecord, ObjectRecord};
use polykit_core::mask::{blobs_from_levels, extract_polygon};
use polykit_core::pnm::read_pgm;
use rayon::prelude::*;

use crate::error::{usage, CliError, CliResult};
use crate::io::emit;
use crate::ExtractArgs;

struct FileResult {
    record: Option<AnnotationRecord>,
    warnings: Vec<String>,
}

fn process(path: &Path, a: &ExtractArgs) -> CliResult<FileResult> {
    let img = read_pgm(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let blobs = blobs_from_levels(img.width, img.height, &img.data)?;
    let mut warnings = Vec::new();
    if blobs.is_empty() {
        warnings.push(format!("skipping {}: empty mask", path.display()));
        return Ok(FileResult { record: None, warnings });
    }
    let mut objects = Vec::new();
    for (level, blob) in blobs {
        match extract_polygon(&blob, a.sectors, a.eps) {
            Ok((poly, mut bbox)) => {
                bbox.class_id = if a.level_as_class { level as u32 } else { 0 };
                objects.push(ObjectRecord::new(&bbox, Some(&poly)));
            }
            Err(e) => warnings.push(format!("skipping level {level} of {}: {e}", path.display())),
        }
    }
    Ok(FileResult {
        record: Some(AnnotationRecord {
            image_id: id,
            width: img.width as u32,
            height: img.height as u32,
            objects,
        }),
        warnings,
    })
}

pub fn extract(a: &ExtractArgs) -> CliResult<()> {
    if a.sectors < 3 {
        return usage("--sectors must be at least 3");
    }
    if a.eps.is_nan() || a.eps < 0.0 {
        return usage("--eps must be non-negative");
    }
    let entries = std::fs::read_dir(&a.masks)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.masks.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    let results: Vec<FileResult> = files
        .par_iter()
        .map(|p| process(p, a))
        .collect::<CliResult<_>>()?;
    let mut records = Vec::new();
    for r in results {
        for w in r.warnings {
            eprintln!("warning: {w}");
        }
        records.extend(r.record);
    }
    records.sort_by(|x, y| x.image_id.cmp(&y.image_id));
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records)?;
    emit(a.out.as_deref(), &String::from_utf8_lossy(&buf))
}
