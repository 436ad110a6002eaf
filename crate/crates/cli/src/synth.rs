use std::collections::HashMap;

use polykit_core::annotation::write_jsonl;
use polykit_core::eval::{coco_thresholds, evaluate, nms, EvalMode};
use polykit_core::pnm::write_ppm;
use polykit_core::synth::{generate, generate_annotations, Background, Primitive, SynthConfig};
use polykit_core::Error;
use rayon::prelude::*;

use crate::error::{usage, CliError, CliResult};
use crate::io::{emit, read_annotations};
use crate::{BackgroundArg, EvalArgs, EvalModeArg, SynthArgs};

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let primitives = a
        .primitives
        .iter()
        .map(|p| Primitive::from_name(p.trim()).ok_or_else(|| CliError::Usage(format!("unknown primitive '{p}'"))))
        .collect::<CliResult<Vec<_>>>()?;
    let cfg = SynthConfig {
        width: a.width,
        height: a.height,
        objects: a.objects,
        primitives,
        size: a.size,
        background: match a.background {
            BackgroundArg::Flat => Background::Flat,
            BackgroundArg::Noise => Background::Noise,
        },
        star_spikes: a.spikes,
        seed: a.seed,
        count: a.count,
    };
    let scenes = if a.no_images { generate_annotations(&cfg) } else { generate(&cfg) };
    let scenes = match scenes {
        Err(Error::InfeasibleConfig(m)) => return usage(m),
        other => other?,
    };
    let images = a.out.join("images");
    std::fs::create_dir_all(&images)
        .map_err(|e| CliError::Data(format!("{}: {e}", images.display())))?;
    scenes
        .par_iter()
        .filter_map(|s| s.image.as_ref().map(|img| (s, img)))
        .try_for_each(|(s, img)| write_ppm(&images.join(format!("{}.ppm", s.record.image_id)), img))?;
    let records: Vec<_> = scenes.into_iter().map(|s| s.record).collect();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records)?;
    emit(Some(&a.out.join("annotations.jsonl")), &String::from_utf8_lossy(&buf))?;
    eprintln!("wrote {} scenes to {}", records.len(), a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    if let Some(t) = a.nms {
        if !(0.0..=1.0).contains(&t) {
            return usage("--nms must be in [0, 1]");
        }
    }
    let gt_records = read_annotations(&a.ground_truth)?;
    let det_records = read_annotations(&a.detections)?;
    let mut gts = Vec::new();
    for r in &gt_records {
        gts.extend(r.ground_truth()?);
    }
    let mut dets = Vec::new();
    for r in &det_records {
        dets.extend(r.detections()?);
    }
    if let Some(t) = a.nms {
        dets = nms(&dets, t)?;
    }
    let mode = match a.mode {
        EvalModeArg::Box => EvalMode::Box,
        EvalModeArg::Mask => {
            let mut sizes = HashMap::new();
            for r in det_records.iter().chain(&gt_records) {
                sizes.insert(r.image_id.clone(), (r.width as usize, r.height as usize));
            }
            EvalMode::Mask(sizes)
        }
    };
    let result = evaluate(&dets, &gts, &coco_thresholds(), &mode)?;
    emit(None, &result.to_csv())?;
    if let Some(path) = &a.json {
        let text = serde_json::to_string_pretty(&result).map_err(|e| CliError::Internal(e.to_string()))?;
        emit(Some(path), &(text + "\n"))?;
    }
    Ok(())
}
