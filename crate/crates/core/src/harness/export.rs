//! Intensity-map export and augmentation previews.
//!
//! `export_intensity_maps` writes, per id:
//!
//! - `{id}_input.png`: the frame as stored in the corpus
//! - `{id}_gt.png`, `{id}_gt.fimp`: the ground-truth target on the head's grid
//! - `{id}_pred.png`, `{id}_pred.fimp`: the predicted combined map
//! - `{id}_triptych.png`: input | ground truth | prediction, 8-bit, the maps
//!   upsampled by pixel replication to the frame size
//!
//! Map PNGs are 16-bit grey `clamp(round(v·5·65535), 0, 65535)` computed from
//! the same `f32` values stored in the `.fimp` file.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dataset::{Corpus, Image, ImageRecord};
use crate::error::{Error, Result};
use crate::model::Detector;
use crate::msba::export::{write_map_png16, write_raw_map, PNG_SCALE};
use crate::msba::{build_msba_sample, intensity_map_with, to_patch_targets, DifferenceMode, IntensityMap, MsbaConfig};
use crate::seed;
use crate::tensor::Mat;

fn to_f32(m: &Mat) -> Mat {
    Mat::from_vec(m.rows, m.cols, m.data.iter().map(|&v| v as f32 as f64).collect())
}

fn as_map(m: &Mat) -> Result<IntensityMap> {
    Ok(IntensityMap {
        values: Image::from_vec(m.rows, m.cols, 1, m.data.clone())?,
    })
}

fn write_map_pair(m: &Mat, stem: &Path) -> Result<[PathBuf; 2]> {
    let png = stem.with_extension("png");
    let raw = stem.with_extension("fimp");
    write_map_png16(m, PNG_SCALE, &png)?;
    write_raw_map(&as_map(m)?, &raw)?;
    Ok([png, raw])
}

fn record<'a>(corpus: &'a Corpus, id: &str) -> Result<&'a ImageRecord> {
    corpus.manifest.record(id).ok_or_else(|| Error::UnknownId(id.to_string()))
}

/// The frame and its ground-truth target on `grid`; zeros for real frames.
pub fn ground_truth_map(corpus: &Corpus, id: &str, grid: (usize, usize), mode: DifferenceMode) -> Result<(Image, Mat)> {
    let r = record(corpus, id)?;
    let g = corpus
        .group(&r.group_id, r.split)
        .ok_or_else(|| Error::UnknownId(id.to_string()))?;
    match r.method {
        None => Ok((g.real.clone(), Mat::zeros(grid.0, grid.1))),
        Some(_) => {
            let f = g
                .fakes
                .iter()
                .find(|f| f.id == id)
                .ok_or_else(|| Error::UnknownId(id.to_string()))?;
            let map = intensity_map_with(&g.real, &f.image, mode)?;
            Ok((f.image.clone(), to_patch_targets(&map, grid)?))
        }
    }
}

fn upsample_grey(m: &Mat, h: usize, w: usize) -> Image {
    let mut img = Image::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let v = (m.get(y * m.rows / h, x * m.cols / w) * PNG_SCALE).clamp(0.0, 1.0);
            for c in 0..3 {
                img.set(y, x, c, v);
            }
        }
    }
    img
}

fn hconcat(parts: &[Image]) -> Image {
    let h = parts[0].height;
    let w: usize = parts.iter().map(|p| p.width).sum();
    let mut out = Image::zeros(h, w, 3);
    let mut x0 = 0;
    for p in parts {
        for y in 0..h {
            for x in 0..p.width {
                for c in 0..3 {
                    out.set(y, x0 + x, c, p.get(y, x, c));
                }
            }
        }
        x0 += p.width;
    }
    out
}

/// Writes input, ground-truth and predicted maps for each id; returns the
/// written paths.
pub fn export_intensity_maps(det: &Detector, corpus: &Corpus, ids: &[String], out_dir: &Path) -> Result<Vec<PathBuf>> {
    for id in ids {
        record(corpus, id)?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let grid = det.config.decoder_grid();
    let mut written = Vec::new();
    for id in ids {
        let (frame, gt) = ground_truth_map(corpus, id, grid, DifferenceMode::default())?;
        let (_, pred, _) = det.predict_with_maps(&frame)?;
        let (gt, pred) = (to_f32(&gt), to_f32(&pred.combined));
        let input = out_dir.join(format!("{id}_input.png"));
        frame.save_png(&input)?;
        written.push(input);
        written.extend(write_map_pair(&gt, &out_dir.join(format!("{id}_gt")))?);
        written.extend(write_map_pair(&pred, &out_dir.join(format!("{id}_pred")))?);
        let (h, w) = (frame.height, frame.width);
        let trip = hconcat(&[frame.clone(), upsample_grey(&gt, h, w), upsample_grey(&pred, h, w)]);
        let p = out_dir.join(format!("{id}_triptych.png"));
        trip.save_png(&p)?;
        written.push(p);
    }
    Ok(written)
}

#[derive(Serialize)]
struct PreviewEntry {
    group_id: String,
    methods: Vec<usize>,
    alpha: Vec<f64>,
    lambda: f64,
    map_mean: f64,
}

/// Draws one blended sample for each of the first `count` train groups and
/// writes `{group}_real.png`, `{group}_msba.png`, `{group}_map.png` (channel
/// mean, 16-bit, ×5) and a `preview.json` with the drawn weights.
pub fn augment_preview(corpus: &Corpus, config: &MsbaConfig, count: usize, seed: u64, out_dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::new();
    for (i, g) in corpus
        .split_groups(crate::dataset::Split::Train)
        .filter(|g| g.fakes.len() >= 2)
        .take(count)
        .enumerate()
    {
        let forged: Vec<(usize, &Image)> = g.fakes.iter().map(|f| (f.method, &f.image)).collect();
        let mut rng = seed::rng_for(seed, &[i as u64]);
        let s = build_msba_sample(&g.real, &forged, corpus.num_methods(), config, &mut rng)?;
        g.real.save_png(&out_dir.join(format!("{}_real.png", g.group_id)))?;
        s.image.save_png(&out_dir.join(format!("{}_msba.png", g.group_id)))?;
        write_map_png16(&s.map.channel_mean(), PNG_SCALE, &out_dir.join(format!("{}_map.png", g.group_id)))?;
        entries.push(PreviewEntry {
            group_id: g.group_id.clone(),
            methods: g.fakes.iter().map(|f| f.method).collect(),
            alpha: s.label.alpha,
            lambda: s.spec.lambda,
            map_mean: s.map.mean(),
        });
    }
    let p = out_dir.join("preview.json");
    std::fs::write(&p, serde_json::to_string_pretty(&entries)?).map_err(|e| Error::io(&p, e))?;
    Ok(entries.len())
}
