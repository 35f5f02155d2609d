//! Scoring, evaluation reports and the perturbation sweep.

use std::borrow::Cow;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, auc, group_scores};
use crate::dataset::{Corpus, Image, ImageRecord, PerturbationKind, Split};
use crate::error::{Error, Result};
use crate::model::Detector;
use crate::seed;

pub const SCORES_HEADER: &str = "id,group_id,label,y_hat,z_cls,s";

/// One scored frame; `method` is carried for breakdowns but not written to
/// the score file (it is recoverable from the manifest).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameScore {
    pub id: String,
    pub group_id: String,
    pub label: u8,
    pub method: Option<usize>,
    pub y_hat: f64,
    pub z_cls: f64,
    pub s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: usize,
    pub n_fake: usize,
    /// Accuracy over this method's fakes and every real frame of the split.
    pub acc: f64,
    /// AUC of this method's fakes against every real frame of the split.
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub frame_acc: f64,
    pub frame_auc: f64,
    pub video_acc: f64,
    pub video_auc: f64,
    pub per_method: Vec<MethodMetrics>,
    pub n_frames: usize,
    pub n_real: usize,
    pub n_fake: usize,
    pub n_videos: usize,
}

fn record_image<'a>(corpus: &'a Corpus, r: &ImageRecord) -> Result<&'a Image> {
    let g = corpus
        .group(&r.group_id, r.split)
        .ok_or_else(|| Error::UnknownId(r.id.clone()))?;
    match r.method {
        None => Ok(&g.real),
        Some(m) => g
            .fakes
            .iter()
            .find(|f| f.id == r.id && f.method == m)
            .map(|f| &f.image)
            .ok_or_else(|| Error::UnknownId(r.id.clone())),
    }
}

/// Scores every record of `split` in manifest order after passing each
/// image through `transform(index, image)`. Images are scored in parallel;
/// each score depends only on its own image.
pub fn score_split_with<F>(det: &Detector, corpus: &Corpus, split: Split, transform: F) -> Result<Vec<FrameScore>>
where
    F: Fn(usize, &Image) -> Result<Cow<'_, Image>> + Sync,
{
    let records: Vec<&ImageRecord> = corpus.manifest.split_records(split).collect();
    if records.is_empty() {
        return Err(Error::invalid(format!("split {split} is empty")));
    }
    records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let img = record_image(corpus, r)?;
            let img = transform(i, img)?;
            let out = det.predict(&img)?;
            Ok(FrameScore {
                id: r.id.clone(),
                group_id: r.group_id.clone(),
                label: u8::from(r.label),
                method: r.method,
                y_hat: out.fused_prob,
                z_cls: out.z_cls,
                s: out.s,
            })
        })
        .collect()
}

pub fn score_split(det: &Detector, corpus: &Corpus, split: Split) -> Result<Vec<FrameScore>> {
    score_split_with(det, corpus, split, |_, img| Ok(Cow::Borrowed(img)))
}

fn columns(scores: &[FrameScore]) -> (Vec<f64>, Vec<u8>) {
    (scores.iter().map(|f| f.y_hat).collect(), scores.iter().map(|f| f.label).collect())
}

/// Frame AUC of a score list.
pub fn frame_auc(scores: &[FrameScore]) -> Result<f64> {
    let (s, l) = columns(scores);
    auc(&s, &l)
}

/// Builds the report from per-frame scores.
///
/// A video is the set of frames sharing `(group_id, label, method)`: a
/// group's pristine frames form one real video and each method's frames one
/// fake video. Video scores are member-frame means.
pub fn report_from_scores(split: Split, scores: &[FrameScore]) -> Result<EvalReport> {
    let (s, l) = columns(scores);
    let frame_acc = accuracy(&s, &l, 0.5)?;
    let frame_auc = auc(&s, &l).map_err(|e| match e {
        Error::SingleClass(m) => Error::SingleClass(format!("split {split}: {m} (frame ACC {frame_acc})")),
        e => e,
    })?;
    let keys: Vec<(String, u8, Option<usize>)> =
        scores.iter().map(|f| (f.group_id.clone(), f.label, f.method)).collect();
    let videos = group_scores(&keys, &s, &l)?;
    let vs: Vec<f64> = videos.iter().map(|v| v.1).collect();
    let vl: Vec<u8> = videos.iter().map(|v| v.2).collect();
    let reals: Vec<&FrameScore> = scores.iter().filter(|f| f.label == 0).collect();
    let mut methods: Vec<usize> = scores.iter().filter_map(|f| f.method).collect();
    methods.sort_unstable();
    methods.dedup();
    let per_method = methods
        .into_iter()
        .map(|m| {
            let subset: Vec<&FrameScore> = scores
                .iter()
                .filter(|f| f.method == Some(m))
                .chain(reals.iter().copied())
                .collect();
            let ms: Vec<f64> = subset.iter().map(|f| f.y_hat).collect();
            let ml: Vec<u8> = subset.iter().map(|f| f.label).collect();
            Ok(MethodMetrics {
                method: m,
                n_fake: subset.len() - reals.len(),
                acc: accuracy(&ms, &ml, 0.5)?,
                auc: auc(&ms, &ml)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_real = reals.len();
    Ok(EvalReport {
        split,
        frame_acc,
        frame_auc,
        video_acc: accuracy(&vs, &vl, 0.5)?,
        video_auc: auc(&vs, &vl)?,
        per_method,
        n_frames: scores.len(),
        n_real,
        n_fake: scores.len() - n_real,
        n_videos: videos.len(),
    })
}

pub fn evaluate(det: &Detector, corpus: &Corpus, split: Split) -> Result<(EvalReport, Vec<FrameScore>)> {
    let scores = score_split(det, corpus, split)?;
    Ok((report_from_scores(split, &scores)?, scores))
}

pub fn write_scores_csv(scores: &[FrameScore], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(64 * (scores.len() + 1));
    out.push_str(SCORES_HEADER);
    out.push('\n');
    for f in scores {
        out.push_str(&format!("{},{},{},{},{},{}\n", f.id, f.group_id, f.label, f.y_hat, f.z_cls, f.s));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a score file; `method` is filled from `records` when given.
pub fn read_scores_csv(path: &Path, records: Option<&[ImageRecord]>) -> Result<Vec<FrameScore>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(SCORES_HEADER) {
        return Err(Error::invalid(format!("{} lacks the score header", path.display())));
    }
    let methods: HashMap<&str, Option<usize>> = records
        .unwrap_or_default()
        .iter()
        .map(|r| (r.id.as_str(), r.method))
        .collect();
    let bad = |line: usize| Error::invalid(format!("{}:{line}: malformed score row", path.display()));
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(i + 2));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2));
            let method = methods.get(f[0]).copied().flatten();
            Ok(FrameScore {
                id: f[0].to_string(),
                group_id: f[1].to_string(),
                label: f[2].parse().map_err(|_| bad(i + 2))?,
                method,
                y_hat: num(f[3])?,
                z_cls: num(f[4])?,
                s: num(f[5])?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    /// `None` for the clean cell.
    pub kind: Option<PerturbationKind>,
    pub level: u8,
    pub frame_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub clean_auc: f64,
    /// Clean cell first, then kinds in order with levels 1–5.
    pub cells: Vec<RobustnessCell>,
}

impl RobustnessReport {
    pub fn get(&self, kind: PerturbationKind, level: u8) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.kind == Some(kind) && c.level == level)
            .map(|c| c.frame_auc)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = String::from("kind,level,frame_auc\n");
        for c in &self.cells {
            let kind = c.kind.map_or("clean", |k| k.name());
            out.push_str(&format!("{kind},{},{}\n", c.level, c.frame_auc));
        }
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Test-split frame AUC under every perturbation kind at levels 1–5, plus
/// the unperturbed cell. Noise streams derive from `seed`, the cell and the
/// frame index.
pub fn robustness_sweep(det: &Detector, corpus: &Corpus, seed: u64) -> Result<RobustnessReport> {
    let clean_auc = frame_auc(&score_split(det, corpus, Split::Test)?)?;
    let mut cells = vec![RobustnessCell {
        kind: None,
        level: 0,
        frame_auc: clean_auc,
    }];
    for (k, kind) in PerturbationKind::ALL.into_iter().enumerate() {
        for level in 1..=5u8 {
            let scores = score_split_with(det, corpus, Split::Test, |i, img| {
                let s = seed::derive(seed, &[k as u64, level as u64, i as u64]);
                Ok(Cow::Owned(crate::dataset::perturb_level(img, kind, level, s)?))
            })?;
            cells.push(RobustnessCell {
                kind: Some(kind),
                level,
                frame_auc: frame_auc(&scores)?,
            });
        }
    }
    Ok(RobustnessReport { clean_auc, cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fs(id: &str, g: &str, label: u8, method: Option<usize>, y: f64) -> FrameScore {
        FrameScore {
            id: id.into(),
            group_id: g.into(),
            label,
            method,
            y_hat: y,
            z_cls: y - 0.5,
            s: 0.1 * y,
        }
    }

    fn sample() -> Vec<FrameScore> {
        vec![
            fs("a_real", "a", 0, None, 0.2),
            fs("a_m0", "a", 1, Some(0), 0.9),
            fs("a_m1", "a", 1, Some(1), 0.4),
            fs("b_real", "b", 0, None, 0.55),
            fs("b_m0", "b", 1, Some(0), 0.7),
            fs("b_m1", "b", 1, Some(1), 0.6),
        ]
    }

    #[test]
    fn report_counts_and_breakdown() {
        let r = report_from_scores(Split::Test, &sample()).unwrap();
        assert_eq!((r.n_frames, r.n_real, r.n_fake, r.n_videos), (6, 2, 4, 6));
        // single-frame videos: video metrics equal frame metrics
        assert_eq!(r.video_auc, r.frame_auc);
        assert_eq!(r.video_acc, r.frame_acc);
        assert_eq!(r.per_method.len(), 2);
        assert_eq!(r.per_method[0].auc, 1.0);
        // method 1: fakes 0.4, 0.6 vs reals 0.2, 0.55 → 3 of 4 pairs
        assert_eq!(r.per_method[1].auc, 0.75);
        assert_eq!(r.frame_acc, 4.0 / 6.0);
    }

    #[test]
    fn perfect_and_constant_detectors() {
        let mut s = sample();
        for f in &mut s {
            f.y_hat = f.label as f64;
        }
        let r = report_from_scores(Split::Val, &s).unwrap();
        assert_eq!((r.frame_acc, r.frame_auc), (1.0, 1.0));
        for f in &mut s {
            f.y_hat = 0.5;
        }
        assert_eq!(report_from_scores(Split::Val, &s).unwrap().frame_auc, 0.5);
    }

    #[test]
    fn single_class_split_is_an_error_with_acc() {
        let s: Vec<FrameScore> = sample().into_iter().filter(|f| f.label == 1).collect();
        match report_from_scores(Split::Test, &s) {
            Err(Error::SingleClass(m)) => assert!(m.contains("frame ACC"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn score_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.csv");
        let mut s = sample();
        s[0].y_hat = 0.1 + 0.2;
        write_scores_csv(&s, &p).unwrap();
        let back = read_scores_csv(&p, None).unwrap();
        for (a, b) in s.iter().zip(&back) {
            assert_eq!((a.y_hat, a.z_cls, a.s, a.label), (b.y_hat, b.z_cls, b.s, b.label));
        }
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("id,group_id,label,y_hat,z_cls,s\n"));
    }
}
