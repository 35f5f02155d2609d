//! The training loop.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::{PromptMode, TrainConfig};
use super::eval::{frame_auc, score_split};
use super::metrics::accuracy;
use super::optim::{clip_grad_norm, cosine_lr, AdamW};
use crate::dataset::{BatchIterator, Corpus, GroupEntry, SampleKind, SampleRef, Split};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Detector, TrainSample};
use crate::msba::{build_msba_sample, intensity_map_with, to_patch_targets};
use crate::objectives::{LossBreakdown, LossLog};
use crate::seed;
use crate::tensor::Mat;

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const LOSS_LOG_FILE: &str = "train_log.csv";
pub const VAL_LOG_FILE: &str = "val_log.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_auc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-validation weights, rounded to `f32` exactly as stored in the
    /// checkpoint.
    pub detector: Detector,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    pub checkpoint: Option<PathBuf>,
}

/// Turns a batch entry into a supervised sample.
///
/// Real frames get a zero intensity target and no blend-weight target;
/// single-method fakes get their own difference map and a one-hot target;
/// blended samples use every forged image of the group.
pub fn materialize(
    det: &Detector,
    config: &TrainConfig,
    group: &GroupEntry,
    sample: &SampleRef,
) -> Result<TrainSample> {
    let m = det.config.num_methods;
    let grid = det.config.decoder_grid();
    let unknown = det.prompts.unknown_index();
    match &sample.kind {
        SampleKind::Real => Ok(TrainSample {
            image: group.real.clone(),
            label: 0.0,
            prompt: unknown,
            intensity_target: Mat::zeros(grid.0, grid.1),
            alpha: None,
        }),
        SampleKind::SingleFake { method } => {
            let fake = group
                .fake(*method)
                .ok_or_else(|| Error::invalid(format!("group {} has no method {method}", group.group_id)))?;
            let map = intensity_map_with(&group.real, &fake.image, config.msba.difference)?;
            let mut alpha = vec![0.0; m];
            alpha[*method] = 1.0;
            let prompt = match config.prompt_mode {
                PromptMode::UnknownOnly => unknown,
                PromptMode::TypeConditionedTrain => det.prompts.method_index(*method).unwrap_or(unknown),
            };
            Ok(TrainSample {
                image: fake.image.clone(),
                label: 1.0,
                prompt,
                intensity_target: to_patch_targets(&map, grid)?,
                alpha: Some(alpha),
            })
        }
        SampleKind::Msba => {
            let forged: Vec<(usize, &crate::dataset::Image)> =
                group.fakes.iter().map(|f| (f.method, &f.image)).collect();
            let mut rng = seed::rng(sample.seed);
            let s = build_msba_sample(&group.real, &forged, m, &config.msba, &mut rng)?;
            Ok(TrainSample {
                image: s.image,
                label: 1.0,
                prompt: unknown,
                intensity_target: to_patch_targets(&s.map, grid)?,
                alpha: Some(s.label.alpha),
            })
        }
    }
}

fn check_compatible(config: &TrainConfig, corpus: &Corpus) -> Result<()> {
    if let Some(size) = corpus.image_size() {
        if size != config.model.image_size {
            return Err(Error::shape(format!(
                "corpus images are {size:?}, model expects {:?}",
                config.model.image_size
            )));
        }
    }
    if corpus.num_methods() > config.model.num_methods {
        return Err(Error::invalid(format!(
            "corpus has {} methods, model predicts {}",
            corpus.num_methods(),
            config.model.num_methods
        )));
    }
    Ok(())
}

fn write_val_log(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,mean_loss,val_auc,val_acc\n");
    for h in history {
        out.push_str(&format!("{},{},{},{}\n", h.epoch, h.mean_loss, h.val_auc, h.val_acc));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains from scratch on the corpus's train split, validating on its val
/// split after every epoch.
///
/// The learning rate follows the cosine schedule from `lr_init` at the first
/// update to `lr_final` at the last. The weights with the highest val AUC
/// are kept (later epochs win ties). With `out_dir` the step log, the
/// per-epoch log, the resolved config and the best checkpoint are written
/// there.
pub fn train(config: &TrainConfig, corpus: &Corpus, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    check_compatible(config, corpus)?;
    if corpus.split_groups(Split::Val).next().is_none() {
        return Err(Error::invalid("split val is empty"));
    }
    let batches = BatchIterator::new(
        &corpus.manifest,
        Split::Train,
        config.batch_size,
        config.batch_composition,
        seed::derive(config.seed, &[0xba7c]),
    )?;
    let mut det = Detector::new(config.model.clone(), config.seed)?;
    let mut opt = AdamW::new(&det.params, config.weight_decay);
    let kappa = det.param_id("kappa").expect("detector has a temperature");
    let (k_lo, k_hi) = config.model.kappa_range;

    let mut log = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let p = d.join(RESOLVED_CONFIG_FILE);
            std::fs::write(&p, config.to_json()?).map_err(|e| Error::io(&p, e))?;
            Some(LossLog::create(&d.join(LOSS_LOG_FILE))?)
        }
        None => None,
    };

    let per_epoch = batches.batches_per_epoch();
    let total = config.epochs * per_epoch;
    let mut step = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Detector)> = None;
    for epoch in 0..config.epochs {
        let mut parts = Vec::with_capacity(per_epoch);
        for batch in batches.epoch(epoch) {
            let samples = batch
                .iter()
                .map(|r| {
                    let g = corpus
                        .group(&r.group_id, Split::Train)
                        .ok_or_else(|| Error::UnknownId(r.group_id.clone()))?;
                    materialize(&det, config, g, r)
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, mut grads) = match det.batch_loss_and_grads(&samples, &config.loss_weights) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { step, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            let norm = match config.grad_clip {
                Some(c) => clip_grad_norm(&mut grads, &det.params, c),
                None => super::optim::grad_norm(&grads, &det.params),
            };
            if !loss.total.is_finite() || !norm.is_finite() {
                return Err(Error::Diverged { step, loss: loss.total });
            }
            let lr = cosine_lr(step, total.saturating_sub(1), config.lr_init, config.lr_final);
            opt.step(&mut det.params, &grads, lr)?;
            let k = det.params.get_mut(kappa);
            k.data[0] = k.data[0].clamp(k_lo, k_hi);
            if let Some(l) = log.as_mut() {
                l.append(step, &loss, lr)?;
            }
            parts.push(loss);
            step += 1;
        }
        let scores = score_split(&det, corpus, Split::Val)?;
        let val_auc = frame_auc(&scores)?;
        let ys: Vec<f64> = scores.iter().map(|f| f.y_hat).collect();
        let ls: Vec<u8> = scores.iter().map(|f| f.label).collect();
        history.push(EpochRecord {
            epoch,
            mean_loss: LossBreakdown::mean(&parts).total,
            val_auc,
            val_acc: accuracy(&ys, &ls, 0.5)?,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_auc >= *b) {
            best = Some((val_auc, epoch, det.clone()));
        }
    }
    if let Some(l) = log.as_mut() {
        l.flush()?;
    }
    let (best_val_auc, best_epoch, mut detector) = best.expect("at least one epoch");
    detector.round_to_f32()?;
    let checkpoint = match out_dir {
        Some(d) => {
            write_val_log(&d.join(VAL_LOG_FILE), &history)?;
            let p = d.join(CHECKPOINT_FILE);
            save_checkpoint(&detector, &p)?;
            Some(p)
        }
        None => None,
    };
    Ok(TrainOutcome {
        detector,
        best_epoch,
        best_val_auc,
        history,
        steps: step,
        checkpoint,
    })
}
