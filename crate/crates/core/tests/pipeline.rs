use std::path::Path;

use msba_clip::dataset::{generate_synthetic_corpus, BatchIterator, Corpus, Split, SyntheticConfig};
use msba_clip::harness::optim::clip_grad_norm;
use msba_clip::harness::train::{CHECKPOINT_FILE, LOSS_LOG_FILE, RESOLVED_CONFIG_FILE, VAL_LOG_FILE};
use msba_clip::harness::{
    accuracy, auc, evaluate, export_intensity_maps, materialize, read_scores_csv, train, write_scores_csv, AdamW,
    TrainConfig,
};
use msba_clip::model::{load_checkpoint, Detector, ModelConfig};
use msba_clip::msba::read_raw_map;
use msba_clip::Error;

fn tiny_corpus(dir: &Path, groups: usize, seed: u64) -> Corpus {
    let mut sc = SyntheticConfig::new(groups, (16, 16), seed);
    sc.patch_size = 4;
    let m = generate_synthetic_corpus(&sc, dir).unwrap();
    Corpus::load(&m).unwrap()
}

fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::toy();
    c.model = ModelConfig::tiny();
    c.batch_size = 4;
    c.epochs = 1;
    c
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn one_epoch_on_ten_images_writes_checkpoint_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(&dir.path().join("data"), 20, 5);
    let keep: Vec<String> = corpus.manifest.groups(Split::Train).into_iter().take(2).collect();
    let corpus = corpus.filtered(|r| r.split != Split::Train || keep.contains(&r.group_id)).unwrap();
    assert_eq!(corpus.manifest.split_records(Split::Train).count(), 10);

    let out = dir.path().join("run");
    let o = train(&tiny_config(), &corpus, Some(&out)).unwrap();
    // 10 samples per epoch in batches of 4.
    assert_eq!(o.steps, 3);
    assert!(out.join(CHECKPOINT_FILE).is_file());
    assert!(out.join(RESOLVED_CONFIG_FILE).is_file());
    assert_eq!(lines(&out.join(LOSS_LOG_FILE)), 1 + 3);
    assert_eq!(lines(&out.join(VAL_LOG_FILE)), 1 + 1);
    let back = load_checkpoint(&out.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(back.params.flatten(), o.detector.params.flatten());
}

#[test]
fn fixed_batch_loss_decreases_over_fifty_steps() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = SyntheticConfig::new(12, (64, 64), 3);
    sc.patch_size = 8;
    let corpus = Corpus::load(&generate_synthetic_corpus(&sc, dir.path()).unwrap()).unwrap();
    let config = TrainConfig::toy();
    let mut det = Detector::new(config.model.clone(), 1).unwrap();
    let it = BatchIterator::new(&corpus.manifest, Split::Train, 6, config.batch_composition, 2).unwrap();
    let batch: Vec<_> = it.epoch(0)[0]
        .iter()
        .map(|r| materialize(&det, &config, corpus.group(&r.group_id, Split::Train).unwrap(), r).unwrap())
        .collect();
    let mut opt = AdamW::new(&det.params, config.weight_decay);
    let mut losses = Vec::new();
    for _ in 0..50 {
        let (b, mut g) = det.batch_loss_and_grads(&batch, &config.loss_weights).unwrap();
        clip_grad_norm(&mut g, &det.params, 1.0);
        opt.step(&mut det.params, &g, config.lr_init).unwrap();
        losses.push(b.total);
    }
    let smoothed: Vec<f64> = losses.chunks(10).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for w in smoothed.windows(2) {
        assert!(w[1] < w[0], "smoothed loss {smoothed:?}");
    }
    assert!(smoothed[4] < 0.5 * smoothed[0], "smoothed loss {smoothed:?}");
}

#[test]
fn report_matches_score_file_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 30, 8);
    let det = Detector::new(ModelConfig::tiny(), 4).unwrap();
    let (report, scores) = evaluate(&det, &corpus, Split::Test).unwrap();
    let path = dir.path().join("scores.csv");
    write_scores_csv(&scores, &path).unwrap();

    let text = std::fs::read_to_string(&path).unwrap();
    let mut y = Vec::new();
    let mut s = Vec::new();
    let mut videos: std::collections::BTreeMap<(String, String, String), (f64, usize)> = Default::default();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (id, group, label, y_hat) = (f[0], f[1], f[2].parse::<u8>().unwrap(), f[3].parse::<f64>().unwrap());
        y.push(label);
        s.push(y_hat);
        let method = corpus.manifest.record(id).unwrap().method.map(|m| m.to_string()).unwrap_or_default();
        let e = videos.entry((group.to_string(), label.to_string(), method)).or_default();
        e.0 += y_hat;
        e.1 += 1;
    }
    assert_eq!(report.n_frames, y.len());
    assert_eq!(report.frame_auc, auc(&s, &y).unwrap());
    assert_eq!(report.frame_acc, accuracy(&s, &y, 0.5).unwrap());
    let vy: Vec<u8> = videos.keys().map(|k| k.1.parse().unwrap()).collect();
    let vs: Vec<f64> = videos.values().map(|(sum, n)| sum / *n as f64).collect();
    assert_eq!(report.n_videos, vs.len());
    assert!((report.video_auc - auc(&vs, &vy).unwrap()).abs() < 1e-12);

    let back = read_scores_csv(&path, Some(&corpus.manifest.records)).unwrap();
    assert_eq!(back, scores);
}

#[test]
fn exported_png_matches_raw_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(&dir.path().join("data"), 10, 2);
    let det = Detector::new(ModelConfig::tiny(), 6).unwrap();
    let real = corpus.manifest.split_records(Split::Train).find(|r| r.method.is_none()).unwrap().id.clone();
    let fake = corpus.manifest.split_records(Split::Train).find(|r| r.method.is_some()).unwrap().id.clone();
    let out = dir.path().join("maps");
    export_intensity_maps(&det, &corpus, &[real.clone(), fake.clone()], &out).unwrap();

    let gt = read_raw_map(&out.join(format!("{real}_gt.fimp"))).unwrap();
    assert!(gt.values.data.iter().all(|v| *v == 0.0));

    for id in [&real, &fake] {
        for kind in ["gt", "pred"] {
            let raw = read_raw_map(&out.join(format!("{id}_{kind}.fimp"))).unwrap();
            let png = image::open(out.join(format!("{id}_{kind}.png"))).unwrap().into_luma16();
            assert_eq!((png.height() as usize, png.width() as usize), (raw.values.height, raw.values.width));
            for (p, v) in png.pixels().zip(&raw.values.data) {
                let expect = (v * 5.0 * 65535.0).round().clamp(0.0, 65535.0) as u16;
                assert_eq!(p.0[0], expect);
            }
        }
    }
    let fake_gt = read_raw_map(&out.join(format!("{fake}_gt.fimp"))).unwrap();
    assert!(fake_gt.values.data.iter().any(|v| *v > 0.0));
    assert!(export_intensity_maps(&det, &corpus, &["nope".to_string()], &out).is_err());
}

#[test]
fn filtered_corpus_drops_a_method() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 10, 1);
    let f = corpus.filtered(|r| r.method != Some(2)).unwrap();
    assert_eq!(f.num_methods(), corpus.num_methods());
    for split in [Split::Train, Split::Val, Split::Test] {
        assert_eq!(f.split_groups(split).count(), corpus.split_groups(split).count());
        for g in f.split_groups(split) {
            assert!(g.fakes.iter().all(|x| x.method != 2));
            assert_eq!(g.fakes.len(), 3);
        }
    }
    let dangling = corpus.filtered(|r| r.method.is_some() || r.split != Split::Test);
    assert!(matches!(dangling, Err(Error::DanglingGroup { .. })));
}
