use std::sync::Arc;

use rand::Rng;

use super::*;
use crate::objectives::gradcheck::grad_check;
use crate::seed;

fn tiny() -> Detector {
    Detector::new(ModelConfig::tiny(), 5).unwrap()
}

fn random_image(h: usize, w: usize, s: u64) -> Image {
    let mut rng = seed::rng(s);
    Image::from_vec(h, w, 3, (0..h * w * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn patch_tokens_shape_and_class_token() {
    let det = Detector::new(ModelConfig::toy(), 1).unwrap();
    let a = det.embed_patches(&random_image(64, 64, 1)).unwrap();
    let b = det.embed_patches(&random_image(64, 64, 2)).unwrap();
    assert_eq!(a.shape(), (65, 128));
    assert_eq!(a.row(0), b.row(0));
    assert!(det.embed_patches(&random_image(60, 64, 1)).is_err());
}

#[test]
fn mean_image_tokens_are_bias_plus_position() {
    let det = tiny();
    let grey = Image::from_vec(16, 16, 3, vec![0.5; 16 * 16 * 3]).unwrap();
    let t = det.embed_patches(&grey).unwrap();
    let bias = det.params.get(det.param_id("patch_embed.bias").unwrap());
    let pos = det.params.get(det.param_id("pos_embed").unwrap());
    for r in 1..t.rows {
        for c in 0..t.cols {
            assert_eq!(t.get(r, c), bias.data[c] + pos.get(r, c));
        }
    }
}

#[test]
fn text_features() {
    let det = tiny();
    let p = det.prompts.prompt(0).to_string();
    let a = det.encode_text(&p).unwrap();
    assert_eq!(a, det.encode_text(&p).unwrap());
    assert_eq!(a.len(), det.config.d_t);
    assert!(det.encode_text("").is_err());
}

#[test]
fn mip_properties() {
    let det = tiny();
    let zero = det.mip_project(&vec![0.0; 16]).unwrap();
    assert_eq!(zero.len(), 16);
    let f: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
    let a = det.mip_project(&f).unwrap();
    let b = det.mip_project(&f.iter().map(|v| v * 3.5).collect::<Vec<_>>()).unwrap();
    for (x, y) in a.iter().zip(&b) {
        // LayerNorm's epsilon makes the invariance approximate.
        assert!((x - y).abs() < 1e-4);
    }
    assert!(det.mip_project(&[f64::NAN; 16]).is_err());

    let w: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).cos()).collect();
    let analytic = det.mip_input_gradient(&f, &w).unwrap();
    let r = grad_check(
        |x| Ok(det.mip_project(x)?.iter().zip(&w).map(|(a, b)| a * b).sum()),
        &f,
        &analytic,
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{}", r.max_rel_err);
}

#[test]
fn fusion_depends_on_prompt_unless_blocked() {
    let det = tiny();
    let img = random_image(16, 16, 3);
    let tokens = det.embed_patches(&img).unwrap();
    let ta = det.mip_project(det.class_prompt_features().row(0)).unwrap();
    let tb = det.mip_project(det.class_prompt_features().row(1)).unwrap();
    let fa = det.fuse_and_encode(&tokens, &ta, false).unwrap();
    let fb = det.fuse_and_encode(&tokens, &tb, false).unwrap();
    assert_eq!(fa.cls.len(), 16);
    assert_eq!(fa.patches.shape(), (16, 16));
    let dist: f64 = fa.cls.iter().zip(&fb.cls).map(|(a, b)| (a - b).powi(2)).sum();
    assert!(dist > 0.0);
    let ba = det.fuse_and_encode(&tokens, &ta, true).unwrap();
    let bb = det.fuse_and_encode(&tokens, &tb, true).unwrap();
    assert_eq!(ba.cls, bb.cls);
    assert_eq!(ba.patches, bb.patches);
    assert!(det.fuse_and_encode(&tokens, &ta[..8], false).is_err());
}

#[test]
fn classify_is_affine() {
    let det = tiny();
    let b = det.params.get(det.param_id("head.bias").unwrap()).item();
    assert_eq!(det.classify(&[0.0; 16]).unwrap(), b);
    let x: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
    let y: Vec<f64> = (0..16).map(|i| 1.0 - i as f64 * 0.05).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
    let lhs = det.classify(&xy).unwrap();
    let rhs = det.classify(&x).unwrap() + det.classify(&y).unwrap() - b;
    assert!((lhs - rhs).abs() < 1e-12);
    assert!(det.classify(&[f64::INFINITY; 16]).is_err());
}

#[test]
fn similarity_oracles() {
    let det = tiny();
    let cls: Vec<f64> = (0..16).map(|i| (i as f64).cos()).collect();
    let s = det.similarity_score(&cls).unwrap();
    let p = det.project(&cls);
    let f = det.fake_prompt_features();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut expect = 0.0;
    for r in 0..f.rows {
        let dot: f64 = f.row(r).iter().zip(&p).map(|(a, b)| a * b).sum();
        expect += dot / (norm(f.row(r)) * norm(&p));
    }
    expect /= f.rows as f64;
    assert!((s - expect).abs() < 1e-12);
    assert!(s.abs() <= 1.0 + 1e-9);
    assert!(det.similarity_score(&[0.0; 16]).is_err());
}

#[test]
fn fused_prediction_rules() {
    assert_eq!(fused_prediction(0.0, 0.0, 10.0).unwrap(), 0.5);
    let lim = fused_prediction(60.0, 1.0, 10.0).unwrap();
    assert!((lim - 0.5 * (1.0 + sigmoid(10.0))).abs() < 1e-12);
    assert!((lim - 0.999_977_3).abs() < 1e-7);
    for zi in -5..=5 {
        let z = zi as f64;
        let mut prev = -1.0;
        for si in -10..=10 {
            let s = si as f64 / 10.0;
            let y = fused_prediction(z, s, 10.0).unwrap();
            assert!(y > prev);
            prev = y;
            let alt = sigmoid(z) + sigmoid(10.0 * s) >= 1.0;
            assert_eq!(y >= 0.5, alt);
        }
    }
    assert!(fused_prediction(f64::NAN, 0.0, 1.0).is_err());
}

#[test]
fn forward_contract_and_determinism() {
    let det = tiny();
    let img = random_image(16, 16, 9);
    let a = det.predict(&img).unwrap();
    let b = det.predict(&img).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a.fused_prob));
    assert!(a.s.abs() <= 1.0 + 1e-6);
    assert_eq!(a.features.patches.shape(), (16, 16));
    assert_eq!(a.features.text_token_out.len(), 16);
    let (o, maps, w) = det.predict_with_maps(&img).unwrap();
    assert_eq!(o, a);
    assert_eq!(maps.combined.shape(), (16, 16));
    assert_eq!(w.alpha_hat, vec![0.25; 4]);
    assert!(det.forward(&img, 99).is_err());
}

#[test]
fn batch_gradients_are_mean_of_sample_gradients() {
    let det = tiny();
    let samples: Vec<TrainSample> = (0..3)
        .map(|i| TrainSample {
            image: random_image(16, 16, 20 + i),
            label: (i % 2) as f64,
            prompt: det.prompts.unknown_index(),
            intensity_target: Mat::filled(16, 16, 0.05 * i as f64),
            alpha: (i % 2 == 1).then(|| vec![0.1, 0.2, 0.3, 0.4]),
        })
        .collect();
    let w = LossWeights::published();
    let (b, g) = det.batch_loss_and_grads(&samples, &w).unwrap();
    let mut total = 0.0;
    let mut acc = vec![0.0; det.params.numel()];
    for s in &samples {
        let (bi, gi) = det.sample_loss_and_grads(s, &w).unwrap();
        total += bi.total;
        for (a, v) in acc.iter_mut().zip(gi.flatten(&det.params)) {
            *a += v / 3.0;
        }
        let again = crate::objectives::total_loss(
            crate::objectives::LossTerms {
                l_cls: bi.l_cls,
                l_sim: bi.l_sim,
                l_int: bi.l_int,
                l_wgt: bi.l_wgt,
            },
            &w,
            s.alpha.is_some(),
        )
        .unwrap();
        assert!((again.total - bi.total).abs() < 1e-12);
    }
    assert!((b.total - total / 3.0).abs() < 1e-12);
    for (a, v) in acc.iter().zip(g.flatten(&det.params)) {
        assert!((a - v).abs() < 1e-12);
    }
}

#[test]
fn disabled_intensity_head_gets_no_gradient() {
    let det = tiny();
    let s = TrainSample {
        image: random_image(16, 16, 30),
        label: 1.0,
        prompt: 0,
        intensity_target: Mat::zeros(16, 16),
        alpha: Some(vec![1.0, 0.0, 0.0, 0.0]),
    };
    let (b, g) = det
        .sample_loss_and_grads(&s, &LossWeights::published().without_intensity_head())
        .unwrap();
    assert_eq!(b.l_int, 0.0);
    assert_eq!(b.l_wgt, 0.0);
    let id = det.param_id("mfie.pixel.weight").unwrap();
    assert!(g.get(id).is_none());
}

/// A frozen stand-in for a pretrained backbone.
struct StubStem;

impl PatchStem for StubStem {
    fn width(&self) -> usize {
        16
    }
    fn patch_size(&self) -> usize {
        4
    }
    fn embed(&self, image: &Image) -> Result<Mat> {
        let p = patchify(image, 4)?;
        let mut out = Mat::zeros(p.rows, 16);
        for r in 0..p.rows {
            for c in 0..16 {
                out.set(r, c, p.row(r)[c * 3 % p.cols] - 0.5);
            }
        }
        Ok(out)
    }
}

struct StubText;

impl TextEncoder for StubText {
    fn width(&self) -> usize {
        16
    }
    fn encode(&self, prompt: &str) -> Result<Vec<f64>> {
        let h = seed::fnv1a(prompt.as_bytes());
        Ok((0..16).map(|i| ((h >> (i * 4)) & 0xf) as f64 / 15.0 - 0.5).collect())
    }
}

#[test]
fn pluggable_backbone_keeps_contracts() {
    let mut cfg = ModelConfig::tiny();
    cfg.backbone = BackboneKind::Pretrained;
    assert!(Detector::new(cfg.clone(), 1).is_err());
    let det = Detector::with_backbone(cfg.clone(), 1, Arc::new(StubStem), Arc::new(StubText)).unwrap();
    assert!(det.param_id("patch_embed.weight").is_none());
    let img = random_image(16, 16, 40);
    let out = det.predict(&img).unwrap();
    assert!((0.0..=1.0).contains(&out.fused_prob));
    assert_eq!(out.features.patches.shape(), (16, 16));
    let s = TrainSample {
        image: img,
        label: 1.0,
        prompt: 0,
        intensity_target: Mat::zeros(16, 16),
        alpha: Some(vec![0.25; 4]),
    };
    let (_, g) = det.sample_loss_and_grads(&s, &LossWeights::published()).unwrap();
    assert!(g.get(det.param_id("blocks.0.attn.qkv.weight").unwrap()).is_some());
    assert!(save_checkpoint(&det, std::path::Path::new("/nonexistent/x")).is_err());

    let mut wide = cfg;
    wide.d_t = 8;
    wide.text_heads = 2;
    assert!(Detector::with_backbone(wide, 1, Arc::new(StubStem), Arc::new(StubText)).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut det = tiny();
    save_checkpoint(&det, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    det.round_to_f32().unwrap();
    assert_eq!(det.params.flatten(), back.params.flatten());
    assert_eq!(det.class_prompt_features(), back.class_prompt_features());
    let img = random_image(16, 16, 50);
    assert_eq!(det.predict(&img).unwrap(), back.predict(&img).unwrap());

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"MSBACKPT");
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}
