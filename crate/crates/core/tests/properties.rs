use msba_clip::dataset::Image;
use msba_clip::harness::{accuracy, auc, cosine_lr, group_scores};
use msba_clip::msba::{blend_maps, sample_blend_weights, synthesize, to_patch_targets, BlendSpec, IntensityMap};
use msba_clip::objectives::losses::kl_weights;
use msba_clip::seed;
use proptest::prelude::*;

fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &sp) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sn) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if sp > sn {
                num += 1.0;
            } else if sp == sn {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Scores on a coarse grid so ties are common; both classes present.
fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..=64)
        .prop_flat_map(|n| (prop::collection::vec(0u8..12, n), prop::collection::vec(0u8..=1, n)))
        .prop_map(|(s, mut y)| {
            y[0] = 0;
            y[1] = 1;
            (s.into_iter().map(|v| v as f64 / 11.0).collect(), y)
        })
}

fn simplex(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, m).prop_map(|v| {
        let v: Vec<f64> = v.into_iter().map(|x| x + 1e-3).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn map(h: usize, w: usize, seed: u64) -> IntensityMap {
    use rand::Rng;
    let mut rng = seed::rng(seed);
    IntensityMap {
        values: Image::from_vec(h, w, 3, (0..h * w * 3).map(|_| rng.random::<f64>() * 0.5).collect()).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_equals_pair_count((s, y) in scored()) {
        prop_assert_eq!(auc(&s, &y).unwrap(), pair_count_auc(&s, &y));
    }

    #[test]
    fn auc_monotone_invariant((s, y) in scored()) {
        let base = auc(&s, &y).unwrap();
        let affine: Vec<f64> = s.iter().map(|v| 2.0 * v + 1.0).collect();
        let cube: Vec<f64> = s.iter().map(|v| (v + 1.0).powi(3)).collect();
        let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        prop_assert_eq!(auc(&affine, &y).unwrap(), base);
        prop_assert_eq!(auc(&cube, &y).unwrap(), base);
        prop_assert_eq!(auc(&exp, &y).unwrap(), base);
    }

    #[test]
    fn accuracy_equals_loop((s, y) in scored(), t in 0.05f64..0.95) {
        let hits = s.iter().zip(&y).filter(|(v, l)| (**v >= t) == (**l == 1)).count();
        prop_assert_eq!(accuracy(&s, &y, t).unwrap(), hits as f64 / s.len() as f64);
    }

    #[test]
    fn single_frame_groups_keep_frame_scores((s, y) in scored()) {
        let keys: Vec<usize> = (0..s.len()).collect();
        for (k, mean, label) in group_scores(&keys, &s, &y).unwrap() {
            prop_assert_eq!(mean, s[k]);
            prop_assert_eq!(label, y[k]);
        }
    }

    #[test]
    fn dirichlet_draws_on_simplex(m in 1usize..9, beta in 0.05f64..5.0, s in any::<u64>()) {
        let a = sample_blend_weights(m, beta, &mut seed::rng(s)).unwrap();
        prop_assert_eq!(a.len(), m);
        prop_assert!(a.iter().all(|v| *v >= 0.0));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn blended_map_is_convex(alpha in simplex(4), s in any::<u64>()) {
        let maps: Vec<IntensityMap> = (0..4).map(|i| map(6, 5, s.wrapping_add(i))).collect();
        let b = blend_maps(&maps, &alpha).unwrap();
        for (k, v) in b.values.data.iter().enumerate() {
            let lo = maps.iter().map(|m| m.values.data[k]).fold(f64::INFINITY, f64::min);
            let hi = maps.iter().map(|m| m.values.data[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    #[test]
    fn synthesized_pixels_stay_in_unit_range(alpha in simplex(3), lambda in 0.0f64..3.0, s in any::<u64>()) {
        let real = map(4, 4, s).values;
        let maps: Vec<IntensityMap> = (0..3).map(|i| map(4, 4, s ^ (i + 1))).collect();
        let out = synthesize(&real, &maps, &BlendSpec { alpha, lambda, beta: 1.0 }).unwrap();
        prop_assert!(out.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn gibbs_inequality(p in simplex(5), q in simplex(5)) {
        prop_assert!(kl_weights(&p, &q).unwrap() >= 0.0);
        prop_assert!(kl_weights(&p, &p).unwrap() < 1e-12);
    }

    #[test]
    fn patch_targets_preserve_mean(s in any::<u64>(), g in prop::sample::select(vec![1usize, 2, 4, 8])) {
        let m = map(8, 8, s);
        let t = to_patch_targets(&m, (g, g)).unwrap();
        let a = t.data.iter().sum::<f64>() / t.data.len() as f64;
        prop_assert!((a - m.mean()).abs() < 1e-12);
    }

    #[test]
    fn cosine_schedule_monotone(total in 1usize..500, lr in 1e-6f64..1e-2, ratio in 0.0f64..1.0) {
        let lr_final = lr * ratio;
        let mut prev = f64::INFINITY;
        for step in 0..=total {
            let v = cosine_lr(step, total, lr, lr_final);
            prop_assert!(v <= prev + 1e-18);
            prop_assert!(v >= lr_final - 1e-18 && v <= lr + 1e-18);
            prev = v;
        }
        prop_assert_eq!(cosine_lr(0, total, lr, lr_final), lr);
        prop_assert_eq!(cosine_lr(total, total, lr, lr_final), lr_final);
    }
}
