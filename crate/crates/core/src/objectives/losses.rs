//! Scalar loss primitives and their derivatives.

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Mat};

/// Probability clamp used by every cross-entropy term.
pub const BCE_EPS: f64 = 1e-7;
/// Floor applied to predicted blend weights before taking logs.
pub const KL_EPS: f64 = 1e-8;
/// Tolerance for accepting a vector as lying on the probability simplex.
pub const SIMPLEX_TOL: f64 = 1e-6;

fn check_label(y: f64) -> Result<()> {
    if y == 0.0 || y == 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("label must be 0 or 1, got {y}")))
    }
}

/// Binary cross-entropy with `p` clamped to `[ε, 1-ε]`.
pub fn bce(p: f64, y: f64) -> Result<f64> {
    check_label(y)?;
    if !p.is_finite() {
        return Err(Error::NonFinite("bce probability".into()));
    }
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
}

/// d bce / d p; zero where the clamp is active.
pub fn bce_grad(p: f64, y: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

/// BCE on `sigmoid(kappa · s)`.
pub fn similarity_loss(s: f64, y: f64, kappa: f64) -> Result<f64> {
    if !s.is_finite() || !kappa.is_finite() {
        return Err(Error::NonFinite("similarity loss input".into()));
    }
    bce(sigmoid(kappa * s), y)
}

#[inline]
fn huber(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

/// Mean smooth-L1 (transition at 1) between equally shaped maps.
pub fn smooth_l1(pred: &Mat, target: &Mat) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "smooth_l1: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("smooth_l1 on empty maps"));
    }
    let sum: f64 = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| huber(p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn smooth_l1_grad(pred: &Mat, target: &Mat) -> Mat {
    let n = pred.len() as f64;
    let data = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| {
            let d = p - t;
            let g = if d.abs() < 1.0 { d } else { d.signum() };
            g / n
        })
        .collect();
    Mat::from_vec(pred.rows, pred.cols, data)
}

pub fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(format!("{what}: empty distribution")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    let sum: f64 = v.iter().sum();
    if v.iter().any(|&x| x < -SIMPLEX_TOL) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!(
            "{what} is not on the probability simplex (sum {sum})"
        )));
    }
    Ok(())
}

fn floored(alpha_hat: &[f64]) -> (Vec<f64>, f64) {
    let q: Vec<f64> = alpha_hat.iter().map(|&p| p.max(KL_EPS)).collect();
    let z = q.iter().sum();
    (q, z)
}

/// `KL(alpha ‖ alpha_hat)` with `alpha_hat` floored at `KL_EPS` and
/// renormalised; zero entries of `alpha` contribute nothing.
pub fn kl_weights(alpha: &[f64], alpha_hat: &[f64]) -> Result<f64> {
    if alpha.len() != alpha_hat.len() {
        return Err(Error::shape(format!(
            "kl_weights: {} vs {} components",
            alpha.len(),
            alpha_hat.len()
        )));
    }
    check_simplex(alpha, "target blend weights")?;
    check_simplex(alpha_hat, "predicted blend weights")?;
    let (q, z) = floored(alpha_hat);
    let mut kl = 0.0;
    for (&a, &qi) in alpha.iter().zip(&q) {
        if a > 0.0 {
            kl += a * (a / (qi / z)).ln();
        }
    }
    // Floating error can push an exact match a hair below zero.
    Ok(kl.max(0.0))
}

/// Gradient of [`kl_weights`] with respect to the unfloored `alpha_hat`.
pub fn kl_weights_grad(alpha: &[f64], alpha_hat: &[f64]) -> Vec<f64> {
    let (q, z) = floored(alpha_hat);
    let mass: f64 = alpha.iter().sum();
    alpha
        .iter()
        .zip(&q)
        .zip(alpha_hat)
        .map(|((&a, &qi), &p)| {
            if p > KL_EPS {
                -a / qi + mass / z
            } else {
                0.0
            }
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean cosine similarity between `v` and each row of `targets`.
pub fn mean_cosine(v: &[f64], targets: &Mat) -> Result<f64> {
    if targets.cols != v.len() {
        return Err(Error::shape(format!(
            "cosine: vector width {} vs prompt width {}",
            v.len(),
            targets.cols
        )));
    }
    if targets.rows == 0 {
        return Err(Error::invalid("cosine: no prompt features"));
    }
    let nv = norm(v);
    if nv == 0.0 || !nv.is_finite() {
        return Err(Error::ZeroNorm("projected class feature".into()));
    }
    let mut sum = 0.0;
    for r in 0..targets.rows {
        let t = targets.row(r);
        let nt = norm(t);
        if nt == 0.0 {
            return Err(Error::ZeroNorm(format!("prompt feature {r}")));
        }
        let dot: f64 = t.iter().zip(v).map(|(a, b)| a * b).sum();
        sum += (dot / (nt * nv)).clamp(-1.0, 1.0);
    }
    Ok(sum / targets.rows as f64)
}

pub fn mean_cosine_grad(v: &[f64], targets: &Mat) -> Vec<f64> {
    let nv = norm(v);
    let l = targets.rows as f64;
    let mut g = vec![0.0; v.len()];
    for r in 0..targets.rows {
        let t = targets.row(r);
        let nt = norm(t);
        let dot: f64 = t.iter().zip(v).map(|(a, b)| a * b).sum();
        for k in 0..v.len() {
            g[k] += (t[k] / (nt * nv) - dot * v[k] / (nt * nv * nv * nv)) / l;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_edges() {
        assert!(bce(1.0 - BCE_EPS, 1.0).unwrap() < 1e-6);
        assert!((bce(0.5, 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce(0.5, 0.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce(0.3, 0.5).is_err());
        assert!(bce(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn similarity_loss_values() {
        for y in [0.0, 1.0] {
            assert!((similarity_loss(0.0, y, 10.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        }
        let l = similarity_loss(1.0, 1.0, 10.0).unwrap();
        assert!((l - 4.539_889_921_686_464e-5).abs() < 1e-12, "{l}");
        let mut prev = f64::INFINITY;
        for i in 0..=40 {
            let s = -1.0 + i as f64 * 0.05;
            let l = similarity_loss(s, 1.0, 10.0).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn smooth_l1_values() {
        let z = Mat::zeros(1, 1);
        assert_eq!(smooth_l1(&Mat::scalar(0.5), &z).unwrap(), 0.125);
        assert_eq!(smooth_l1(&Mat::scalar(2.0), &z).unwrap(), 1.5);
        let m = Mat::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(smooth_l1(&m, &m).unwrap(), 0.0);
        assert!(smooth_l1(&m, &Mat::zeros(1, 4)).is_err());
    }

    #[test]
    fn kl_values() {
        let a = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(kl_weights(&a, &a).unwrap(), 0.0);
        let k = kl_weights(&[1.0, 0.0, 0.0, 0.0], &[0.25; 4]).unwrap();
        assert!((k - 4f64.ln()).abs() < 1e-12);
        assert!(kl_weights(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(kl_weights(&[0.5, 0.5], &[0.5, 0.25, 0.25]).is_err());
        // A zero prediction under a positive target stays finite.
        assert!(kl_weights(&[0.5, 0.5], &[1.0, 0.0]).unwrap().is_finite());
    }

    #[test]
    fn cosine_edges() {
        let t = Mat::from_vec(1, 2, vec![1.0, 0.0]);
        assert!((mean_cosine(&[3.0, 0.0], &t).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(mean_cosine(&[0.0, 2.0], &t).unwrap(), 0.0);
        assert!(matches!(mean_cosine(&[0.0, 0.0], &t), Err(Error::ZeroNorm(_))));
    }
}
