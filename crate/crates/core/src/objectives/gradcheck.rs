//! Central finite-difference gradient checking.

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub numeric: Vec<f64>,
}

/// Relative error `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Difference stencil for [`numeric_gradient_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error `O(h²)`.
    #[default]
    Central,
    /// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`, error `O(h⁴)`.
    /// Allows a larger `h`, which keeps round-off down when the objective is
    /// large relative to the gradient entries.
    FivePoint,
}

/// Central-difference gradient of `f` at `point`.
pub fn numeric_gradient<F>(f: F, point: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    numeric_gradient_with(f, point, eps, Stencil::Central)
}

pub fn numeric_gradient_with<F>(mut f: F, point: &[f64], eps: f64, stencil: Stencil) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut x = point.to_vec();
    let mut g = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        let mut at = |x: &mut Vec<f64>, t: f64| -> Result<f64> {
            x[i] = orig + t;
            let v = f(x)?;
            x[i] = orig;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite(format!("objective at coordinate {i}")))
            }
        };
        let d1 = at(&mut x, eps)? - at(&mut x, -eps)?;
        g.push(match stencil {
            Stencil::Central => d1 / (2.0 * eps),
            Stencil::FivePoint => {
                let d2 = at(&mut x, 2.0 * eps)? - at(&mut x, -2.0 * eps)?;
                (8.0 * d1 - d2) / (12.0 * eps)
            }
        });
    }
    Ok(g)
}

/// Compares an analytic gradient with central differences of `f`.
pub fn grad_check<F>(f: F, point: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    grad_check_with(f, point, analytic, eps, Stencil::Central)
}

pub fn grad_check_with<F>(
    f: F,
    point: &[f64],
    analytic: &[f64],
    eps: f64,
    stencil: Stencil,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != point.len() {
        return Err(Error::shape(format!(
            "gradient has {} entries for {} coordinates",
            analytic.len(),
            point.len()
        )));
    }
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    let numeric = numeric_gradient_with(f, point, eps, stencil)?;
    let (worst_index, max_rel_err) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheckReport {
        max_rel_err,
        worst_index,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = numeric_gradient(|x| Ok(x[0] * x[0]), &[3.0], DEFAULT_EPS).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-9);
        let r = grad_check(|x| Ok(x[0] * x[0]), &[3.0], &[6.0], DEFAULT_EPS).unwrap();
        assert!(r.max_rel_err < 1e-9);
    }

    #[test]
    fn sum_of_squares() {
        use rand::Rng;
        let mut rng = crate::seed::rng(4);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..1.5)).collect();
        let analytic: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = grad_check(|x| Ok(x.iter().map(|v| v * v).sum()), &x, &analytic, DEFAULT_EPS).unwrap();
        assert!(r.max_rel_err < 1e-10, "{}", r.max_rel_err);
    }

    #[test]
    fn five_point_is_fourth_order() {
        // d/dx sin at 0.7 with a coarse step; the five-point error is ~h⁴/30.
        let h = 1e-2;
        let c = numeric_gradient_with(|x| Ok(x[0].sin()), &[0.7], h, Stencil::Central).unwrap()[0];
        let p = numeric_gradient_with(|x| Ok(x[0].sin()), &[0.7], h, Stencil::FivePoint).unwrap()[0];
        let exact = 0.7f64.cos();
        assert!((c - exact).abs() > 1e-6);
        assert!((p - exact).abs() < 1e-9, "{}", (p - exact).abs());
    }

    #[test]
    fn flags_a_wrong_gradient() {
        let r = grad_check(|x| Ok(x[0].sin()), &[0.4], &[0.4f64.cos() * 1.01], DEFAULT_EPS).unwrap();
        assert!(r.max_rel_err > 1e-3);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(numeric_gradient(|x| Ok(x[0].ln()), &[0.0], DEFAULT_EPS).is_err());
        assert!(grad_check(|x| Ok(x[0]), &[1.0], &[f64::NAN], DEFAULT_EPS).is_err());
    }
}
