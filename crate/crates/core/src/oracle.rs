//! Brute-force references: finite-difference gradients, central-difference
//! Hessian-vector products and dense Hessians.
//!
//! These are slow (O(d) or O(d²) evaluations) and never run inside an attack
//! loop. They exist to check the fast paths.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attack::forward_difference_hvp;
use crate::error::{Error, Result};
use crate::objective::InputLoss;
use crate::tensor::norm_l2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Forward,
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub h: f64,
    pub scheme: Scheme,
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            scheme: Scheme::Central,
            tolerance: 1e-6,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(Error::arg("oracle step h must be positive"));
        }
        Ok(())
    }
}

fn shifted(x: &[f64], i: usize, by: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    p[i] += by;
    p
}

/// Central differences `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h`.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| (f(&shifted(x, i, h)) - f(&shifted(x, i, -h))) / (2.0 * h))
        .collect()
}

/// Gradient by the scheme in `cfg`.
pub fn fd_gradient_with<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    cfg: &OracleConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    Ok(match cfg.scheme {
        Scheme::Central => fd_gradient(f, x, cfg.h),
        Scheme::Forward => {
            let f0 = f(x);
            (0..x.len())
                .map(|i| (f(&shifted(x, i, cfg.h)) - f0) / cfg.h)
                .collect()
        }
    })
}

/// `(∇f(x+h·v) − ∇f(x−h·v)) / 2h` with reverse-mode gradients.
pub fn oracle_hvp<O: InputLoss + ?Sized>(
    obj: &O,
    x: &[f64],
    class: usize,
    v: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if norm_l2(v) == 0.0 {
        return Err(Error::arg("direction v must be non-zero"));
    }
    if !(h > 0.0) {
        return Err(Error::arg("h must be positive"));
    }
    let plus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let (_, gp) = obj.loss_grad(&plus, class);
    let (_, gm) = obj.loss_grad(&minus, class);
    Ok(gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect())
}

/// Dense Hessian (row-major) from the 3×3 grid of evaluations around each
/// coordinate pair: second differences on the diagonal, the four-corner
/// cross stencil off it.
pub fn dense_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let d = x.len();
    let f0 = f(x);
    let mut hess = vec![0.0; d * d];
    for i in 0..d {
        let fp = f(&shifted(x, i, h));
        let fm = f(&shifted(x, i, -h));
        hess[i * d + i] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in (i + 1)..d {
            let at = |si: f64, sj: f64| {
                let mut p = x.to_vec();
                p[i] += si * h;
                p[j] += sj * h;
                f(&p)
            };
            let v = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
            hess[i * d + j] = v;
            hess[j * d + i] = v;
        }
    }
    hess
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvpErrorPoint {
    pub k: f64,
    pub mean_error: f64,
}

/// For each `k`, the mean over `points` of `‖forward-difference HVP(k) −
/// oracle HVP‖₂`, both along the normalized gradient at the point.
///
/// Points whose gradient norm is below the forward-difference cutoff are
/// skipped.
pub fn hvp_error_curve<O: InputLoss + ?Sized>(
    obj: &O,
    points: &[(Vec<f64>, usize)],
    ks: &[f64],
    oracle_h: f64,
) -> Result<Vec<HvpErrorPoint>> {
    if ks.iter().any(|k| !(*k > 0.0)) {
        return Err(Error::arg("every k must be positive"));
    }
    if ks.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::arg("ks must be strictly descending"));
    }
    let mut prepared = Vec::with_capacity(points.len());
    for (x, class) in points {
        let (_, g) = obj.loss_grad(x, *class);
        let n = norm_l2(&g);
        if n < crate::attack::MIN_GRAD_NORM {
            continue;
        }
        let u: Vec<f64> = g.iter().map(|v| v / n).collect();
        let exact = oracle_hvp(obj, x, *class, &u, oracle_h)?;
        prepared.push((x, *class, g, exact));
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let total: f64 = prepared
                .iter()
                .map(|(x, class, g, exact)| {
                    let est =
                        forward_difference_hvp(obj, x, *class, g, k).expect("norm checked above");
                    let diff: Vec<f64> = est.iter().zip(exact).map(|(a, b)| a - b).collect();
                    norm_l2(&diff)
                })
                .sum();
            HvpErrorPoint {
                k,
                mean_error: if prepared.is_empty() {
                    0.0
                } else {
                    total / prepared.len() as f64
                },
            }
        })
        .collect())
}

/// CSV with columns `k,mean_error`.
pub fn write_error_curve_csv<W: Write>(curve: &[HvpErrorPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k", "mean_error"])?;
    for p in curve {
        out.write_record([p.k.to_string(), p.mean_error.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{AffineLoss, QuadraticLoss};

    #[test]
    fn affine_gradient_is_exact() {
        let a = [0.5, -0.25, 2.0];
        let f = |x: &[f64]| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
        assert_eq!(fd_gradient(f, &[0.0, 0.0, 0.0], 0.5), a.to_vec());
    }

    #[test]
    fn constant_has_zero_gradient() {
        assert_eq!(fd_gradient(|_| 3.0, &[0.2, 0.9], 1e-3), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_scheme_is_first_order() {
        let f = |x: &[f64]| x[0] * x[0];
        let cfg = OracleConfig {
            h: 1e-3,
            scheme: Scheme::Forward,
            ..OracleConfig::default()
        };
        let g = fd_gradient_with(f, &[1.0], &cfg).unwrap();
        assert!((g[0] - 2.001).abs() < 1e-9);
    }

    #[test]
    fn quadratic_hvp_exact() {
        let q = QuadraticLoss::symmetric(3, &[2.0, 0.5, -1.0, 0.5, 1.0, 0.0, -1.0, 0.0, 4.0]);
        let v = [0.3, -0.7, 0.2];
        let hv = oracle_hvp(&q, &[0.1, 0.2, 0.3], 0, &v, 1e-3).unwrap();
        for (a, b) in hv.iter().zip(q.matvec(&v)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn affine_hvp_zero_and_zero_direction_rejected() {
        let f = AffineLoss {
            a: vec![1.0, 2.0],
            c: 0.0,
        };
        assert_eq!(
            oracle_hvp(&f, &[0.0, 0.0], 0, &[1.0, 0.0], 1e-3).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(oracle_hvp(&f, &[0.0, 0.0], 0, &[0.0, 0.0], 1e-3).is_err());
    }

    #[test]
    fn dense_hessian_of_quadratic() {
        let q = QuadraticLoss::symmetric(2, &[3.0, 1.0, 1.0, -2.0]);
        let h = dense_hessian(|x| q.loss(x, 0), &[0.4, 0.1], 1e-3);
        for (a, b) in h.iter().zip(&q.a) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn error_curve_rejects_bad_ks() {
        let q = QuadraticLoss::symmetric(1, &[1.0]);
        assert!(hvp_error_curve(&q, &[], &[0.1, 0.2], 1e-4).is_err());
        assert!(hvp_error_curve(&q, &[], &[0.1, 0.0], 1e-4).is_err());
    }
}
