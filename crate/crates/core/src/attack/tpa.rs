//! Flatness-penalized attack gradient.
//!
//! The objective minimized over δ is
//!
//! ```text
//! -L(x+δ, y) + λ · E_{Δ~U(-b,b)} ‖∇L(x+δ+Δ, y)‖₂
//! ```
//!
//! Its gradient needs `H(p)·u` at every sampled neighbor `p = x+δ+Δᵢ`, with
//! `u = ∇L(p)/‖∇L(p)‖₂`. That product is replaced by the forward difference
//! `(∇L(p + k·u) − ∇L(p)) / k`, which costs one extra gradient per sample.

use rand::Rng;

use super::{AttackConfig, Goal};
use crate::data::clip_to_domain;
use crate::error::{Error, Result};
use crate::objective::InputLoss;
use crate::tensor::norm_l2;

/// Gradient norms below this leave the direction `u` undefined; such a
/// sample contributes nothing to the curvature term.
pub const MIN_GRAD_NORM: f64 = 1e-12;

/// Forward-difference estimate of `H(point)·u` along the normalized gradient.
///
/// Returns `None` when `‖grad‖₂ < MIN_GRAD_NORM`.
pub fn forward_difference_hvp<O: InputLoss + ?Sized>(
    obj: &O,
    point: &[f64],
    class: usize,
    grad: &[f64],
    k: f64,
) -> Option<Vec<f64>> {
    let norm = norm_l2(grad);
    if norm < MIN_GRAD_NORM {
        return None;
    }
    let shifted: Vec<f64> = point
        .iter()
        .zip(grad)
        .map(|(p, g)| p + k * (g / norm))
        .collect();
    let (_, g_shifted) = obj.loss_grad(&shifted, class);
    Some(
        g_shifted
            .iter()
            .zip(grad)
            .map(|(a, b)| (a - b) / k)
            .collect(),
    )
}

/// Draws `n` offsets with coordinates uniform in `[-b, b]`.
pub fn sample_neighbors<R: Rng>(rng: &mut R, dim: usize, n: usize, b: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| b * (2.0 * rng.gen::<f64>() - 1.0))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpaGradient {
    /// Loss of the attacked class at `clip(x+δ)`.
    pub loss: f64,
    /// Descent direction of the penalized objective.
    pub descent: Vec<f64>,
    /// Mean neighbor gradient norm `(1/N) Σᵢ ‖∇L(x+δ+Δᵢ)‖₂`.
    pub surrogate: f64,
    pub gradient_evaluations: u64,
}

/// Descent gradient of the penalized objective at `clip(x+δ)`.
///
/// Untargeted: `-∇L(x+δ, y) + (λ/N) Σᵢ Ĥᵢuᵢ`. Targeted runs minimize the
/// target-class loss instead, so the first term flips sign while the
/// penalty keeps acting on the target-class gradients.
pub fn tpa_gradient<O: InputLoss + ?Sized, R: Rng>(
    obj: &O,
    x: &[f64],
    delta: &[f64],
    y: usize,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<TpaGradient> {
    cfg.validate()?;
    if x.len() != obj.input_dim() || delta.len() != x.len() {
        return Err(Error::Dimension {
            expected: obj.input_dim(),
            got: if x.len() != obj.input_dim() {
                x.len()
            } else {
                delta.len()
            },
        });
    }
    let goal = Goal::resolve(y, cfg)?;
    let point: Vec<f64> =
        clip_to_domain(&x.iter().zip(delta).map(|(a, b)| a + b).collect::<Vec<_>>());
    Ok(tpa_gradient_at(obj, &point, goal, cfg, rng))
}

pub(crate) fn tpa_gradient_at<O: InputLoss + ?Sized, R: Rng>(
    obj: &O,
    point: &[f64],
    goal: Goal,
    cfg: &AttackConfig,
    rng: &mut R,
) -> TpaGradient {
    let (loss, g0) = obj.loss_grad(point, goal.class);
    let mut evals = 1;
    let mut descent: Vec<f64> = g0.iter().map(|g| -(goal.ascent_sign * g)).collect();

    let offsets = sample_neighbors(rng, point.len(), cfg.n_samples, cfg.b);
    let mut norm_sum = 0.0;
    let mut curvature = vec![0.0; point.len()];
    for offset in &offsets {
        let neighbor: Vec<f64> = point.iter().zip(offset).map(|(p, o)| p + o).collect();
        let (_, g) = obj.loss_grad(&neighbor, goal.class);
        evals += 1;
        norm_sum += norm_l2(&g);
        if cfg.lambda == 0.0 {
            continue;
        }
        if let Some(hvp) = forward_difference_hvp(obj, &neighbor, goal.class, &g, cfg.k) {
            evals += 1;
            for (c, h) in curvature.iter_mut().zip(&hvp) {
                *c += h;
            }
        }
    }
    if cfg.lambda != 0.0 {
        let weight = cfg.lambda / cfg.n_samples as f64;
        for (d, c) in descent.iter_mut().zip(&curvature) {
            *d += weight * c;
        }
    }
    TpaGradient {
        loss,
        descent,
        surrogate: norm_sum / cfg.n_samples as f64,
        gradient_evaluations: evals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackKind;
    use crate::objective::{AffineLoss, QuadraticLoss};
    use crate::rng::substream;

    fn cfg(lambda: f64, k: f64, n: usize, b: f64) -> AttackConfig {
        AttackConfig {
            lambda,
            k,
            n_samples: n,
            b,
            ..AttackConfig::published_defaults(AttackKind::Tpa)
        }
    }

    #[test]
    fn lambda_zero_is_negated_gradient() {
        let q = QuadraticLoss::symmetric(3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.3, 0.0, 0.3, 3.0]);
        let x = [0.2, 0.4, 0.6];
        let delta = [0.01, -0.02, 0.0];
        let out = tpa_gradient(
            &q,
            &x,
            &delta,
            0,
            &cfg(0.0, 0.05, 10, 0.06),
            &mut substream(1, &[]),
        )
        .unwrap();
        let p: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let (_, g) = q.loss_grad(&p, 0);
        for (d, gi) in out.descent.iter().zip(&g) {
            assert_eq!(*d, -gi);
        }
    }

    #[test]
    fn affine_loss_has_no_curvature_term() {
        let a = vec![0.3, -1.2, 0.7, 2.0];
        let f = AffineLoss {
            a: a.clone(),
            c: 0.1,
        };
        let x = [0.5; 4];
        for (k, n, b) in [(0.05, 10, 0.06), (1e-3, 3, 0.0), (0.7, 25, 0.3)] {
            let out = tpa_gradient(
                &f,
                &x,
                &[0.0; 4],
                0,
                &cfg(5.0, k, n, b),
                &mut substream(2, &[]),
            )
            .unwrap();
            let neg: Vec<f64> = a.iter().map(|v| -v).collect();
            assert_eq!(out.descent, neg);
            assert!((out.surrogate - norm_l2(&a)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_neighbors_are_dropped() {
        let f = AffineLoss {
            a: vec![0.0; 3],
            c: 0.0,
        };
        let out = tpa_gradient(
            &f,
            &[0.5; 3],
            &[0.0; 3],
            0,
            &cfg(5.0, 0.05, 4, 0.1),
            &mut substream(3, &[]),
        )
        .unwrap();
        assert_eq!(out.descent, vec![0.0; 3]);
        assert_eq!(out.gradient_evaluations, 5);
    }

    #[test]
    fn zero_width_neighborhood_samples_the_point_itself() {
        let mut rng = substream(4, &[]);
        for offset in sample_neighbors(&mut rng, 5, 3, 0.0) {
            assert!(offset.iter().all(|v| *v == 0.0));
        }
    }
}
