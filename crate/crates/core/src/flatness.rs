//! Empirical evaluation of the transferability bound.
//!
//! For a proxy `F` and target `F'`, the transfer gap is
//! `D(x,y) = L(F'(x),y) − L(F(x),y)`. The bound on `E[D(x+δ,y)²]` is the
//! sum of three nonnegative components:
//!
//! ```text
//! model_diff   = E[D(x,y)² + C·‖δ‖²·‖∇D(x,y)‖²]
//! first_order  = (1+C)·E[‖δ‖²·‖∇ log F(x+δ)[y]‖²]
//! second_order = 2·E[‖δ‖²·Σᵢ |∂ᵢ² log F(x+δ)[y]|]
//! ```
//!
//! With `K` their sum, the companion claim is
//! `L(F'(x+δ),y)² ≥ |L(F(x+δ),y)² − K|`. Scalar losses are squared directly.
//! Expectations are empirical means over the supplied examples.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::sample_neighbors;
use crate::data::{clip_to_domain, Dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::objective::InputLoss;
use crate::rng;
use crate::tensor::{dot, norm_l2};

fn check_pair(proxy: &Model, target: &Model, x: &[f64], y: usize) -> Result<()> {
    for m in [proxy, target] {
        if x.len() != m.input_dim() {
            return Err(Error::Dimension {
                expected: m.input_dim(),
                got: x.len(),
            });
        }
        if y >= m.n_classes() {
            return Err(Error::ClassIndex {
                index: y,
                n_classes: m.n_classes(),
            });
        }
    }
    Ok(())
}

/// `L(target(x), y) − L(proxy(x), y)`.
pub fn transfer_gap(proxy: &Model, target: &Model, x: &[f64], y: usize) -> Result<f64> {
    check_pair(proxy, target, x, y)?;
    Ok(target.loss(x, y) - proxy.loss(x, y))
}

/// `∇ₓL(target(x), y) − ∇ₓL(proxy(x), y)`.
pub fn grad_transfer_gap(proxy: &Model, target: &Model, x: &[f64], y: usize) -> Result<Vec<f64>> {
    check_pair(proxy, target, x, y)?;
    let (_, gt) = target.loss_grad(x, y);
    let (_, gp) = proxy.loss_grad(x, y);
    Ok(gt.iter().zip(&gp).map(|(a, b)| a - b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagCurvature {
    /// `Σᵢ |∂ᵢ² log p_y|` over all coordinates.
    pub total: f64,
    /// Part of `total` from coordinates whose stencil crosses a ReLU kink.
    pub kink_adjacent_total: f64,
    pub kink_adjacent_coords: usize,
}

fn diag_curvature<O: InputLoss + ?Sized>(
    obj: &O,
    x: &[f64],
    y: usize,
    h: f64,
    pattern: Option<&dyn Fn(&[f64]) -> Vec<bool>>,
) -> DiagCurvature {
    // log p_y = -loss
    let g0 = -obj.loss(x, y);
    let base_pattern = pattern.map(|p| p(x));
    let mut out = DiagCurvature {
        total: 0.0,
        kink_adjacent_total: 0.0,
        kink_adjacent_coords: 0,
    };
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let gp = -obj.loss(&p, y);
        let kink_p = pattern.is_some_and(|f| Some(f(&p)) != base_pattern);
        p[i] = x[i] - h;
        let gm = -obj.loss(&p, y);
        let kink_m = pattern.is_some_and(|f| Some(f(&p)) != base_pattern);
        p[i] = x[i];
        let v = ((gp - 2.0 * g0 + gm) / (h * h)).abs();
        out.total += v;
        if kink_p || kink_m {
            out.kink_adjacent_total += v;
            out.kink_adjacent_coords += 1;
        }
    }
    out
}

/// `Σᵢ |∂ᵢ² log p_y(x)|` by central second differences with step `h`
/// (`2d + 1` loss evaluations). `log p_y` is taken as `-loss`.
pub fn second_order_diag_sum<O: InputLoss + ?Sized>(
    obj: &O,
    x: &[f64],
    y: usize,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::arg("h must be positive"));
    }
    if x.len() != obj.input_dim() {
        return Err(Error::Dimension {
            expected: obj.input_dim(),
            got: x.len(),
        });
    }
    Ok(diag_curvature(obj, x, y, h, None).total)
}

/// Like [`second_order_diag_sum`], also separating coordinates whose
/// stencil changes the ReLU on/off pattern of `model`.
pub fn second_order_diag_detail(
    model: &Model,
    x: &[f64],
    y: usize,
    h: f64,
) -> Result<DiagCurvature> {
    second_order_diag_sum(model, x, y, h)?;
    if model.relu_pattern(x).is_empty() {
        return Ok(diag_curvature(model, x, y, h, None));
    }
    let pattern = |p: &[f64]| model.relu_pattern(p);
    Ok(diag_curvature(model, x, y, h, Some(&pattern)))
}

/// Monte-Carlo mean of `‖∇L(x+δ+Δ, y)‖₂` over `n` offsets uniform in
/// `[-b, b]^d`, drawn from `seed`.
pub fn surrogate_value<O: InputLoss + ?Sized>(
    obj: &O,
    x: &[f64],
    delta: &[f64],
    y: usize,
    b: f64,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::arg("n must be at least 1"));
    }
    if x.len() != obj.input_dim() || delta.len() != x.len() {
        return Err(Error::Dimension {
            expected: obj.input_dim(),
            got: x.len().max(delta.len()),
        });
    }
    let point = clip_to_domain(&x.iter().zip(delta).map(|(a, d)| a + d).collect::<Vec<_>>());
    let mut rng = rng::substream(seed, &[rng::SURROGATE]);
    let total: f64 = sample_neighbors(&mut rng, x.len(), n, b)
        .iter()
        .map(|off| {
            let p: Vec<f64> = point.iter().zip(off).map(|(a, o)| a + o).collect();
            norm_l2(&obj.loss_grad(&p, y).1)
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    /// Relaxation constant, `0 < C ≤ 1`.
    pub c: f64,
    /// Second-difference step.
    pub h: f64,
    /// Gaussian kernel width of the density proxy used to tally A3.
    pub kde_bandwidth: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            h: 1e-3,
            kde_bandwidth: 0.1,
        }
    }
}

impl BoundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(Error::arg("C must lie in (0, 1]"));
        }
        if !(self.h > 0.0) {
            return Err(Error::arg("h must be positive"));
        }
        if !(self.kde_bandwidth > 0.0) {
            return Err(Error::arg("kde_bandwidth must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleBound {
    pub index: usize,
    pub delta_sq: f64,
    pub transfer_gap_sq: f64,
    pub model_diff: f64,
    pub first_order: f64,
    pub second_order: f64,
    pub rhs: f64,
    pub proxy_loss: f64,
    pub target_loss: f64,
    /// `L(F'(x+δ))² ≥ |L(F(x+δ))² − K|` with the dataset-level `K`.
    pub second_claim_holds: bool,
    /// The same inequality with this example's own `rhs` in place of `K`.
    pub second_claim_holds_local: bool,
    /// `transfer_gap_sq ≤ rhs`.
    pub first_claim_holds_local: bool,
    /// Density proxy did not increase from `x` to `x+δ`.
    pub a3_holds: bool,
    /// `L(F'(x+δ)) ≤ L(F(x+δ))`.
    pub a4_holds: bool,
    pub kink_adjacent_coords: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionViolations {
    pub a3: usize,
    pub a4: usize,
    /// Proxy contains non-ReLU activations.
    pub a5_proxy_not_relu: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub mean_sq_transfer_gap: f64,
    pub model_diff_component: f64,
    pub first_order_component: f64,
    pub second_order_component: f64,
    pub rhs_total: f64,
    pub lhs_target_loss_sq: f64,
    pub c_used: f64,
    pub n_examples: usize,
    /// Means are undefined (no examples).
    pub undefined: bool,
    /// `mean_sq_transfer_gap ≤ rhs_total`.
    pub first_claim_holds: bool,
    pub a4_examples: usize,
    pub second_claim_holds_where_a4: usize,
    /// Fraction of A4 examples satisfying the second claim.
    pub second_claim_rate_where_a4: Option<f64>,
    /// Same, with each example's own `rhs` as `K`.
    pub local_second_claim_rate_where_a4: Option<f64>,
    /// Fraction of A4 examples with `transfer_gap_sq ≤ rhs`.
    pub local_first_claim_rate_where_a4: Option<f64>,
    pub kink_adjacent_coords: usize,
    pub assumption_violations: AssumptionViolations,
    pub per_example: Vec<ExampleBound>,
}

fn kde(points: &Dataset, skip: usize, at: &[f64], bandwidth: f64) -> f64 {
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    (0..points.len())
        .filter(|&j| j != skip)
        .map(|j| {
            let diff: Vec<f64> = points.input(j).iter().zip(at).map(|(a, b)| a - b).collect();
            (-dot(&diff, &diff) * inv).exp()
        })
        .sum()
}

/// Computes every bound component over the rows of `data`, with `deltas[i]`
/// the perturbation crafted for row `i`.
pub fn bound_components(
    proxy: &Model,
    target: &Model,
    data: &Dataset,
    deltas: &[Vec<f64>],
    cfg: &BoundConfig,
) -> Result<BoundReport> {
    cfg.validate()?;
    if deltas.len() != data.len() {
        return Err(Error::Consistency(format!(
            "{} deltas for {} examples",
            deltas.len(),
            data.len()
        )));
    }
    if proxy.n_classes() != target.n_classes() {
        return Err(Error::Consistency(
            "proxy and target label spaces differ".into(),
        ));
    }
    for (i, d) in deltas.iter().enumerate() {
        check_pair(proxy, target, data.input(i), data.label(i))?;
        if d.len() != data.dim() {
            return Err(Error::Dimension {
                expected: data.dim(),
                got: d.len(),
            });
        }
    }
    let c = cfg.c;
    let per_example: Vec<ExampleBound> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let x = data.input(i);
            let y = data.label(i);
            let delta = &deltas[i];
            let adv = clip_to_domain(&x.iter().zip(delta).map(|(a, d)| a + d).collect::<Vec<_>>());
            let delta_sq = dot(delta, delta);

            let (lt0, gt0) = target.loss_grad(x, y);
            let (lp0, gp0) = proxy.loss_grad(x, y);
            let d0 = lt0 - lp0;
            let gd0: Vec<f64> = gt0.iter().zip(&gp0).map(|(a, b)| a - b).collect();
            let model_diff = d0 * d0 + c * delta_sq * dot(&gd0, &gd0);

            let (proxy_loss, gp) = proxy.loss_grad(&adv, y);
            let first_order = (1.0 + c) * delta_sq * dot(&gp, &gp);
            let curv = second_order_diag_detail(proxy, &adv, y, cfg.h).expect("inputs validated");
            let second_order = 2.0 * delta_sq * curv.total;
            let rhs = model_diff + first_order + second_order;

            let target_loss = target.loss(&adv, y);
            let gap = target_loss - proxy_loss;
            let second_claim_holds_local =
                target_loss * target_loss >= (proxy_loss * proxy_loss - rhs).abs();
            let a3_holds =
                kde(data, i, &adv, cfg.kde_bandwidth) <= kde(data, i, x, cfg.kde_bandwidth);

            ExampleBound {
                index: i,
                delta_sq,
                transfer_gap_sq: gap * gap,
                model_diff,
                first_order,
                second_order,
                rhs,
                proxy_loss,
                target_loss,
                second_claim_holds: false,
                second_claim_holds_local,
                first_claim_holds_local: gap * gap <= rhs,
                a3_holds,
                a4_holds: target_loss <= proxy_loss,
                kink_adjacent_coords: curv.kink_adjacent_coords,
            }
        })
        .collect();

    let mut per_example = per_example;
    let n = per_example.len();
    let mean = |f: &dyn Fn(&ExampleBound) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_example.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let model_diff_component = mean(&|e| e.model_diff);
    let first_order_component = mean(&|e| e.first_order);
    let second_order_component = mean(&|e| e.second_order);
    let rhs_total = model_diff_component + first_order_component + second_order_component;
    let mean_sq_transfer_gap = mean(&|e| e.transfer_gap_sq);
    let lhs_target_loss_sq = mean(&|e| e.target_loss * e.target_loss);
    for e in per_example.iter_mut() {
        e.second_claim_holds =
            e.target_loss * e.target_loss >= (e.proxy_loss * e.proxy_loss - rhs_total).abs();
    }
    let a4_examples = per_example.iter().filter(|e| e.a4_holds).count();
    let count_a4 = |f: &dyn Fn(&ExampleBound) -> bool| {
        per_example.iter().filter(|e| e.a4_holds && f(e)).count()
    };
    let second_claim_holds_where_a4 = count_a4(&|e| e.second_claim_holds);
    let local_second_where_a4 = count_a4(&|e| e.second_claim_holds_local);
    let local_first_where_a4 = count_a4(&|e| e.first_claim_holds_local);
    let rate = |k: usize| (a4_examples > 0).then(|| k as f64 / a4_examples as f64);

    Ok(BoundReport {
        mean_sq_transfer_gap,
        model_diff_component,
        first_order_component,
        second_order_component,
        rhs_total,
        lhs_target_loss_sq,
        c_used: c,
        n_examples: n,
        undefined: n == 0,
        first_claim_holds: mean_sq_transfer_gap <= rhs_total,
        a4_examples,
        second_claim_holds_where_a4,
        second_claim_rate_where_a4: rate(second_claim_holds_where_a4),
        local_second_claim_rate_where_a4: rate(local_second_where_a4),
        local_first_claim_rate_where_a4: rate(local_first_where_a4),
        kink_adjacent_coords: per_example.iter().map(|e| e.kink_adjacent_coords).sum(),
        assumption_violations: AssumptionViolations {
            a3: per_example.iter().filter(|e| !e.a3_holds).count(),
            a4: n - a4_examples,
            a5_proxy_not_relu: !proxy.is_relu_network(),
        },
        per_example,
    })
}

/// Gradient and curvature magnitudes of `f(x) = sin(x²)` on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeDemo {
    pub x: Vec<f64>,
    /// `|f'(x)| = |2x cos(x²)|`
    pub y1: Vec<f64>,
    /// `|f''(x)| = |2cos(x²) − 4x² sin(x²)|`
    pub y2: Vec<f64>,
    pub y3: Vec<f64>,
    pub argmin_y1: usize,
    pub argmin_y3: usize,
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

pub fn sin_landscape_demo(x_min: f64, x_max: f64, n_points: usize) -> Result<LandscapeDemo> {
    if n_points < 3 {
        return Err(Error::arg("n_points must be at least 3"));
    }
    if !(x_max > x_min) {
        return Err(Error::arg("x_max must exceed x_min"));
    }
    let step = (x_max - x_min) / (n_points - 1) as f64;
    let x: Vec<f64> = (0..n_points).map(|i| x_min + step * i as f64).collect();
    let y1: Vec<f64> = x.iter().map(|&t| (2.0 * t * (t * t).cos()).abs()).collect();
    let y2: Vec<f64> = x
        .iter()
        .map(|&t| (2.0 * (t * t).cos() - 4.0 * t * t * (t * t).sin()).abs())
        .collect();
    let y3: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a + b).collect();
    Ok(LandscapeDemo {
        argmin_y1: argmin(&y1),
        argmin_y3: argmin(&y3),
        x,
        y1,
        y2,
        y3,
    })
}

impl LandscapeDemo {
    /// CSV with columns `x,y1,y2,y3`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y1", "y2", "y3"])?;
        for i in 0..self.x.len() {
            out.write_record([
                self.x[i].to_string(),
                self.y1[i].to_string(),
                self.y2[i].to_string(),
                self.y3[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{mlp_spec, Activation};
    use crate::objective::{AffineLoss, QuadraticLoss};

    #[test]
    fn gap_is_zero_for_identical_models_and_antisymmetric() {
        let a = Model::init(&mlp_spec(3, &[4], 2, Activation::Softplus, 0), 1).unwrap();
        let b = Model::init(&mlp_spec(3, &[4], 2, Activation::Softplus, 0), 2).unwrap();
        let x = [0.2, 0.5, 0.9];
        assert_eq!(transfer_gap(&a, &a, &x, 1).unwrap(), 0.0);
        assert_eq!(
            transfer_gap(&a, &b, &x, 1).unwrap(),
            -transfer_gap(&b, &a, &x, 1).unwrap()
        );
        assert_eq!(grad_transfer_gap(&a, &a, &x, 0).unwrap(), vec![0.0; 3]);
        let g1 = grad_transfer_gap(&a, &b, &x, 0).unwrap();
        let g2 = grad_transfer_gap(&b, &a, &x, 0).unwrap();
        assert!(g1.iter().zip(&g2).all(|(p, q)| *p == -q));
    }

    #[test]
    fn affine_curvature_vanishes() {
        let f = AffineLoss {
            a: vec![0.4, -1.1, 2.0],
            c: 0.3,
        };
        assert!(second_order_diag_sum(&f, &[0.1, 0.5, 0.7], 0, 1e-3).unwrap() < 1e-8);
    }

    #[test]
    fn quadratic_curvature_is_abs_diagonal() {
        let q = QuadraticLoss::symmetric(3, &[2.0, 0.4, 0.0, 0.4, -3.0, 0.1, 0.0, 0.1, 0.5]);
        let s = second_order_diag_sum(&q, &[0.3, 0.2, 0.6], 0, 1e-3).unwrap();
        assert!((s - 5.5).abs() < 1e-9, "{s}");
    }

    #[test]
    fn surrogate_with_zero_width_is_point_norm() {
        let m = Model::init(&mlp_spec(3, &[4], 2, Activation::Softplus, 0), 1).unwrap();
        let x = [0.2, 0.5, 0.9];
        let d = [0.01, -0.02, 0.03];
        let s = surrogate_value(&m, &x, &d, 1, 0.0, 5, 9).unwrap();
        let p: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        assert!((s - norm_l2(&m.loss_grad(&p, 1).1)).abs() < 1e-15);
        let f = AffineLoss {
            a: vec![3.0, 4.0, 0.0],
            c: 0.0,
        };
        assert!((surrogate_value(&f, &x, &d, 0, 0.2, 500, 1).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sin_demo_closed_form_at_zero() {
        let demo = sin_landscape_demo(-3.0, 3.0, 601).unwrap();
        assert_eq!(demo.x[300], 0.0);
        assert_eq!((demo.y1[300], demo.y2[300], demo.y3[300]), (0.0, 2.0, 2.0));
        assert_eq!(demo.argmin_y1, 300);
        for i in 0..demo.x.len() {
            assert_eq!(demo.y3[i], demo.y1[i] + demo.y2[i]);
        }
        assert!(sin_landscape_demo(0.0, 1.0, 2).is_err());
    }

    #[test]
    fn bound_config_validation() {
        assert!(BoundConfig {
            c: 0.0,
            ..BoundConfig::default()
        }
        .validate()
        .is_err());
        assert!(BoundConfig {
            c: 1.5,
            ..BoundConfig::default()
        }
        .validate()
        .is_err());
        BoundConfig::default().validate().unwrap();
    }
}
