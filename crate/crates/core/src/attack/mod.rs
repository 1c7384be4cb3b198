//! L∞-bounded iterative attacks: BIM, MI, NI, VT, RAP and the
//! flatness-penalized TPA, untargeted or targeted.
//!
//! All attacks share one loop: compute an ascent direction at
//! `adv = clip(x+δ)`, take a sign step, project onto the ε-ball intersected
//! with the input domain. They differ only in how the direction is built.
//! Randomness (VT neighbors, TPA neighborhood samples) comes from streams
//! keyed by `(seed, example, iteration)`, so a batch gives the same answer
//! on any number of threads.

mod config;
mod tpa;
mod transfer;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{targeted_variant, AttackConfig, AttackKind, PIXEL_SCALE};
pub use tpa::{forward_difference_hvp, sample_neighbors, tpa_gradient, TpaGradient, MIN_GRAD_NORM};
pub use transfer::{evaluate_transfer, AdversarialExample, ExampleTransfer, TransferOutcome};

use crate::data::{clip_to_domain, Dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::objective::InputLoss;
use crate::rng;
use crate::tensor::{norm_l1, norm_linf, sign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub delta: Vec<f64>,
    pub adv_input: Vec<f64>,
    /// Attacked-class loss at the start of each iteration.
    pub proxy_loss_trace: Vec<f64>,
    /// Mean neighborhood gradient norm per iteration (TPA only).
    pub surrogate_trace: Vec<f64>,
    pub success_on_proxy: bool,
    pub gradient_evaluations: u64,
}

/// Which class's loss is driven, and in which direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Goal {
    pub class: usize,
    /// +1 ascends the true-label loss, -1 descends the target-class loss.
    pub ascent_sign: f64,
}

impl Goal {
    pub(crate) fn resolve(y: usize, cfg: &AttackConfig) -> Result<Goal> {
        if !cfg.targeted {
            return Ok(Goal {
                class: y,
                ascent_sign: 1.0,
            });
        }
        match cfg.target_class {
            None => Err(Error::arg("targeted attack needs a target class")),
            Some(t) if t == y => Err(Error::arg(format!(
                "target class {t} equals the true label"
            ))),
            Some(t) => Ok(Goal {
                class: t,
                ascent_sign: -1.0,
            }),
        }
    }

    fn scale(&self, g: Vec<f64>) -> Vec<f64> {
        g.into_iter().map(|v| self.ascent_sign * v).collect()
    }
}

/// One sign step followed by projection onto `[-ε, ε] ∩ [-x, 1-x]`.
pub fn attack_step_sign(x: &[f64], delta: &[f64], ascent: &[f64], cfg: &AttackConfig) -> Vec<f64> {
    x.iter()
        .zip(delta)
        .zip(ascent)
        .map(|((xi, di), gi)| {
            let moved = di + cfg.step_size * sign(*gi);
            let lo = (-cfg.epsilon).max(-xi);
            let hi = cfg.epsilon.min(1.0 - xi);
            moved.max(lo).min(hi)
        })
        .collect()
}

/// `g ← μ·g + v/‖v‖₁`, the accumulator behind MI and NI.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumAccumulator {
    decay: f64,
    value: Vec<f64>,
}

impl MomentumAccumulator {
    pub fn new(dim: usize, decay: f64) -> Self {
        Self {
            decay,
            value: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, grad: &[f64]) {
        let n = norm_l1(grad);
        for (acc, g) in self.value.iter_mut().zip(grad) {
            let add = if n > 0.0 { g / n } else { 0.0 };
            *acc = self.decay * *acc + add;
        }
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn check_inputs<O: InputLoss + ?Sized>(obj: &O, x: &[f64], cfg: &AttackConfig) -> Result<()> {
    cfg.validate()?;
    if x.len() != obj.input_dim() {
        return Err(Error::Dimension {
            expected: obj.input_dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::arg("clean input must lie in [0,1]"));
    }
    Ok(())
}

fn assert_constraints(x: &[f64], delta: &[f64], adv: &[f64], eps: f64, iteration: usize) {
    let linf = norm_linf(delta);
    assert!(
        linf <= eps + 1e-12,
        "iteration {iteration}: max|δ| = {linf} exceeds ε = {eps}"
    );
    for ((xi, di), ai) in x.iter().zip(delta).zip(adv) {
        assert!(
            (0.0..=1.0).contains(ai),
            "iteration {iteration}: adversarial input left [0,1]"
        );
        assert_eq!(
            *ai,
            (xi + di).clamp(0.0, 1.0),
            "iteration {iteration}: adv != clip(x+δ)"
        );
    }
}

/// Runs `cfg.kind` on one example. `example` keys the random streams.
pub fn run_attack<O: InputLoss + ?Sized>(
    obj: &O,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
    example: u64,
) -> Result<AttackResult> {
    check_inputs(obj, x, cfg)?;
    let goal = Goal::resolve(y, cfg)?;
    let dim = x.len();

    let mut delta = vec![0.0; dim];
    let mut adv = clip_to_domain(x);
    let mut momentum = MomentumAccumulator::new(dim, cfg.momentum_decay);
    let mut variance = vec![0.0; dim];
    let mut loss_trace = Vec::with_capacity(cfg.iterations);
    let mut surrogate_trace = Vec::new();
    let mut evals = 0u64;

    for t in 0..cfg.iterations {
        let (loss, ascent) = match cfg.kind {
            AttackKind::Bim => {
                let (l, g) = obj.loss_grad(&adv, goal.class);
                evals += 1;
                (l, goal.scale(g))
            }
            AttackKind::Mi => {
                let (l, g) = obj.loss_grad(&adv, goal.class);
                evals += 1;
                momentum.push(&goal.scale(g));
                (l, momentum.value().to_vec())
            }
            AttackKind::Ni => {
                let shift = cfg.step_size * cfg.momentum_decay;
                let lookahead: Vec<f64> = adv
                    .iter()
                    .zip(momentum.value())
                    .map(|(a, m)| a + shift * m)
                    .collect();
                let (_, g) = obj.loss_grad(&lookahead, goal.class);
                evals += 1;
                momentum.push(&goal.scale(g));
                (obj.loss(&adv, goal.class), momentum.value().to_vec())
            }
            AttackKind::Vt => {
                let (l, g) = obj.loss_grad(&adv, goal.class);
                evals += 1;
                let g = goal.scale(g);
                let ascent = add(&g, &variance);
                if cfg.vt_samples > 0 {
                    let radius = cfg.vt_beta * cfg.epsilon;
                    let mut rng = rng::substream(cfg.seed, &[rng::ATTACK, example, t as u64, 1]);
                    let mut mean = vec![0.0; dim];
                    for _ in 0..cfg.vt_samples {
                        let neighbor: Vec<f64> = adv
                            .iter()
                            .map(|a| a + radius * (2.0 * rng.gen::<f64>() - 1.0))
                            .collect();
                        let (_, gn) = obj.loss_grad(&neighbor, goal.class);
                        evals += 1;
                        for (m, v) in mean.iter_mut().zip(goal.scale(gn)) {
                            *m += v;
                        }
                    }
                    let n = cfg.vt_samples as f64;
                    variance = mean.iter().zip(&g).map(|(m, gi)| m / n - gi).collect();
                }
                (l, ascent)
            }
            AttackKind::Rap => {
                // inner loop: sign descent toward the lowest-loss neighbor
                let mut shift = vec![0.0; dim];
                for _ in 0..cfg.rap_inner_steps {
                    let (_, gn) = obj.loss_grad(&add(&adv, &shift), goal.class);
                    evals += 1;
                    for (s, g) in shift.iter_mut().zip(goal.scale(gn)) {
                        *s = (*s - cfg.step_size * sign(g)).clamp(-cfg.rap_radius, cfg.rap_radius);
                    }
                }
                let (_, g) = obj.loss_grad(&add(&adv, &shift), goal.class);
                evals += 1;
                (obj.loss(&adv, goal.class), goal.scale(g))
            }
            AttackKind::Tpa => {
                let stream_iter = if cfg.resample_neighbors { t as u64 } else { 0 };
                let mut rng = rng::substream(cfg.seed, &[rng::ATTACK, example, stream_iter, 0]);
                let tg = tpa::tpa_gradient_at(obj, &adv, goal, cfg, &mut rng);
                evals += tg.gradient_evaluations;
                surrogate_trace.push(tg.surrogate);
                (tg.loss, tg.descent.iter().map(|d| -d).collect())
            }
        };
        loss_trace.push(loss);
        delta = attack_step_sign(x, &delta, &ascent, cfg);
        adv = x
            .iter()
            .zip(&delta)
            .map(|(a, b)| (a + b).clamp(0.0, 1.0))
            .collect();
        if cfg.check_invariants {
            assert_constraints(x, &delta, &adv, cfg.epsilon, t);
        }
    }

    let success_on_proxy = match obj.predict(&adv) {
        Some(p) if cfg.targeted => p == goal.class,
        Some(p) => p != y,
        None => false,
    };
    Ok(AttackResult {
        delta,
        adv_input: adv,
        proxy_loss_trace: loss_trace,
        surrogate_trace,
        success_on_proxy,
        gradient_evaluations: evals,
    })
}

fn run_kind<O: InputLoss + ?Sized>(
    kind: AttackKind,
    obj: &O,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    run_attack(obj, x, y, &cfg.with_kind(kind), 0)
}

/// Basic iterative method: sign ascent on the loss.
pub fn bim<O: InputLoss + ?Sized>(
    obj: &O,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    run_kind(AttackKind::Bim, obj, x, y, cfg)
}

/// Momentum iterative method.
pub fn mi<O: InputLoss + ?Sized>(
    obj: &O,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    run_kind(AttackKind::Mi, obj, x, y, cfg)
}

/// Nesterov variant of MI: gradient taken at `adv + step·μ·g`.
pub fn ni<O: InputLoss + ?Sized>(
    obj: &O,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    run_kind(AttackKind::Ni, obj, x, y, cfg)
}

/// Variance tuning: the step uses `∇L + v`, where `v` is the mean gradient
/// over uniform neighbors of radius `vt_beta·ε` at the previous iterate minus
/// the gradient there.
pub fn vt<O: InputLoss + ?Sized>(
    obj: &O,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    run_kind(AttackKind::Vt, obj, x, y, cfg)
}

/// Reverse adversarial perturbation: each ascent step is taken at the
/// lowest-loss point found by `rap_inner_steps` sign-descent steps inside a
/// `rap_radius` box around the iterate.
pub fn rap<O: InputLoss + ?Sized>(
    obj: &O,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    run_kind(AttackKind::Rap, obj, x, y, cfg)
}

/// Flatness-penalized attack driven by [`tpa_gradient`].
pub fn tpa<O: InputLoss + ?Sized>(
    obj: &O,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    run_kind(AttackKind::Tpa, obj, x, y, cfg)
}

/// Target class used for example `y` when a batch runs targeted: the
/// configured class, or `(y+1) mod n_classes` when none is configured.
/// `None` means the example is skipped (configured target equals `y`).
pub fn batch_target(cfg: &AttackConfig, y: usize, n_classes: usize) -> Option<usize> {
    match cfg.target_class {
        Some(t) if t == y => None,
        Some(t) => Some(t),
        None => Some((y + 1) % n_classes),
    }
}

/// Attacks `data[i]` for every `i` in `indices`, in parallel on the current
/// rayon pool. The dataset index keys each example's random streams.
pub fn attack_batch(
    model: &Model,
    data: &Dataset,
    indices: &[usize],
    cfg: &AttackConfig,
) -> Vec<(usize, Result<AttackResult>)> {
    indices
        .par_iter()
        .map(|&i| {
            let y = data.label(i);
            let result = if cfg.targeted {
                match batch_target(cfg, y, model.n_classes()) {
                    Some(t) => {
                        run_attack(model, data.input(i), y, &targeted_variant(cfg, t), i as u64)
                    }
                    None => Err(Error::arg(format!("example {i}: target equals label"))),
                }
            } else {
                run_attack(model, data.input(i), y, cfg, i as u64)
            };
            (i, result)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{AffineLoss, QuadraticLoss};

    fn base(kind: AttackKind) -> AttackConfig {
        AttackConfig {
            check_invariants: true,
            ..AttackConfig::published_defaults(kind)
        }
    }

    #[test]
    fn zero_gradient_leaves_delta() {
        let cfg = base(AttackKind::Bim);
        let delta = vec![0.01, -0.02];
        assert_eq!(
            attack_step_sign(&[0.5, 0.5], &delta, &[0.0, 0.0], &cfg),
            delta
        );
    }

    #[test]
    fn boundary_is_a_fixed_point() {
        let cfg = base(AttackKind::Bim);
        let out = attack_step_sign(&[0.5], &[cfg.epsilon], &[3.0], &cfg);
        assert_eq!(out, vec![cfg.epsilon]);
    }

    #[test]
    fn domain_clamps_delta() {
        let cfg = base(AttackKind::Bim);
        let out = attack_step_sign(&[0.0, 1.0], &[0.0, 0.0], &[-1.0, 1.0], &cfg);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn one_step_closed_form() {
        let f = AffineLoss {
            a: vec![0.5, -2.0, 0.0],
            c: 0.0,
        };
        let cfg = AttackConfig {
            iterations: 1,
            epsilon: 0.5,
            ..base(AttackKind::Bim)
        };
        let r = bim(&f, &[0.5; 3], 0, &cfg).unwrap();
        assert_eq!(r.delta, vec![cfg.step_size, -cfg.step_size, 0.0]);
    }

    #[test]
    fn zero_budget_returns_clean_input() {
        let f = AffineLoss {
            a: vec![1.0, -1.0],
            c: 0.0,
        };
        let cfg = AttackConfig {
            epsilon: 0.0,
            ..base(AttackKind::Bim)
        };
        let r = bim(&f, &[0.3, 0.7], 0, &cfg).unwrap();
        assert!(r.delta.iter().all(|d| *d == 0.0));
        assert_eq!(r.adv_input, vec![0.3, 0.7]);
    }

    #[test]
    fn momentum_grows_linearly_with_unit_decay() {
        let mut acc = MomentumAccumulator::new(3, 1.0);
        let g = [1.0, -2.0, 1.0];
        for t in 1..=5 {
            acc.push(&g);
            assert!((norm_l1(acc.value()) - t as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn targeted_rejects_true_label() {
        let f = AffineLoss {
            a: vec![1.0, 1.0],
            c: 0.0,
        };
        let cfg = targeted_variant(&base(AttackKind::Bim), 0);
        assert!(matches!(
            bim(&f, &[0.5, 0.5], 0, &cfg),
            Err(Error::Argument(_))
        ));
        let untargeted_missing = AttackConfig {
            targeted: true,
            ..base(AttackKind::Bim)
        };
        assert!(bim(&f, &[0.5, 0.5], 0, &untargeted_missing).is_err());
    }

    #[test]
    fn targeted_descends_the_loss() {
        let f = AffineLoss {
            a: vec![1.0, -1.0],
            c: 0.0,
        };
        let cfg = targeted_variant(&base(AttackKind::Bim), 1);
        let r = bim(&f, &[0.5, 0.5], 0, &cfg).unwrap();
        assert_eq!(r.delta, vec![-cfg.epsilon, cfg.epsilon]);
    }

    #[test]
    fn reductions_on_quadratic() {
        let q = QuadraticLoss::symmetric(3, &[1.0, 0.2, -0.3, 0.2, -2.0, 0.1, -0.3, 0.1, 0.5]);
        let x = [0.4, 0.6, 0.5];
        let reference = bim(&q, &x, 0, &base(AttackKind::Bim)).unwrap();
        let cases = [
            AttackConfig {
                lambda: 0.0,
                ..base(AttackKind::Tpa)
            },
            AttackConfig {
                momentum_decay: 0.0,
                ..base(AttackKind::Mi)
            },
            AttackConfig {
                vt_samples: 0,
                ..base(AttackKind::Vt)
            },
            AttackConfig {
                vt_beta: 0.0,
                ..base(AttackKind::Vt)
            },
            AttackConfig {
                rap_inner_steps: 0,
                ..base(AttackKind::Rap)
            },
            AttackConfig {
                rap_radius: 0.0,
                ..base(AttackKind::Rap)
            },
        ];
        for cfg in cases {
            let r = run_attack(&q, &x, 0, &cfg, 0).unwrap();
            assert_eq!(r.delta, reference.delta, "{:?}", cfg.kind);
            assert_eq!(
                r.proxy_loss_trace, reference.proxy_loss_trace,
                "{:?}",
                cfg.kind
            );
        }
    }

    #[test]
    fn rejects_out_of_domain_input() {
        let f = AffineLoss {
            a: vec![1.0, 1.0],
            c: 0.0,
        };
        assert!(bim(&f, &[1.5, 0.5], 0, &base(AttackKind::Bim)).is_err());
        assert!(bim(&f, &[0.5], 0, &base(AttackKind::Bim)).is_err());
    }
}
