use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KvFile;

/// Pixel-to-domain divisor: config files speak 0–255 pixel units, attacks
/// run in `[0,1]`.
pub const PIXEL_SCALE: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Bim,
    Mi,
    Ni,
    Vt,
    Rap,
    Tpa,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::Bim,
        AttackKind::Mi,
        AttackKind::Ni,
        AttackKind::Vt,
        AttackKind::Rap,
        AttackKind::Tpa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Bim => "bim",
            AttackKind::Mi => "mi",
            AttackKind::Ni => "ni",
            AttackKind::Vt => "vt",
            AttackKind::Rap => "rap",
            AttackKind::Tpa => "tpa",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::config("attack.kind", format!("unknown attack kind `{s}`")))
    }
}

/// Iterative L∞ attack settings. Every distance is in `[0,1]` input units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    /// Surrogate weight.
    pub lambda: f64,
    /// Neighborhood half-width for the surrogate samples.
    pub b: f64,
    /// Finite-difference step of the Hessian-vector estimate.
    pub k: f64,
    pub n_samples: usize,
    pub resample_neighbors: bool,
    pub momentum_decay: f64,
    pub vt_samples: usize,
    pub vt_beta: f64,
    pub rap_inner_steps: usize,
    pub rap_radius: f64,
    pub targeted: bool,
    pub target_class: Option<usize>,
    pub seed: u64,
    /// Assert the L∞ and domain constraints after every iteration.
    #[serde(skip)]
    pub check_invariants: bool,
}

impl AttackConfig {
    /// λ=5, b=16, k=0.05, N=10, ε=16, step 1.6, 20 iterations, with pixel
    /// quantities divided by 255.
    pub fn published_defaults(kind: AttackKind) -> Self {
        Self {
            kind,
            epsilon: 16.0 / PIXEL_SCALE,
            step_size: 1.6 / PIXEL_SCALE,
            iterations: 20,
            lambda: 5.0,
            b: 16.0 / PIXEL_SCALE,
            k: 0.05,
            n_samples: 10,
            resample_neighbors: true,
            momentum_decay: 1.0,
            vt_samples: 20,
            vt_beta: 1.5,
            rap_inner_steps: 5,
            rap_radius: 12.0 / PIXEL_SCALE,
            targeted: false,
            target_class: None,
            seed: 0,
            check_invariants: false,
        }
    }

    pub fn with_kind(&self, kind: AttackKind) -> Self {
        Self {
            kind,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.epsilon) {
            return Err(Error::arg("epsilon must be finite and non-negative"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::arg("step_size must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::arg("iterations must be at least 1"));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::arg("k must be positive"));
        }
        if self.n_samples == 0 {
            return Err(Error::arg("n_samples must be at least 1"));
        }
        for (name, v) in [
            ("b", self.b),
            ("lambda", self.lambda),
            ("momentum_decay", self.momentum_decay),
            ("vt_beta", self.vt_beta),
            ("rap_radius", self.rap_radius),
        ] {
            if !finite_nonneg(v) {
                return Err(Error::arg(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }

    /// Reads `prefix.*` keys over `self`. Distances (`epsilon`, `step_size`,
    /// `tpa.b`, `rap.radius`) are given in pixel units.
    pub fn merge_kv(&self, kv: &KvFile, prefix: &str) -> Result<Self> {
        let key = |k: &str| {
            if prefix.is_empty() {
                k.to_string()
            } else {
                format!("{prefix}.{k}")
            }
        };
        let px = |k: &str, cur: f64| -> Result<f64> {
            Ok(kv.get::<f64>(&key(k))?.map_or(cur, |v| v / PIXEL_SCALE))
        };
        let mut c = self.clone();
        if let Some(kind) = kv.get_str(&key("kind")) {
            c.kind = kind
                .parse()
                .map_err(|_| kv.error(&key("kind"), format!("unknown attack kind `{kind}`")))?;
        }
        c.epsilon = px("epsilon", c.epsilon)?;
        c.step_size = px("step_size", c.step_size)?;
        c.iterations = kv.get_or(&key("iterations"), c.iterations)?;
        c.targeted = kv.get_or(&key("targeted"), c.targeted)?;
        if let Some(t) = kv.get::<usize>(&key("target_class"))? {
            c.target_class = Some(t);
        }
        c.seed = kv.get_or(&key("seed"), c.seed)?;
        c.momentum_decay = kv.get_or(&key("mi.momentum_decay"), c.momentum_decay)?;
        c.vt_samples = kv.get_or(&key("vt.samples"), c.vt_samples)?;
        c.vt_beta = kv.get_or(&key("vt.beta"), c.vt_beta)?;
        c.rap_inner_steps = kv.get_or(&key("rap.inner_steps"), c.rap_inner_steps)?;
        c.rap_radius = px("rap.radius", c.rap_radius)?;
        c.lambda = kv.get_or(&key("tpa.lambda"), c.lambda)?;
        c.b = px("tpa.b", c.b)?;
        c.k = kv.get_or(&key("tpa.k"), c.k)?;
        c.n_samples = kv.get_or(&key("tpa.n"), c.n_samples)?;
        c.resample_neighbors = kv.get_or(&key("tpa.resample"), c.resample_neighbors)?;
        c.validate()
            .map_err(|e| kv.error(&key("*"), e.to_string()))?;
        Ok(c)
    }

    /// Flat `key=value` rendering in pixel units, readable by [`merge_kv`](Self::merge_kv).
    pub fn to_kv(&self) -> String {
        let mut kv = KvFile::default();
        kv.set("kind", self.kind);
        kv.set("epsilon", self.epsilon * PIXEL_SCALE);
        kv.set("step_size", self.step_size * PIXEL_SCALE);
        kv.set("iterations", self.iterations);
        kv.set("targeted", self.targeted);
        if let Some(t) = self.target_class {
            kv.set("target_class", t);
        }
        kv.set("seed", self.seed);
        kv.set("mi.momentum_decay", self.momentum_decay);
        kv.set("vt.samples", self.vt_samples);
        kv.set("vt.beta", self.vt_beta);
        kv.set("rap.inner_steps", self.rap_inner_steps);
        kv.set("rap.radius", self.rap_radius * PIXEL_SCALE);
        kv.set("tpa.lambda", self.lambda);
        kv.set("tpa.b", self.b * PIXEL_SCALE);
        kv.set("tpa.k", self.k);
        kv.set("tpa.n", self.n_samples);
        kv.set("tpa.resample", self.resample_neighbors);
        kv.render()
    }
}

/// The same attack aimed at `target_class`: descent on that class's loss.
pub fn targeted_variant(cfg: &AttackConfig, target_class: usize) -> AttackConfig {
    AttackConfig {
        targeted: true,
        target_class: Some(target_class),
        ..cfg.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_defaults_scaled() {
        let c = AttackConfig::published_defaults(AttackKind::Tpa);
        assert_eq!(c.epsilon, 16.0 / 255.0);
        assert_eq!(c.step_size, 1.6 / 255.0);
        assert_eq!(
            (c.lambda, c.k, c.n_samples, c.iterations),
            (5.0, 0.05, 10, 20)
        );
        assert_eq!(c.b, 16.0 / 255.0);
        c.validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let mut c = AttackConfig::published_defaults(AttackKind::Rap);
        c.target_class = Some(2);
        c.targeted = true;
        let kv = KvFile::parse(&c.to_kv()).unwrap();
        let back = AttackConfig::published_defaults(AttackKind::Bim)
            .merge_kv(&kv, "")
            .unwrap();
        kv.finish().unwrap();
        assert_eq!(back.kind, AttackKind::Rap);
        assert!((back.epsilon - c.epsilon).abs() < 1e-15);
        assert!((back.rap_radius - c.rap_radius).abs() < 1e-15);
        assert_eq!(back.target_class, Some(2));
    }

    #[test]
    fn rejects_unknown_kind_and_bad_values() {
        assert!("fgsm".parse::<AttackKind>().is_err());
        let kv = KvFile::parse("attack.kind=fgsm\n").unwrap();
        assert!(matches!(
            AttackConfig::published_defaults(AttackKind::Bim).merge_kv(&kv, "attack"),
            Err(Error::Config { line: 1, .. })
        ));
        let mut c = AttackConfig::published_defaults(AttackKind::Tpa);
        c.k = 0.0;
        assert!(c.validate().is_err());
        c.k = 0.05;
        c.n_samples = 0;
        assert!(c.validate().is_err());
    }
}
