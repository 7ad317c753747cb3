//! Rule distillation: the closed-form projection of a model distribution
//! onto constraint-respecting distributions, the mixing schedule and the
//! combined teacher/label loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Distribution;

/// Default constraint weight.
pub const DEFAULT_LAMBDA: f64 = 6.0;
/// Default schedule base.
pub const DEFAULT_BASE: f64 = 0.95;
/// Default schedule ceiling.
pub const DEFAULT_CAP: f64 = 0.1;

/// Probabilities are floored at this value inside cross-entropy logs.
pub const CE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub lambda: f64,
    /// Maximum number of iterations `T`.
    pub max_iterations: u64,
    pub cap: f64,
    pub base: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            max_iterations: 1,
            cap: DEFAULT_CAP,
            base: DEFAULT_BASE,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        if self.max_iterations < 1 {
            return Err(Error::invalid("maximum iterations must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.cap) {
            return Err(Error::invalid("schedule cap must lie in [0, 1]"));
        }
        if !(self.base > 0.0 && self.base < 1.0) {
            return Err(Error::invalid("schedule base must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// `q_i ∝ p_i · exp(λ f_i)`, evaluated in log space with max-subtraction.
pub fn project(p: &Distribution, f: &[f64], lambda: f64) -> Result<Distribution> {
    if f.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: f.len(),
        });
    }
    if f.iter().any(|x| !x.is_finite()) || !lambda.is_finite() {
        return Err(Error::invalid("constraint values must be finite"));
    }
    let logits: Vec<f64> = p
        .probs()
        .iter()
        .zip(f)
        .map(|(&pi, &fi)| {
            if pi > 0.0 {
                pi.ln() + lambda * fi
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::ProjectionDegenerate);
    }
    let weights: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ProjectionDegenerate);
    }
    Distribution::new(weights.into_iter().map(|w| w / total).collect())
}

/// `min(1 − base^{t/T}, cap)`.
pub fn pi_schedule(t: u64, config: &DistillConfig) -> f64 {
    let exponent = t as f64 / config.max_iterations as f64;
    (1.0 - config.base.powf(exponent)).min(config.cap)
}

/// Either a hard label or a soft target distribution.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Label(usize),
    Soft(&'a [f64]),
}

/// `−Σ target_i · log p_i`, probabilities floored at 1e-12.
pub fn cross_entropy(target: Target<'_>, p: &Distribution) -> Result<f64> {
    let probs = p.probs();
    match target {
        Target::Label(y) => {
            let py = probs.get(y).ok_or(Error::DimensionMismatch {
                expected: probs.len(),
                found: y + 1,
            })?;
            Ok(-py.max(CE_FLOOR).ln())
        }
        Target::Soft(q) => {
            if q.len() != probs.len() {
                return Err(Error::DimensionMismatch {
                    expected: probs.len(),
                    found: q.len(),
                });
            }
            Ok(-q
                .iter()
                .zip(probs)
                .map(|(&qi, &pi)| {
                    if qi == 0.0 {
                        0.0
                    } else {
                        qi * pi.max(CE_FLOOR).ln()
                    }
                })
                .sum::<f64>())
        }
    }
}

/// `(1 − π)·CE(y, p) + π·CE(q, p)`.
pub fn distill_loss(y: usize, p: &Distribution, q: &Distribution, pi: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::invalid(format!("mixing weight {pi} outside [0, 1]")));
    }
    let hard = cross_entropy(Target::Label(y), p)?;
    let soft = cross_entropy(Target::Soft(q.probs()), p)?;
    Ok((1.0 - pi) * hard + pi * soft)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::normalize;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> Distribution {
        normalize(v).unwrap()
    }

    #[test]
    fn constant_constraint_or_zero_lambda_is_identity() {
        let p = dist(&[0.2, 0.5, 0.3]);
        let q = project(&p, &[-0.693; 3], 6.0).unwrap();
        for (a, b) in q.probs().iter().zip(p.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
        let q = project(&p, &[1.0, -4.0, 2.0], 0.0).unwrap();
        for (a, b) in q.probs().iter().zip(p.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_closed_form_value() {
        let p = Distribution::uniform(3);
        let q = project(&p, &[1.0, 0.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((q.probs()[0] - e / (e + 2.0)).abs() < 1e-12);
        assert!((q.probs()[0] - 0.5761).abs() < 1e-3);
        assert!((q.probs()[1] - 0.2119).abs() < 1e-3);
    }

    #[test]
    fn projection_survives_extreme_constraints() {
        let p = dist(&[0.5, 0.5]);
        let f = [1e-8f64.ln(), 1e-8f64.ln()];
        let q = project(&p, &f, 100.0).unwrap();
        assert_eq!(q.probs(), &[0.5, 0.5]);
        assert!(project(&p, &[0.0], 1.0).is_err());
    }

    #[test]
    fn schedule_values() {
        let cfg = DistillConfig {
            max_iterations: 100,
            ..DistillConfig::default()
        };
        assert_eq!(pi_schedule(0, &cfg), 0.0);
        assert!((pi_schedule(100, &cfg) - 0.05).abs() < 1e-15);
        assert_eq!(pi_schedule(300, &cfg), 0.1);
        assert!((1.0 - 0.95f64.powi(3) - 0.142625).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(
            cross_entropy(Target::Label(0), &dist(&[1.0, 0.0, 0.0])).unwrap(),
            0.0
        );
        let ce = cross_entropy(Target::Label(0), &dist(&[0.5, 0.5])).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-12);
        let p = dist(&[0.1, 0.6, 0.3]);
        let h = cross_entropy(Target::Soft(p.probs()), &p).unwrap();
        assert!((h - p.entropy()).abs() < 1e-12);
    }

    #[test]
    fn distill_loss_examples() {
        let p = dist(&[0.5, 0.5]);
        let q = dist(&[0.8, 0.2]);
        let l = distill_loss(0, &p, &q, 0.1).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let p = dist(&[0.7, 0.3]);
        let ce_y = cross_entropy(Target::Label(1), &p).unwrap();
        let ce_q = cross_entropy(Target::Soft(q.probs()), &p).unwrap();
        assert_eq!(distill_loss(1, &p, &q, 0.0).unwrap(), ce_y);
        assert_eq!(distill_loss(1, &p, &q, 1.0).unwrap(), ce_q);
        assert!(distill_loss(1, &p, &q, 1.5).is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Distribution> {
        proptest::collection::vec(0.01f64..1.0, n).prop_map(|v| normalize(&v).unwrap())
    }

    proptest! {
        #[test]
        fn larger_lambda_raises_expected_constraint(
            p in simplex(4),
            f in proptest::collection::vec(-5.0f64..1.0, 4),
            l1 in 0.0f64..10.0, dl in 0.0f64..10.0,
        ) {
            let e = |lambda: f64| {
                let q = project(&p, &f, lambda).unwrap();
                q.probs().iter().zip(&f).map(|(a, b)| a * b).sum::<f64>()
            };
            prop_assert!(e(l1 + dl) >= e(l1) - 1e-12);
        }

        #[test]
        fn schedule_is_monotone_and_capped(t in 0u64..10_000, dt in 0u64..1000, big_t in 1u64..2000) {
            let cfg = DistillConfig { max_iterations: big_t, ..DistillConfig::default() };
            let a = pi_schedule(t, &cfg);
            let b = pi_schedule(t + dt, &cfg);
            prop_assert!(a <= b);
            prop_assert!((0.0..=cfg.cap).contains(&b));
        }

        #[test]
        fn distill_loss_is_convex_combination(
            p in simplex(3), q in simplex(3), y in 0usize..3, pi in 0.0f64..=1.0,
        ) {
            let l = distill_loss(y, &p, &q, pi).unwrap();
            let a = cross_entropy(Target::Label(y), &p).unwrap();
            let b = cross_entropy(Target::Soft(q.probs()), &p).unwrap();
            prop_assert!(l >= a.min(b) - 1e-12 && l <= a.max(b) + 1e-12);
        }
    }
}
