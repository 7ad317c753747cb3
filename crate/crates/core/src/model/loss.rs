use super::Head;
use crate::distill::CE_FLOOR;
use crate::error::{Error, Result};
use crate::types::softmax;

use super::relevance::ANNOTATED_INDEX;

/// Per-sample loss on the softmax output of a head.
#[derive(Debug, Clone, PartialEq)]
pub enum LossTarget {
    /// Cross-entropy against a hard label.
    CrossEntropy { label: usize },
    /// `(1 − π)·CE(label, p) + π·CE(q, p)` with `q` held fixed.
    Distill { label: usize, q: Vec<f64>, pi: f64 },
    /// Binary cross-entropy on the probability of the annotated class.
    Binary { positive: bool },
}

/// Loss value of one sample given the head's output distribution `p`.
pub fn sample_loss(p: &[f64], target: &LossTarget) -> f64 {
    let nll = |i: usize| -p[i].max(CE_FLOOR).ln();
    match target {
        LossTarget::CrossEntropy { label } => nll(*label),
        LossTarget::Distill { label, q, pi } => {
            let soft: f64 = q
                .iter()
                .enumerate()
                .filter(|(_, &qi)| qi != 0.0)
                .map(|(i, &qi)| qi * nll(i))
                .sum();
            (1.0 - pi) * nll(*label) + pi * soft
        }
        LossTarget::Binary { positive } => {
            if *positive {
                nll(ANNOTATED_INDEX)
            } else {
                let rest: f64 = p
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != ANNOTATED_INDEX)
                    .map(|(_, &x)| x)
                    .sum();
                -rest.max(CE_FLOOR).ln()
            }
        }
    }
}

/// Gradient of [`sample_loss`] with respect to the logits that produced `p`.
pub fn logit_gradient(p: &[f64], target: &LossTarget) -> Vec<f64> {
    match target {
        LossTarget::CrossEntropy { label } => {
            let mut g = p.to_vec();
            g[*label] -= 1.0;
            g
        }
        LossTarget::Distill { label, q, pi } => {
            let mut g: Vec<f64> = p.iter().zip(q).map(|(pi_, qi)| pi_ - pi * qi).collect();
            g[*label] -= 1.0 - pi;
            g
        }
        LossTarget::Binary { positive: true } => {
            let mut g = p.to_vec();
            g[ANNOTATED_INDEX] -= 1.0;
            g
        }
        LossTarget::Binary { positive: false } => {
            // d/dz_j −log(1 − p_a) = p_a (δ_aj − p_j) / (1 − p_a)
            let pa = p[ANNOTATED_INDEX];
            let rest = (1.0 - pa).max(CE_FLOOR);
            p.iter()
                .enumerate()
                .map(|(j, &pj)| {
                    let delta = if j == ANNOTATED_INDEX { 1.0 } else { 0.0 };
                    pa * (delta - pj) / rest
                })
                .collect()
        }
    }
}

fn check_target(target: &LossTarget, outputs: usize) -> Result<()> {
    let bad = |found: usize| {
        Err(Error::DimensionMismatch {
            expected: outputs,
            found,
        })
    };
    match target {
        LossTarget::CrossEntropy { label } if *label >= outputs => bad(*label + 1),
        LossTarget::Distill { label, .. } if *label >= outputs => bad(*label + 1),
        LossTarget::Distill { q, .. } if q.len() != outputs => bad(q.len()),
        LossTarget::Distill { pi, .. } if !(0.0..=1.0).contains(pi) => {
            Err(Error::invalid(format!("mixing weight {pi} outside [0, 1]")))
        }
        LossTarget::Binary { .. } if outputs < 2 => bad(outputs),
        _ => Ok(()),
    }
}

/// Mean batch loss and its analytic gradient, flat in [`Head::params`] order.
pub fn batch_gradients<H: Head>(
    head: &H,
    batch: &[(H::Input, LossTarget)],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; head.num_params()];
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (input, target) in batch {
        check_target(target, head.num_outputs())?;
        let (logits, cache) = head.forward(input)?;
        let p = softmax(&logits);
        total += sample_loss(&p, target);
        let d_logits = logit_gradient(&p, target);
        head.backward(&cache, &d_logits, scale, &mut grad);
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { layer: 0 });
    }
    Ok((total * scale, grad))
}

/// Mean batch loss only.
pub fn batch_loss<H: Head>(head: &H, batch: &[(H::Input, LossTarget)]) -> Result<f64> {
    let mut total = 0.0;
    for (input, target) in batch {
        let (logits, _) = head.forward(input)?;
        total += sample_loss(&softmax(&logits), target);
    }
    Ok(total / batch.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Layer, MlpHead, RelevanceHead};

    #[test]
    fn linear_head_ce_gradient_is_outer_product() {
        let head = MlpHead::from_layers(vec![Layer {
            in_dim: 2,
            out_dim: 3,
            weights: vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6],
            bias: vec![0.0, 0.1, -0.1],
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = vec![0.7, -1.3];
        let (_, grad) =
            batch_gradients(&head, &[(x.clone(), LossTarget::CrossEntropy { label: 1 })]).unwrap();
        let p = head.classify(&x).unwrap();
        for o in 0..3 {
            let err = p.probs()[o] - if o == 1 { 1.0 } else { 0.0 };
            for i in 0..2 {
                assert!((grad[o * 2 + i] - err * x[i]).abs() < 1e-15);
            }
            assert!((grad[6 + o] - err).abs() < 1e-15);
        }
    }

    #[test]
    fn dead_rectifiers_give_zero_gradient() {
        let mut head = MlpHead::new(2, 3, 4, 0);
        let mut params = head.params();
        // hidden weights 0, hidden biases negative: every unit is off.
        for p in params.iter_mut().take(6) {
            *p = 0.0;
        }
        for p in params.iter_mut().skip(6).take(3) {
            *p = -1.0;
        }
        head.set_params(&params).unwrap();
        let batch = vec![
            (vec![0.5, 0.2], LossTarget::CrossEntropy { label: 0 }),
            (vec![-1.0, 3.0], LossTarget::CrossEntropy { label: 2 }),
        ];
        let (_, grad) = batch_gradients(&head, &batch).unwrap();
        // Only the output bias sees a gradient; all weights are zero-gradient.
        let n_hidden = 6 + 3;
        assert!(grad[..n_hidden].iter().all(|&g| g == 0.0));
        assert!(grad[n_hidden..n_hidden + 12].iter().all(|&g| g == 0.0));

        let mut rel = RelevanceHead::zeros(2, 3);
        rel.b_so = vec![-1.0; 3];
        let (_, grad) = batch_gradients(
            &rel,
            &[(
                (vec![1.0, 1.0], vec![2.0, 2.0]),
                LossTarget::Binary { positive: true },
            )],
        )
        .unwrap();
        assert!(grad[..2 * 3 * 2 + 3 + 6].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn binary_on_two_classes_matches_cross_entropy() {
        let p = [0.3, 0.7];
        let pos = LossTarget::Binary { positive: true };
        let neg = LossTarget::Binary { positive: false };
        assert!(
            (sample_loss(&p, &pos) - sample_loss(&p, &LossTarget::CrossEntropy { label: 0 })).abs()
                < 1e-15
        );
        assert!(
            (sample_loss(&p, &neg) - sample_loss(&p, &LossTarget::CrossEntropy { label: 1 })).abs()
                < 1e-15
        );
        let g = logit_gradient(&p, &neg);
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn mismatched_targets_are_rejected() {
        let head = MlpHead::new(2, 0, 3, 0);
        let bad = vec![(vec![0.0, 0.0], LossTarget::CrossEntropy { label: 3 })];
        assert!(batch_gradients(&head, &bad).is_err());
        let bad = vec![(
            vec![0.0, 0.0],
            LossTarget::Distill {
                label: 0,
                q: vec![0.5, 0.5],
                pi: 0.1,
            },
        )];
        assert!(batch_gradients(&head, &bad).is_err());
    }
}
