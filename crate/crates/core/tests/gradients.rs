mod common;

use common::{check_all, gradient_check, random_vec, rng};
use relguide::model::{Activation, Head, Layer, LossTarget, MlpHead};

#[test]
fn all_heads_all_losses_match_finite_differences() {
    for seed in [1, 2, 3] {
        for (name, err) in check_all(seed, 120) {
            assert!(err <= 1e-4, "seed {seed} {name}: relative error {err:e}");
        }
    }
}

#[test]
fn linear_head_without_hidden_layer() {
    let head = MlpHead::new(30, 0, 4, 9);
    let mut r = rng(9);
    let batch: Vec<_> = (0..5)
        .map(|i| {
            (
                random_vec(&mut r, 30),
                LossTarget::CrossEntropy { label: i % 4 },
            )
        })
        .collect();
    assert!(head.num_params() >= 100);
    assert!(gradient_check(&head, &batch, 124, &mut r) <= 1e-4);
}

#[test]
fn saturated_logits_keep_gradients_finite() {
    let mut layer = Layer::zeros(2, 3, Activation::Identity);
    layer.weights = vec![500.0, 0.0, -500.0, 0.0, 0.0, 1.0];
    let head = MlpHead::from_layers(vec![layer]).unwrap();
    let batch = vec![(vec![1.0, 0.0], LossTarget::CrossEntropy { label: 1 })];
    let (loss, grad) = relguide::model::batch_gradients(&head, &batch).unwrap();
    assert!(loss.is_finite());
    assert!(grad.iter().all(|g| g.is_finite()));
}
