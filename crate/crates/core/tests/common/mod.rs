#![allow(dead_code)]
pub mod pipeline;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relguide::model::{batch_gradients, batch_loss, Head, LossTarget, MlpHead, RelevanceHead};
use relguide::{BBox, Dataset, ImageRecord, Region, RelAnnotation, Vocabulary};

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FD_FLOOR: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Distill,
    Binary,
}

pub const LOSS_KINDS: [LossKind; 3] = [LossKind::CrossEntropy, LossKind::Distill, LossKind::Binary];

pub fn random_target(rng: &mut ChaCha8Rng, kind: LossKind, classes: usize) -> LossTarget {
    let label = rng.random_range(0..classes);
    match kind {
        LossKind::CrossEntropy => LossTarget::CrossEntropy { label },
        LossKind::Distill => LossTarget::Distill {
            label,
            q: random_simplex(rng, classes),
            pi: rng.random_range(0.05..0.95),
        },
        LossKind::Binary => LossTarget::Binary {
            positive: rng.random_bool(0.5),
        },
    }
}

/// Worst relative error between analytic and central-difference gradients
/// over `coords` sampled parameter coordinates.
pub fn gradient_check<H: Head + Clone>(
    head: &H,
    batch: &[(H::Input, LossTarget)],
    coords: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let (_, analytic) = batch_gradients(head, batch).unwrap();
    let base = head.params();
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let i = rng.random_range(0..base.len());
        let mut probe = head.clone();
        let mut p = base.clone();
        p[i] = base[i] + FD_STEP;
        probe.set_params(&p).unwrap();
        let up = batch_loss(&probe, batch).unwrap();
        p[i] = base[i] - FD_STEP;
        probe.set_params(&p).unwrap();
        let down = batch_loss(&probe, batch).unwrap();
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err =
            (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max(err);
    }
    worst
}

/// Heads named as they are used: predicate (pair input), object (one region)
/// and relevance.
pub fn check_all(seed: u64, coords: usize) -> Vec<(String, f64)> {
    let mut rng = rng(seed);
    let mut out = Vec::new();
    for kind in LOSS_KINDS {
        let predicate = MlpHead::new(12, 8, 5, seed);
        let batch: Vec<_> = (0..4)
            .map(|_| (random_vec(&mut rng, 12), random_target(&mut rng, kind, 5)))
            .collect();
        out.push((
            format!("predicate/{kind:?}"),
            gradient_check(&predicate, &batch, coords, &mut rng),
        ));

        let object = MlpHead::new(6, 10, 4, seed + 1);
        let batch: Vec<_> = (0..4)
            .map(|_| (random_vec(&mut rng, 6), random_target(&mut rng, kind, 4)))
            .collect();
        out.push((
            format!("object/{kind:?}"),
            gradient_check(&object, &batch, coords, &mut rng),
        ));

        let relevance = RelevanceHead::new(6, 8, seed + 2);
        let batch: Vec<_> = (0..4)
            .map(|_| {
                let input = (random_vec(&mut rng, 6), random_vec(&mut rng, 6));
                (input, random_target(&mut rng, kind, 2))
            })
            .collect();
        out.push((
            format!("relevance/{kind:?}"),
            gradient_check(&relevance, &batch, coords, &mut rng),
        ));
    }
    out
}

pub fn vocab(objects: usize, predicates: usize) -> Vocabulary {
    Vocabulary::new(
        (0..objects)
            .map(|i| format!("obj{}", (b'a' + i as u8) as char))
            .collect(),
        (0..predicates)
            .map(|i| format!("pred{}", (b'a' + i as u8) as char))
            .collect(),
    )
    .unwrap()
}

pub fn region(id: u32, class_id: usize, feature: Vec<f64>) -> Region {
    Region {
        region_id: id,
        bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
        class_id,
        feature: Some(feature),
    }
}

/// Images whose region features are `class centroid + noise`, with
/// one-hot centroids scaled by `margin`. Predicates are a deterministic
/// function of the subject class, and only subjects of class 0 are annotated.
pub fn separable_dataset(
    images: usize,
    classes: usize,
    predicates: usize,
    margin: f64,
    seed: u64,
) -> Dataset {
    let mut rng = rng(seed);
    let dim = classes + 1;
    let mut recs = Vec::new();
    for i in 0..images {
        let regions: Vec<Region> = (0..4)
            .map(|r| {
                let c = rng.random_range(0..classes);
                let mut f: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect();
                f[c] += margin;
                region(r, c, f)
            })
            .collect();
        let mut anns = Vec::new();
        for a in &regions {
            for b in &regions {
                if a.region_id != b.region_id && a.class_id == 0 {
                    anns.push(RelAnnotation {
                        subject_region: a.region_id,
                        object_region: b.region_id,
                        predicate_id: b.class_id % predicates,
                    });
                }
            }
        }
        recs.push(ImageRecord {
            image_id: format!("img{i}"),
            regions,
            annotations: anns,
        });
    }
    Dataset {
        vocab: vocab(classes, predicates),
        feature_dim: dim,
        images: recs,
    }
}
