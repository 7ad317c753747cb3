//! Mini-batch gradient descent for the three heads.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{batch_gradients, LossTarget};
use super::{Head, MlpHead, RelevanceHead};
use crate::distill::{pi_schedule, project, DistillConfig};
use crate::error::{Error, Result};
use crate::knowledge::{ConstraintContext, ConstraintMatrix};
use crate::types::{softmax, Dataset, Distribution, ImageRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DistillMode {
    Off,
    Ik,
    Sk,
    Both,
}

impl DistillMode {
    pub fn uses_semantic(self) -> bool {
        matches!(self, DistillMode::Sk | DistillMode::Both)
    }

    pub fn uses_internal(self) -> bool {
        matches!(self, DistillMode::Ik | DistillMode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Sampled unannotated pairs per annotated pair (relevance head only).
    pub negative_ratio: f64,
    pub distill: DistillMode,
    /// λ, schedule base and cap; the iteration count is derived from the run.
    pub distill_config: DistillConfig,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            negative_ratio: 3.0,
            distill: DistillMode::Off,
            distill_config: DistillConfig::default(),
            hidden: 32,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.negative_ratio >= 0.0 && self.negative_ratio.is_finite()) {
            return Err(Error::invalid("negative ratio must be non-negative"));
        }
        Ok(())
    }
}

/// Knowledge sources available to predicate training.
#[derive(Debug, Clone, Copy, Default)]
pub struct Knowledge<'a> {
    pub semantic: Option<&'a ConstraintMatrix>,
    pub internal: Option<&'a ConstraintMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput<H> {
    pub head: H,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredicateSample {
    pub input: Vec<f64>,
    pub label: usize,
    pub subject_class: usize,
    pub object_class: usize,
}

/// Predicate head input: subject feature followed by object feature.
pub fn predicate_input(x_s: &[f64], x_o: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x_s.len() + x_o.len());
    v.extend_from_slice(x_s);
    v.extend_from_slice(x_o);
    v
}

fn feature(image: &ImageRecord, region: u32) -> Result<&[f64]> {
    image
        .region(region)
        .and_then(|r| r.feature.as_deref())
        .ok_or(Error::MissingFeatures)
}

fn require_features(dataset: &Dataset) -> Result<()> {
    if dataset.has_features() {
        Ok(())
    } else {
        Err(Error::MissingFeatures)
    }
}

/// One sample per annotation.
pub fn predicate_samples(dataset: &Dataset) -> Result<Vec<PredicateSample>> {
    require_features(dataset)?;
    let mut out = Vec::new();
    for image in &dataset.images {
        for ann in &image.annotations {
            let s = image
                .region(ann.subject_region)
                .ok_or(Error::MissingFeatures)?;
            let o = image
                .region(ann.object_region)
                .ok_or(Error::MissingFeatures)?;
            out.push(PredicateSample {
                input: predicate_input(
                    feature(image, ann.subject_region)?,
                    feature(image, ann.object_region)?,
                ),
                label: ann.predicate_id,
                subject_class: s.class_id,
                object_class: o.class_id,
            });
        }
    }
    Ok(out)
}

/// One sample per region.
pub fn object_samples(dataset: &Dataset) -> Result<Vec<(Vec<f64>, usize)>> {
    require_features(dataset)?;
    Ok(dataset
        .images
        .iter()
        .flat_map(|img| &img.regions)
        .map(|r| (r.feature.clone().expect("checked"), r.class_id))
        .collect())
}

/// `((subject feature, object feature), annotated)`.
pub type RelevanceSample = ((Vec<f64>, Vec<f64>), bool);

/// Every annotated ordered region pair as a positive, plus a seeded uniform
/// sample of unannotated ordered pairs, `negative_ratio` per positive.
pub fn relevance_samples(
    dataset: &Dataset,
    negative_ratio: f64,
    seed: u64,
) -> Result<Vec<RelevanceSample>> {
    require_features(dataset)?;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (img_idx, image) in dataset.images.iter().enumerate() {
        let annotated: HashSet<(u32, u32)> = image
            .annotations
            .iter()
            .map(|a| (a.subject_region, a.object_region))
            .collect();
        for s in &image.regions {
            for o in &image.regions {
                if s.region_id == o.region_id {
                    continue;
                }
                let key = (img_idx, s.region_id, o.region_id);
                if annotated.contains(&(s.region_id, o.region_id)) {
                    positives.push(key);
                } else {
                    negatives.push(key);
                }
            }
        }
    }
    let wanted = ((positives.len() as f64 * negative_ratio).round() as usize).min(negatives.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e65_6773_616d_706c);
    let chosen = rand::seq::index::sample(&mut rng, negatives.len(), wanted);
    let mut picked: Vec<usize> = chosen.into_iter().collect();
    picked.sort_unstable();

    let make = |&(img, s, o): &(usize, u32, u32), positive: bool| -> Result<RelevanceSample> {
        let image = &dataset.images[img];
        Ok((
            (feature(image, s)?.to_vec(), feature(image, o)?.to_vec()),
            positive,
        ))
    };
    let mut out = Vec::with_capacity(positives.len() + picked.len());
    for key in &positives {
        out.push(make(key, true)?);
    }
    for &i in &picked {
        out.push(make(&negatives[i], false)?);
    }
    Ok(out)
}

/// Shared gradient-descent loop. `targets` builds the batch for the sample
/// indices it is given at iteration `t` of `total` iterations.
fn descend<H, F>(head: &mut H, n: usize, config: &TrainConfig, mut targets: F) -> Result<Vec<f64>>
where
    H: Head,
    F: FnMut(&H, &[usize], u64, u64) -> Result<Vec<(H::Input, LossTarget)>>,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0073_6875_6666_6c65);
    let per_epoch = n.div_ceil(config.batch_size) as u64;
    let total = (per_epoch * config.epochs as u64).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut t = 0u64;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = targets(head, chunk, t, total)?;
            let (loss, grad) = batch_gradients(head, &batch)?;
            let mut params = head.params();
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= config.learning_rate * g;
            }
            head.set_params(&params)?;
            epoch_loss += loss * chunk.len() as f64;
            t += 1;
        }
        trace.push(epoch_loss / n.max(1) as f64);
    }
    Ok(trace)
}

pub fn train_relevance(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutput<RelevanceHead>> {
    let samples = relevance_samples(dataset, config.negative_ratio, config.seed)?;
    let mut head = RelevanceHead::new(dataset.feature_dim, config.hidden.max(1), config.seed);
    let loss_trace = descend(&mut head, samples.len(), config, |_, idx, _, _| {
        Ok(idx
            .iter()
            .map(|&i| {
                let (input, positive) = &samples[i];
                (
                    input.clone(),
                    LossTarget::Binary {
                        positive: *positive,
                    },
                )
            })
            .collect())
    })?;
    Ok(TrainOutput { head, loss_trace })
}

pub fn train_object(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutput<MlpHead>> {
    let samples = object_samples(dataset)?;
    let mut head = MlpHead::new(
        dataset.feature_dim,
        config.hidden,
        dataset.vocab.num_objects(),
        config.seed,
    );
    let loss_trace = descend(&mut head, samples.len(), config, |_, idx, _, _| {
        Ok(idx
            .iter()
            .map(|&i| {
                let (x, y) = &samples[i];
                (x.clone(), LossTarget::CrossEntropy { label: *y })
            })
            .collect())
    })?;
    Ok(TrainOutput { head, loss_trace })
}

/// Trains the predicate classifier; with distillation enabled each sample's
/// soft target is the projection of the current output under its knowledge
/// row, mixed in with weight `π(t)`.
pub fn train_predicate(
    dataset: &Dataset,
    knowledge: Knowledge<'_>,
    config: &TrainConfig,
) -> Result<TrainOutput<MlpHead>> {
    let samples = predicate_samples(dataset)?;
    let num_predicates = dataset.vocab.num_predicates();
    let mode = config.distill;

    let mut sources: Vec<(&ConstraintMatrix, bool)> = Vec::new();
    if mode.uses_semantic() {
        let m = knowledge
            .semantic
            .ok_or_else(|| Error::invalid("semantic distillation needs a semantic matrix"))?;
        sources.push((m, true));
    }
    if mode.uses_internal() {
        let m = knowledge
            .internal
            .ok_or_else(|| Error::invalid("internal distillation needs pair statistics"))?;
        sources.push((m, false));
    }
    for (m, _) in &sources {
        if m.num_predicates() != num_predicates {
            return Err(Error::DimensionMismatch {
                expected: num_predicates,
                found: m.num_predicates(),
            });
        }
    }
    // Constraint rows depend only on ground truth, so they are computed once.
    let constraints: Vec<Vec<Vec<f64>>> = samples
        .iter()
        .map(|s| {
            sources
                .iter()
                .map(|(m, semantic)| {
                    let ctx = if *semantic {
                        ConstraintContext::Predicate(s.label)
                    } else {
                        ConstraintContext::Pair {
                            subject: s.subject_class,
                            object: s.object_class,
                        }
                    };
                    m.constraint_values(ctx)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut head = MlpHead::new(
        2 * dataset.feature_dim,
        config.hidden,
        num_predicates,
        config.seed,
    );
    let lambda = config.distill_config.lambda;
    let loss_trace = descend(&mut head, samples.len(), config, |head, idx, t, total| {
        let schedule = DistillConfig {
            max_iterations: total,
            ..config.distill_config
        };
        let pi = pi_schedule(t, &schedule);
        idx.iter()
            .map(|&i| {
                let sample = &samples[i];
                if sources.is_empty() {
                    return Ok((
                        sample.input.clone(),
                        LossTarget::CrossEntropy {
                            label: sample.label,
                        },
                    ));
                }
                let p = Distribution::new(softmax(&head.logits(&sample.input)?))?;
                let mut q = vec![0.0; num_predicates];
                for f in &constraints[i] {
                    let projected = project(&p, f, lambda)?;
                    for (acc, v) in q.iter_mut().zip(projected.probs()) {
                        *acc += v / constraints[i].len() as f64;
                    }
                }
                Ok((
                    sample.input.clone(),
                    LossTarget::Distill {
                        label: sample.label,
                        q,
                        pi,
                    },
                ))
            })
            .collect()
    })?;
    Ok(TrainOutput { head, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BBox, Region, RelAnnotation, Vocabulary};

    fn tiny_dataset() -> Dataset {
        let vocab = Vocabulary::new(
            vec!["man".into(), "horse".into()],
            vec!["riding".into(), "near".into()],
        )
        .unwrap();
        let images = (0..6)
            .map(|i| {
                let shift = i as f64 * 0.1;
                ImageRecord {
                    image_id: format!("i{i}"),
                    regions: vec![
                        Region {
                            region_id: 0,
                            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
                            class_id: 0,
                            feature: Some(vec![1.0 + shift, 0.0]),
                        },
                        Region {
                            region_id: 1,
                            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
                            class_id: 1,
                            feature: Some(vec![0.0, 1.0 - shift]),
                        },
                    ],
                    annotations: vec![RelAnnotation {
                        subject_region: 0,
                        object_region: 1,
                        predicate_id: i % 2,
                    }],
                }
            })
            .collect();
        Dataset {
            vocab,
            feature_dim: 2,
            images,
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            epochs: 0,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train_relevance(&ds, &cfg).unwrap();
        assert_eq!(out.head, RelevanceHead::new(2, 32, 3));
        assert!(out.loss_trace.is_empty());
        let out = train_object(&ds, &cfg).unwrap();
        assert_eq!(out.head, MlpHead::new(2, 32, 2, 3));
    }

    #[test]
    fn missing_features_is_an_error() {
        let mut ds = tiny_dataset();
        ds.images[0].regions[0].feature = None;
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_relevance(&ds, &cfg),
            Err(Error::MissingFeatures)
        ));
        assert!(matches!(
            train_object(&ds, &cfg),
            Err(Error::MissingFeatures)
        ));
        assert!(matches!(
            train_predicate(&ds, Knowledge::default(), &cfg),
            Err(Error::MissingFeatures)
        ));
    }

    #[test]
    fn distillation_requires_knowledge() {
        let cfg = TrainConfig {
            distill: DistillMode::Sk,
            ..TrainConfig::default()
        };
        assert!(train_predicate(&tiny_dataset(), Knowledge::default(), &cfg).is_err());
    }

    #[test]
    fn negatives_follow_ratio() {
        let ds = tiny_dataset();
        let samples = relevance_samples(&ds, 3.0, 0).unwrap();
        // 6 positives, only 6 unannotated ordered pairs exist.
        assert_eq!(samples.iter().filter(|s| s.1).count(), 6);
        assert_eq!(samples.iter().filter(|s| !s.1).count(), 6);
        let samples = relevance_samples(&ds, 0.5, 0).unwrap();
        assert_eq!(samples.iter().filter(|s| !s.1).count(), 3);
    }
}
