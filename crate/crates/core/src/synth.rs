//! Seeded synthetic scene graphs with planted structure.
//!
//! The generator plants exactly what the ranking and distillation
//! mechanisms are meant to exploit:
//! - predicate synonym clusters, visible only through the embeddings;
//! - a per-head-pair predicate prior concentrated on one cluster;
//! - a head-pair annotation probability table (relevance skew), modulated by
//!   a per-region salience that is visible in the region features;
//! - Zipfian predicate frequencies.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ArtifactMeta;
use crate::stats::head_word;
use crate::types::{BBox, Dataset, ImageRecord, Region, RelAnnotation, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    /// Number of object classes.
    pub num_objects: usize,
    /// Number of distinct head words; classes beyond this get a modifier
    /// word in front of an existing head.
    pub num_object_heads: usize,
    pub num_predicates: usize,
    pub num_clusters: usize,
    /// Norm of the perturbation added to each predicate's cluster direction.
    pub cluster_noise: f64,
    pub embedding_dim: usize,
    pub zipf_exponent: f64,
    /// Weight of the pair's cluster in its predicate prior.
    pub pair_specificity: f64,
    /// Fraction of head pairs that are drawn as relevant.
    pub relevant_pair_fraction: f64,
    pub relevant_probability: f64,
    pub background_probability: f64,
    /// Explicit `(subject head, object head) → probability` entries that
    /// replace the drawn ones.
    pub relevance_overrides: Vec<RelevanceEntry>,
    /// Annotation probability is scaled by `1 − effect · (1 − mean salience)`.
    pub salience_effect: f64,
    pub salience_scale: f64,
    pub train_images: usize,
    pub test_images: usize,
    pub min_regions: usize,
    pub max_regions: usize,
    pub feature_dim: usize,
    pub centroid_scale: f64,
    pub feature_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_objects: 30,
            num_object_heads: 24,
            num_predicates: 50,
            num_clusters: 10,
            cluster_noise: 0.1,
            embedding_dim: 24,
            zipf_exponent: 1.0,
            pair_specificity: 0.7,
            relevant_pair_fraction: 0.15,
            relevant_probability: 0.6,
            background_probability: 0.01,
            relevance_overrides: Vec::new(),
            salience_effect: 1.0,
            salience_scale: 5.0,
            train_images: 500,
            test_images: 200,
            min_regions: 8,
            max_regions: 14,
            feature_dim: 16,
            centroid_scale: 1.0,
            feature_noise: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceEntry {
    pub subject: String,
    pub object: String,
    pub probability: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_objects", self.num_objects),
            ("num_object_heads", self.num_object_heads),
            ("num_predicates", self.num_predicates),
            ("num_clusters", self.num_clusters),
            ("embedding_dim", self.embedding_dim),
            ("train_images", self.train_images),
            ("min_regions", self.min_regions),
            ("max_regions", self.max_regions),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.num_object_heads > self.num_objects {
            return Err(Error::invalid("num_object_heads exceeds num_objects"));
        }
        if self.num_clusters > self.num_predicates {
            return Err(Error::invalid("more clusters than predicates"));
        }
        if self.min_regions > self.max_regions {
            return Err(Error::invalid("min_regions exceeds max_regions"));
        }
        let probabilities = [
            ("pair_specificity", self.pair_specificity),
            ("relevant_pair_fraction", self.relevant_pair_fraction),
            ("relevant_probability", self.relevant_probability),
            ("background_probability", self.background_probability),
            ("salience_effect", self.salience_effect),
        ];
        for (name, v) in probabilities.into_iter().chain(
            self.relevance_overrides
                .iter()
                .map(|e| ("relevance override", e.probability)),
        ) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if !(self.cluster_noise >= 0.0 && self.cluster_noise < 1.0) {
            return Err(Error::invalid("cluster_noise must lie in [0, 1)"));
        }
        for (name, v) in [
            ("zipf_exponent", self.zipf_exponent),
            ("feature_noise", self.feature_noise),
            ("centroid_scale", self.centroid_scale),
            ("salience_scale", self.salience_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Lower bound on the cosine similarity of two predicates of one cluster:
    /// each embedding is a unit direction plus a perturbation of norm σ, so
    /// `cos ≥ (1 − 2σ − σ²) / (1 + σ)²`.
    pub fn intra_cluster_similarity_bound(&self) -> f64 {
        let s = self.cluster_noise;
        (1.0 - 2.0 * s - s * s) / ((1.0 + s) * (1.0 + s))
    }

    /// Cluster of predicate `v`.
    pub fn cluster_of(&self, v: usize) -> usize {
        v % self.num_clusters
    }

    /// Zipf weights `1 / (v + 1)^s`, unnormalized.
    pub fn zipf_weights(&self) -> Vec<f64> {
        (0..self.num_predicates)
            .map(|v| 1.0 / ((v + 1) as f64).powf(self.zipf_exponent))
            .collect()
    }
}

/// Planted ground truth written next to the generated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub meta: ArtifactMeta,
    pub intra_cluster_similarity_bound: f64,
    pub clusters: Vec<Vec<String>>,
    /// Annotation probability and predicate cluster of each head pair.
    pub pairs: Vec<PlantedPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub subject: String,
    pub object: String,
    pub probability: f64,
    pub cluster: usize,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub train: Dataset,
    pub test: Dataset,
    /// Predicate and object token embeddings in text format.
    pub embeddings: String,
    pub truth: SynthTruth,
    pub meta: ArtifactMeta,
    /// Latent salience of every test region, indexed like `test.images`.
    pub test_salience: Vec<Vec<bool>>,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Injective pseudo-word of three consonant-vowel syllables.
fn pseudo_word(mut i: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut word = String::with_capacity(6);
    for _ in 0..3 {
        let syl = i % base;
        i /= base;
        word.push(CONSONANTS[syl / VOWELS.len()] as char);
        word.push(VOWELS[syl % VOWELS.len()] as char);
    }
    word
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v
    } else {
        v.into_iter().map(|x| x / norm).collect()
    }
}

fn format_vector(out: &mut String, token: &str, v: &[f64]) {
    out.push_str(token);
    for x in v {
        let _ = write!(out, " {x}");
    }
    out.push('\n');
}

/// Generates train/test datasets, embeddings and the planted truth.
pub fn synth(spec: &SynthSpec) -> Result<Synthesis> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let heads: Vec<String> = (0..spec.num_object_heads).map(pseudo_word).collect();
    let object_classes: Vec<String> = (0..spec.num_objects)
        .map(|c| {
            if c < spec.num_object_heads {
                heads[c].clone()
            } else {
                let modifier = pseudo_word(5000 + c);
                format!("{modifier} {}", heads[c % spec.num_object_heads])
            }
        })
        .collect();
    let predicate_classes: Vec<String> = (0..spec.num_predicates)
        .map(|v| pseudo_word(10_000 + v))
        .collect();
    let vocab = Vocabulary::new(object_classes.clone(), predicate_classes.clone())?;
    debug_assert!(object_classes
        .iter()
        .enumerate()
        .all(|(c, name)| head_word(name) == heads[c % spec.num_object_heads]));
    let meta = ArtifactMeta::new(&vocab, spec.seed);

    // Predicate embeddings: cluster direction plus a perturbation of fixed norm.
    let cluster_dirs: Vec<Vec<f64>> = (0..spec.num_clusters)
        .map(|_| unit(gaussian_vec(&mut rng, spec.embedding_dim)))
        .collect();
    let mut embeddings = String::new();
    for (v, name) in predicate_classes.iter().enumerate() {
        let noise = unit(gaussian_vec(&mut rng, spec.embedding_dim));
        let e: Vec<f64> = cluster_dirs[spec.cluster_of(v)]
            .iter()
            .zip(&noise)
            .map(|(c, n)| c + spec.cluster_noise * n)
            .collect();
        format_vector(&mut embeddings, name, &e);
    }
    for head in &heads {
        let e = unit(gaussian_vec(&mut rng, spec.embedding_dim));
        format_vector(&mut embeddings, head, &e);
    }

    // Head-pair relevance and predicate cluster.
    let zipf = spec.zipf_weights();
    let mut cluster_mass = vec![0.0; spec.num_clusters];
    for (v, w) in zipf.iter().enumerate() {
        cluster_mass[spec.cluster_of(v)] += w;
    }
    let cluster_pick =
        WeightedIndex::new(&cluster_mass).map_err(|e| Error::invalid(e.to_string()))?;
    let overrides: BTreeMap<(String, String), f64> = spec
        .relevance_overrides
        .iter()
        .map(|e| ((e.subject.clone(), e.object.clone()), e.probability))
        .collect();
    let nh = spec.num_object_heads;
    let mut pair_prob = vec![0.0; nh * nh];
    let mut pair_cluster = vec![0usize; nh * nh];
    let mut planted = Vec::with_capacity(nh * nh);
    for a in 0..nh {
        for b in 0..nh {
            let relevant = rng.random_bool(spec.relevant_pair_fraction);
            let drawn = if relevant {
                spec.relevant_probability
            } else {
                spec.background_probability
            };
            let cluster = cluster_pick.sample(&mut rng);
            let p = overrides
                .get(&(heads[a].clone(), heads[b].clone()))
                .copied()
                .unwrap_or(drawn);
            pair_prob[a * nh + b] = p;
            pair_cluster[a * nh + b] = cluster;
            planted.push(PlantedPair {
                subject: heads[a].clone(),
                object: heads[b].clone(),
                probability: p,
                cluster,
            });
        }
    }
    // P(v | pair) = (1 − ρ)·Zipf + ρ·Zipf restricted to the pair's cluster.
    let predicate_priors: Vec<WeightedIndex<f64>> = (0..spec.num_clusters)
        .map(|k| {
            let w: Vec<f64> = zipf
                .iter()
                .enumerate()
                .map(|(v, z)| {
                    let total: f64 = zipf.iter().sum();
                    let inside = if spec.cluster_of(v) == k {
                        z / cluster_mass[k]
                    } else {
                        0.0
                    };
                    (1.0 - spec.pair_specificity) * z / total + spec.pair_specificity * inside
                })
                .collect();
            WeightedIndex::new(&w).map_err(|e| Error::invalid(e.to_string()))
        })
        .collect::<Result<_>>()?;

    let centroids: Vec<Vec<f64>> = (0..spec.num_objects)
        .map(|_| {
            gaussian_vec(&mut rng, spec.feature_dim)
                .into_iter()
                .map(|x| x * spec.centroid_scale)
                .collect()
        })
        .collect();
    let salience_dir = unit(gaussian_vec(&mut rng, spec.feature_dim));

    let mut make_images = |count: usize, prefix: &str| -> (Vec<ImageRecord>, Vec<Vec<bool>>) {
        (0..count)
            .map(|i| {
                let n = rng.random_range(spec.min_regions..=spec.max_regions);
                let mut salience = Vec::with_capacity(n);
                let regions: Vec<Region> = (0..n)
                    .map(|r| {
                        let class_id = rng.random_range(0..spec.num_objects);
                        let z = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                        salience.push(z);
                        let noise = gaussian_vec(&mut rng, spec.feature_dim);
                        let feature = centroids[class_id]
                            .iter()
                            .zip(&noise)
                            .zip(&salience_dir)
                            .map(|((c, e), d)| {
                                c + spec.feature_noise * e + spec.salience_scale * (z - 0.5) * d
                            })
                            .collect();
                        let x = rng.random_range(0.0..500.0_f64).round();
                        let y = rng.random_range(0.0..500.0_f64).round();
                        let w = rng.random_range(10.0..200.0_f64).round();
                        let h = rng.random_range(10.0..200.0_f64).round();
                        Region {
                            region_id: r as u32,
                            bbox: BBox::new(x, y, w, h),
                            class_id,
                            feature: Some(feature),
                        }
                    })
                    .collect();
                let mut annotations = Vec::new();
                for (si, s) in regions.iter().enumerate() {
                    for (oi, o) in regions.iter().enumerate() {
                        if si == oi {
                            continue;
                        }
                        let key = (s.class_id % nh) * nh + o.class_id % nh;
                        let mean_salience = 0.5 * (salience[si] + salience[oi]);
                        let p =
                            pair_prob[key] * (1.0 - spec.salience_effect * (1.0 - mean_salience));
                        if rng.random_bool(p.clamp(0.0, 1.0)) {
                            let v = predicate_priors[pair_cluster[key]].sample(&mut rng);
                            annotations.push(RelAnnotation {
                                subject_region: s.region_id,
                                object_region: o.region_id,
                                predicate_id: v,
                            });
                        }
                    }
                }
                let image = ImageRecord {
                    image_id: format!("{prefix}{i:05}"),
                    regions,
                    annotations,
                };
                (image, salience.iter().map(|&z| z > 0.5).collect::<Vec<_>>())
            })
            .unzip()
    };
    let (train_images, _) = make_images(spec.train_images, "train-");
    let (test_images, test_salience) = make_images(spec.test_images, "test-");

    let clusters = (0..spec.num_clusters)
        .map(|k| {
            (0..spec.num_predicates)
                .filter(|&v| spec.cluster_of(v) == k)
                .map(|v| predicate_classes[v].clone())
                .collect()
        })
        .collect();
    let truth = SynthTruth {
        meta: meta.clone(),
        intra_cluster_similarity_bound: spec.intra_cluster_similarity_bound(),
        clusters,
        pairs: planted,
    };
    Ok(Synthesis {
        train: Dataset {
            vocab: vocab.clone(),
            feature_dim: spec.feature_dim,
            images: train_images,
        },
        test: Dataset {
            vocab,
            feature_dim: spec.feature_dim,
            images: test_images,
        },
        embeddings,
        truth,
        meta,
        test_salience,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::frequency_groups;
    use crate::io::{embed_predicates, EmbeddingTable};
    use crate::knowledge::cosine_similarity;

    fn small() -> SynthSpec {
        SynthSpec {
            train_images: 40,
            test_images: 10,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn pseudo_words_are_distinct_and_alphabetic() {
        let words: std::collections::HashSet<String> = (0..20_000).map(pseudo_word).collect();
        assert_eq!(words.len(), 20_000);
        assert!(words
            .iter()
            .all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
    }

    #[test]
    fn deterministic_given_seed() {
        let a = synth(&small()).unwrap();
        let b = synth(&small()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.embeddings, b.embeddings);
        let c = synth(&SynthSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn zero_noise_clusters_are_parallel() {
        let spec = SynthSpec {
            cluster_noise: 0.0,
            ..small()
        };
        let s = synth(&spec).unwrap();
        let table = EmbeddingTable::parse(&s.embeddings, "synth").unwrap();
        let emb = embed_predicates(table, &s.train.vocab);
        for a in 0..spec.num_predicates {
            for b in 0..spec.num_predicates {
                if spec.cluster_of(a) == spec.cluster_of(b) {
                    let sim =
                        cosine_similarity(&emb.predicate_vectors[a], &emb.predicate_vectors[b])
                            .unwrap();
                    assert!((sim - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn noisy_clusters_respect_bound() {
        let spec = small();
        let s = synth(&spec).unwrap();
        let emb = embed_predicates(
            EmbeddingTable::parse(&s.embeddings, "synth").unwrap(),
            &s.train.vocab,
        );
        let bound = spec.intra_cluster_similarity_bound();
        assert!(bound > 0.0);
        for a in 0..spec.num_predicates {
            for b in 0..spec.num_predicates {
                if spec.cluster_of(a) == spec.cluster_of(b) {
                    let sim =
                        cosine_similarity(&emb.predicate_vectors[a], &emb.predicate_vectors[b])
                            .unwrap();
                    assert!(sim >= bound - 1e-12, "{sim} < {bound}");
                }
            }
        }
    }

    #[test]
    fn certain_pairs_are_always_annotated() {
        let base = small();
        let mut spec = SynthSpec {
            salience_effect: 0.0,
            relevant_pair_fraction: 0.0,
            background_probability: 0.0,
            ..base
        };
        let h0 = pseudo_word(0);
        let h1 = pseudo_word(1);
        spec.relevance_overrides = vec![RelevanceEntry {
            subject: h0.clone(),
            object: h1.clone(),
            probability: 1.0,
        }];
        let s = synth(&spec).unwrap();
        let mut seen = 0;
        for image in &s.train.images {
            for a in &image.regions {
                for b in &image.regions {
                    if a.region_id == b.region_id {
                        continue;
                    }
                    let heads = (
                        head_word(&s.train.vocab.object_classes()[a.class_id]),
                        head_word(&s.train.vocab.object_classes()[b.class_id]),
                    );
                    let annotated = image
                        .annotations
                        .iter()
                        .any(|r| r.subject_region == a.region_id && r.object_region == b.region_id);
                    if heads == (h0.clone(), h1.clone()) {
                        seen += 1;
                        assert!(annotated);
                    } else {
                        assert!(!annotated);
                    }
                }
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn zipf_top_ten_share() {
        let spec = SynthSpec {
            zipf_exponent: 1.0,
            num_predicates: 50,
            train_images: 600,
            test_images: 0,
            ..SynthSpec::default()
        };
        let s = synth(&spec).unwrap();
        let mut counts = vec![0u64; 50];
        for img in &s.train.images {
            for a in &img.annotations {
                counts[a.predicate_id] += 1;
            }
        }
        // Analytic share: H(10) / H(50) for exponent 1.
        let h = |n: usize| (1..=n).map(|k| 1.0 / k as f64).sum::<f64>();
        let analytic = 100.0 * h(10) / h(50);
        let groups = frequency_groups(&counts);
        assert!(
            (groups[0].train_share - analytic).abs() <= 5.0,
            "{} vs {analytic}",
            groups[0].train_share
        );
        assert!(groups[0].train_share >= groups[1].train_share);
    }

    #[test]
    fn invalid_specs() {
        assert!(synth(&SynthSpec {
            num_objects: 0,
            ..small()
        })
        .is_err());
        assert!(synth(&SynthSpec {
            relevant_probability: 1.5,
            ..small()
        })
        .is_err());
        assert!(synth(&SynthSpec {
            num_object_heads: 40,
            ..small()
        })
        .is_err());
    }
}
