//! Co-occurrence and annotation counts over the training split, keyed by the
//! head words of the subject and object class names.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, ArtifactMeta};
use crate::types::{Dataset, Distribution, Vocabulary};

/// Lower bound applied to the count-based relevance estimate.
pub const RELEVANCE_FLOOR: f64 = 0.01;

/// Default additive smoothing for `P(v | s, o)`.
pub const DEFAULT_ALPHA: f64 = 0.1;

const PREPOSITIONS: &[&str] = &[
    "of", "on", "in", "with", "at", "near", "above", "under", "behind", "by", "for", "from", "to",
];

/// Representative word of a class name: everything from the first
/// preposition on is dropped and the rightmost remaining word is kept.
pub fn head_word(class_name: &str) -> String {
    let lowered = class_name.to_lowercase();
    let mut kept = Vec::new();
    for token in lowered.split_whitespace() {
        let word: String = token.chars().filter(|c| c.is_alphabetic()).collect();
        if PREPOSITIONS.contains(&word.as_str()) {
            break;
        }
        if !word.is_empty() {
            kept.push(word);
        }
    }
    kept.pop().unwrap_or(lowered)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadPair {
    pub subject: String,
    pub object: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub cooc: u64,
    pub rel: u64,
    /// Sparse per-predicate annotation counts; zero entries are absent.
    pub predicates: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub meta: ArtifactMeta,
    pub num_predicates: usize,
    pub head_of: Vec<String>,
    pub pairs: BTreeMap<HeadPair, PairCounts>,
}

#[derive(Serialize, Deserialize)]
struct PairEntry {
    subject: String,
    object: String,
    cooc: u64,
    rel: u64,
    /// `[predicate id, count]` pairs.
    predicates: Vec<(usize, u64)>,
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    meta: ArtifactMeta,
    num_predicates: usize,
    head_of: Vec<String>,
    pairs: Vec<PairEntry>,
}

impl PairStats {
    pub fn key(&self, s: usize, o: usize) -> HeadPair {
        HeadPair {
            subject: self.head_of[s].clone(),
            object: self.head_of[o].clone(),
        }
    }

    pub fn counts(&self, s: usize, o: usize) -> Option<&PairCounts> {
        self.pairs.get(&self.key(s, o))
    }

    /// Training annotation count of every predicate.
    pub fn predicate_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.num_predicates];
        for counts in self.pairs.values() {
            for (&v, &n) in &counts.predicates {
                totals[v] += n;
            }
        }
        totals
    }

    pub fn to_json(&self) -> Result<String> {
        let file = StatsFile {
            meta: self.meta.clone(),
            num_predicates: self.num_predicates,
            head_of: self.head_of.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|(k, c)| PairEntry {
                    subject: k.subject.clone(),
                    object: k.object.clone(),
                    cooc: c.cooc,
                    rel: c.rel,
                    predicates: c.predicates.iter().map(|(&v, &n)| (v, n)).collect(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: StatsFile = serde_json::from_str(text)?;
        let mut pairs = BTreeMap::new();
        for entry in file.pairs {
            let c = PairCounts {
                cooc: entry.cooc,
                rel: entry.rel,
                predicates: entry.predicates.iter().copied().collect(),
            };
            if c.predicates.len() != entry.predicates.len() {
                return Err(Error::Artifact(
                    "duplicate predicate id in pair counts".into(),
                ));
            }
            let total: u64 = c.predicates.values().sum();
            if total != c.rel {
                return Err(Error::Artifact(format!(
                    "inconsistent counts for ({}, {})",
                    entry.subject, entry.object
                )));
            }
            if c.predicates.keys().any(|&v| v >= file.num_predicates) {
                return Err(Error::Artifact("predicate id out of range".into()));
            }
            pairs.insert(
                HeadPair {
                    subject: entry.subject,
                    object: entry.object,
                },
                c,
            );
        }
        Ok(Self {
            meta: file.meta,
            num_predicates: file.num_predicates,
            head_of: file.head_of,
            pairs,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_text(path, &self.to_json()?)
    }

    /// Validates that these statistics were built for `vocab`.
    pub fn check_vocab(&self, vocab: &Vocabulary, source: &str) -> Result<()> {
        io::check_vocab_hash(&self.meta.vocab_hash, "stats", &vocab.hash(), source)
    }
}

/// Counts every ordered pair of distinct regions as one co-occurrence and
/// every annotation (duplicates included) as one relation.
pub fn build_pair_stats(dataset: &Dataset, seed: u64) -> Result<PairStats> {
    if dataset.images.is_empty() {
        return Err(Error::invalid(
            "cannot build statistics from an empty dataset",
        ));
    }
    let vocab = &dataset.vocab;
    let head_of: Vec<String> = vocab
        .object_classes()
        .iter()
        .map(|c| head_word(c))
        .collect();
    let mut pairs: BTreeMap<HeadPair, PairCounts> = BTreeMap::new();
    let key = |s: usize, o: usize| HeadPair {
        subject: head_of[s].clone(),
        object: head_of[o].clone(),
    };

    for image in &dataset.images {
        for (i, a) in image.regions.iter().enumerate() {
            for (j, b) in image.regions.iter().enumerate() {
                if i != j {
                    pairs.entry(key(a.class_id, b.class_id)).or_default().cooc += 1;
                }
            }
        }
        for ann in &image.annotations {
            // Validated images always resolve both regions.
            let s = image
                .region(ann.subject_region)
                .expect("validated")
                .class_id;
            let o = image.region(ann.object_region).expect("validated").class_id;
            let entry = pairs.entry(key(s, o)).or_default();
            entry.rel += 1;
            *entry.predicates.entry(ann.predicate_id).or_default() += 1;
        }
    }

    Ok(PairStats {
        meta: ArtifactMeta::new(vocab, seed),
        num_predicates: vocab.num_predicates(),
        head_of,
        pairs,
    })
}

/// `max(0.01, n_relations / n_cooccurrences)` for the head pair of `(s, o)`,
/// capped at 1 since duplicate annotations can push the ratio above it.
pub fn relevance_estimate(stats: &PairStats, s: usize, o: usize) -> f64 {
    match stats.counts(s, o) {
        Some(c) if c.cooc > 0 => (c.rel as f64 / c.cooc as f64).clamp(RELEVANCE_FLOOR, 1.0),
        _ => RELEVANCE_FLOOR,
    }
}

/// Additively smoothed `P(v | s, o)`; unseen pairs give the uniform distribution.
pub fn internal_constraint(
    stats: &PairStats,
    s: usize,
    o: usize,
    alpha: f64,
) -> Result<Distribution> {
    smoothed_row(stats.counts(s, o), stats.num_predicates, alpha)
}

/// `(count_v + α) / (n_relations + α·|V|)` for one head pair.
pub fn smoothed_row(
    counts: Option<&PairCounts>,
    num_predicates: usize,
    alpha: f64,
) -> Result<Distribution> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!(
            "smoothing alpha must be positive, got {alpha}"
        )));
    }
    let n = num_predicates;
    let Some(counts) = counts else {
        return Ok(Distribution::uniform(n));
    };
    let denom = counts.rel as f64 + alpha * n as f64;
    let probs = (0..n)
        .map(|v| (counts.predicates.get(&v).copied().unwrap_or(0) as f64 + alpha) / denom)
        .collect();
    Distribution::new(probs)
}
