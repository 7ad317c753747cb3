//! Domain types shared by every stage of the pipeline: class vocabularies,
//! annotated images and probability vectors.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`Distribution`].
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Object (`𝒞`) and predicate (`𝒱`) class lists with dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    object_classes: Vec<String>,
    predicate_classes: Vec<String>,
    object_ids: HashMap<String, usize>,
    predicate_ids: HashMap<String, usize>,
}

fn index_names(kind: &str, names: &[String]) -> Result<HashMap<String, usize>> {
    let mut ids = HashMap::with_capacity(names.len());
    for (id, name) in names.iter().enumerate() {
        if name.trim().is_empty() {
            return Err(Error::invalid(format!(
                "empty {kind} class name at position {id}"
            )));
        }
        if ids.insert(name.clone(), id).is_some() {
            return Err(Error::invalid(format!("duplicate {kind} class {name:?}")));
        }
    }
    Ok(ids)
}

impl Vocabulary {
    pub fn new(object_classes: Vec<String>, predicate_classes: Vec<String>) -> Result<Self> {
        let object_ids = index_names("object", &object_classes)?;
        let predicate_ids = index_names("predicate", &predicate_classes)?;
        Ok(Self {
            object_classes,
            predicate_classes,
            object_ids,
            predicate_ids,
        })
    }

    pub fn num_objects(&self) -> usize {
        self.object_classes.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicate_classes.len()
    }

    pub fn object_classes(&self) -> &[String] {
        &self.object_classes
    }

    pub fn predicate_classes(&self) -> &[String] {
        &self.predicate_classes
    }

    pub fn object_name(&self, id: usize) -> Option<&str> {
        self.object_classes.get(id).map(String::as_str)
    }

    pub fn predicate_name(&self, id: usize) -> Option<&str> {
        self.predicate_classes.get(id).map(String::as_str)
    }

    pub fn object_id(&self, name: &str) -> Option<usize> {
        self.object_ids.get(name).copied()
    }

    pub fn predicate_id(&self, name: &str) -> Option<usize> {
        self.predicate_ids.get(name).copied()
    }

    /// Stable fingerprint of both class lists, embedded in every artifact.
    ///
    /// First 16 hex digits of SHA-256 over the length-prefixed names.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for list in [&self.object_classes, &self.predicate_classes] {
            hasher.update((list.len() as u64).to_le_bytes());
            for name in list {
                hasher.update((name.len() as u64).to_le_bytes());
                hasher.update(name.as_bytes());
            }
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Box convention is (x, y, width, height), top-left origin, pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub region_id: u32,
    pub bbox: BBox,
    pub class_id: usize,
    pub feature: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelAnnotation {
    pub subject_region: u32,
    pub object_region: u32,
    pub predicate_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub regions: Vec<Region>,
    pub annotations: Vec<RelAnnotation>,
}

impl ImageRecord {
    pub fn region(&self, region_id: u32) -> Option<&Region> {
        self.regions.iter().find(|r| r.region_id == region_id)
    }

    /// Checks region uniqueness, box sizes, class ranges, feature lengths and
    /// annotation references against `vocab` and the declared dimension.
    pub fn validate(&self, vocab: &Vocabulary, feature_dim: usize) -> Result<()> {
        let invalid = |detail: String| Error::InvalidImage {
            image_id: self.image_id.clone(),
            detail,
        };
        let mut seen = std::collections::HashSet::new();
        for region in &self.regions {
            if !seen.insert(region.region_id) {
                return Err(invalid(format!("duplicate region id {}", region.region_id)));
            }
            if !(region.bbox.width > 0.0 && region.bbox.height > 0.0) {
                return Err(invalid(format!(
                    "region {} has non-positive box size",
                    region.region_id
                )));
            }
            if region.class_id >= vocab.num_objects() {
                return Err(invalid(format!(
                    "region {} has class id {} out of range",
                    region.region_id, region.class_id
                )));
            }
            if let Some(feature) = &region.feature {
                if feature.len() != feature_dim {
                    return Err(Error::FeatureLength {
                        image_id: self.image_id.clone(),
                        expected: feature_dim,
                        found: feature.len(),
                    });
                }
            }
        }
        for ann in &self.annotations {
            for region in [ann.subject_region, ann.object_region] {
                if !seen.contains(&region) {
                    return Err(Error::UnknownRegion {
                        image_id: self.image_id.clone(),
                        region,
                    });
                }
            }
            if ann.subject_region == ann.object_region {
                return Err(invalid(format!(
                    "annotation relates region {} to itself",
                    ann.subject_region
                )));
            }
            if ann.predicate_id >= vocab.num_predicates() {
                return Err(invalid(format!(
                    "predicate id {} out of range",
                    ann.predicate_id
                )));
            }
        }
        Ok(())
    }
}

/// A loaded annotation file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub feature_dim: usize,
    pub images: Vec<ImageRecord>,
}

impl Dataset {
    pub fn has_features(&self) -> bool {
        self.feature_dim > 0
            && self
                .images
                .iter()
                .flat_map(|img| &img.regions)
                .all(|r| r.feature.is_some())
    }
}

/// A probability vector: non-negative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Wraps `probs` after checking non-negativity and total mass.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::DegenerateDistribution);
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::DegenerateDistribution);
        }
        Ok(Self(probs))
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }
}

/// Rescales a non-negative vector to unit mass.
pub fn normalize(v: &[f64]) -> Result<Distribution> {
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::DegenerateDistribution);
    }
    let total: f64 = v.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::DegenerateDistribution);
    }
    Ok(Distribution(v.iter().map(|x| x / total).collect()))
}

/// Numerically stable softmax of arbitrary finite logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 2.0]).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(normalize(&[1.0, 3.0]).unwrap().probs(), &[0.25, 0.75]);
        assert!(matches!(
            normalize(&[0.0, 0.0]),
            Err(Error::DegenerateDistribution)
        ));
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        assert!(Vocabulary::new(names(&["a", "a"]), names(&["on"])).is_err());
        assert!(Vocabulary::new(names(&["a"]), names(&["on", "on"])).is_err());
    }

    #[test]
    fn vocabulary_hash_depends_on_order_and_split() {
        let a = Vocabulary::new(names(&["a", "b"]), names(&["on"])).unwrap();
        let b = Vocabulary::new(names(&["b", "a"]), names(&["on"])).unwrap();
        let c = Vocabulary::new(names(&["a"]), names(&["b", "on"])).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
        assert_eq!(a.hash(), a.clone().hash());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        let d = Distribution::new(vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(d.argmax(), 0);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in proptest::collection::vec(0.0f64..100.0, 1..12)) {
            prop_assume!(v.iter().sum::<f64>() > 1e-9);
            let once = normalize(&v).unwrap();
            let twice = normalize(once.probs()).unwrap();
            prop_assert!((once.probs().iter().sum::<f64>() - 1.0).abs() <= MASS_TOLERANCE);
            for (a, b) in once.probs().iter().zip(twice.probs()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn vocabulary_lookup_is_bijective(n in 1usize..30, m in 1usize..30) {
            let objs: Vec<String> = (0..n).map(|i| format!("obj{i}")).collect();
            let preds: Vec<String> = (0..m).map(|i| format!("pred{i}")).collect();
            let vocab = Vocabulary::new(objs, preds).unwrap();
            for id in 0..n {
                prop_assert_eq!(vocab.object_id(vocab.object_name(id).unwrap()), Some(id));
            }
            for id in 0..m {
                prop_assert_eq!(vocab.predicate_id(vocab.predicate_name(id).unwrap()), Some(id));
            }
        }
    }
}
