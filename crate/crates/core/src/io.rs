//! Annotation and embedding file readers/writers, plus the metadata block
//! every serialized artifact carries.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BBox, Dataset, ImageRecord, Region, RelAnnotation, Vocabulary};

pub const TOOL_VERSION: &str = concat!("relguide ", env!("CARGO_PKG_VERSION"));

/// Provenance stamped into every artifact file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub vocab_hash: String,
    pub seed: u64,
    pub tool_version: String,
}

impl ArtifactMeta {
    pub fn new(vocab: &Vocabulary, seed: u64) -> Self {
        Self {
            vocab_hash: vocab.hash(),
            seed,
            tool_version: TOOL_VERSION.to_string(),
        }
    }
}

/// Fails with both hashes named when two artifacts disagree on vocabulary.
pub fn check_vocab_hash(
    left: &str,
    left_source: &str,
    right: &str,
    right_source: &str,
) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::VocabMismatch {
            left: left.to_string(),
            left_source: left_source.to_string(),
            right: right.to_string(),
            right_source: right_source.to_string(),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    object_classes: Vec<String>,
    predicate_classes: Vec<String>,
    feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool_version: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionRecord {
    id: u32,
    bbox: [f64; 4],
    class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationshipRecord {
    sub: u32,
    pred: String,
    obj: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageLine {
    image_id: String,
    regions: Vec<RegionRecord>,
    #[serde(default)]
    relationships: Vec<RelationshipRecord>,
}

fn malformed(line: usize, field: &str, detail: impl ToString) -> Error {
    Error::Malformed {
        line,
        field: field.to_string(),
        detail: detail.to_string(),
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

/// Parses the line-delimited annotation format; line numbers are 1-based.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let (header_line, header_text) = lines
        .next()
        .ok_or_else(|| malformed(1, "header", "empty annotation file"))?;
    let header: HeaderRecord =
        serde_json::from_str(header_text).map_err(|e| malformed(header_line, "header", e))?;
    let vocab = Vocabulary::new(header.object_classes, header.predicate_classes)
        .map_err(|e| malformed(header_line, "header", e))?;
    if let Some(declared) = &header.vocab_hash {
        check_vocab_hash(declared, "file header", &vocab.hash(), "class lists")?;
    }
    let feature_dim = header.feature_dim;

    let mut images = Vec::new();
    for (line_no, line) in lines {
        let raw: ImageLine =
            serde_json::from_str(line).map_err(|e| malformed(line_no, "image record", e))?;
        let mut regions = Vec::with_capacity(raw.regions.len());
        for r in raw.regions {
            let class_id = vocab.object_id(&r.class).ok_or_else(|| {
                malformed(
                    line_no,
                    "class",
                    format!("unknown object class {:?}", r.class),
                )
            })?;
            let [x, y, w, h] = r.bbox;
            regions.push(Region {
                region_id: r.id,
                bbox: BBox::new(x, y, w, h),
                class_id,
                feature: r.feature,
            });
        }
        let mut annotations = Vec::with_capacity(raw.relationships.len());
        for rel in raw.relationships {
            let predicate_id = vocab.predicate_id(&rel.pred).ok_or_else(|| {
                malformed(
                    line_no,
                    "pred",
                    format!("unknown predicate class {:?}", rel.pred),
                )
            })?;
            annotations.push(RelAnnotation {
                subject_region: rel.sub,
                object_region: rel.obj,
                predicate_id,
            });
        }
        let image = ImageRecord {
            image_id: raw.image_id,
            regions,
            annotations,
        };
        image.validate(&vocab, feature_dim)?;
        images.push(image);
    }

    Ok(Dataset {
        vocab,
        feature_dim,
        images,
    })
}

/// Serializes `dataset` in the annotation format, optionally stamping the
/// header with provenance.
pub fn format_dataset(dataset: &Dataset, meta: Option<&ArtifactMeta>) -> Result<String> {
    let vocab = &dataset.vocab;
    let header = HeaderRecord {
        object_classes: vocab.object_classes().to_vec(),
        predicate_classes: vocab.predicate_classes().to_vec(),
        feature_dim: dataset.feature_dim,
        vocab_hash: meta.map(|m| m.vocab_hash.clone()),
        seed: meta.map(|m| m.seed),
        tool_version: meta.map(|m| m.tool_version.clone()),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for image in &dataset.images {
        let line = ImageLine {
            image_id: image.image_id.clone(),
            regions: image
                .regions
                .iter()
                .map(|r| RegionRecord {
                    id: r.region_id,
                    bbox: [r.bbox.x, r.bbox.y, r.bbox.width, r.bbox.height],
                    class: vocab.object_classes()[r.class_id].clone(),
                    feature: r.feature.clone(),
                })
                .collect(),
            relationships: image
                .annotations
                .iter()
                .map(|a| RelationshipRecord {
                    sub: a.subject_region,
                    pred: vocab.predicate_classes()[a.predicate_id].clone(),
                    obj: a.object_region,
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(
    path: impl AsRef<Path>,
    dataset: &Dataset,
    meta: Option<&ArtifactMeta>,
) -> Result<()> {
    write_text(path, &format_dataset(dataset, meta)?)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Token vectors as read from a whitespace-separated text embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| {
                    Error::Embeddings(source.to_string(), format!("line {}: {e}", i + 1))
                })?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Embeddings(
                        source.to_string(),
                        format!(
                            "line {}: dimension {} differs from {}",
                            i + 1,
                            values.len(),
                            d
                        ),
                    ))
                }
                _ => {}
            }
            if vectors.insert(token.to_string(), values).is_some() {
                return Err(Error::Embeddings(
                    source.to_string(),
                    format!("line {}: duplicate token {token:?}", i + 1),
                ));
            }
        }
        match dim {
            Some(d) if d > 0 => Ok(Self { dim: d, vectors }),
            _ => Err(Error::Embeddings(source.to_string(), "empty file".into())),
        }
    }
}

/// One vector per predicate class plus the tokens that were not found.
#[derive(Debug, Clone, PartialEq)]
pub struct PredicateEmbeddings {
    pub table: EmbeddingTable,
    pub predicate_vectors: Vec<Vec<f64>>,
    pub missing_tokens: Vec<String>,
}

/// Vector for a possibly multi-word class name: the mean of the vectors of
/// its tokens that exist in the table, the zero vector if none do.
pub fn phrase_vector(table: &EmbeddingTable, phrase: &str, missing: &mut Vec<String>) -> Vec<f64> {
    let mut sum = vec![0.0; table.dim()];
    let mut found = 0usize;
    for token in phrase.split_whitespace() {
        let vector = table
            .get(token)
            .or_else(|| table.get(&token.to_lowercase()));
        match vector {
            Some(v) => {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                found += 1;
            }
            None => missing.push(token.to_string()),
        }
    }
    if found > 0 {
        sum.iter_mut().for_each(|s| *s /= found as f64);
    }
    sum
}

pub fn embed_predicates(table: EmbeddingTable, vocab: &Vocabulary) -> PredicateEmbeddings {
    let mut missing_tokens = Vec::new();
    let predicate_vectors = vocab
        .predicate_classes()
        .iter()
        .map(|name| phrase_vector(&table, name, &mut missing_tokens))
        .collect();
    if !missing_tokens.is_empty() {
        log::warn!(
            "{} predicate token(s) missing from embeddings: {:?}",
            missing_tokens.len(),
            missing_tokens
        );
    }
    PredicateEmbeddings {
        table,
        predicate_vectors,
        missing_tokens,
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<PredicateEmbeddings> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    let table = EmbeddingTable::parse(&text, &path.display().to_string())?;
    Ok(embed_predicates(table, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{"object_classes":["man","horse","hat"],"predicate_classes":["riding","on"],"feature_dim":2}
{"image_id":"img1","regions":[{"id":0,"bbox":[0,0,10,20],"class":"man","feature":[0.5,1.0]},{"id":1,"bbox":[5,5,30,30],"class":"horse","feature":[1.5,-2.0]}],"relationships":[{"sub":0,"pred":"riding","obj":1}]}
"#;

    #[test]
    fn loads_one_image() {
        let ds = parse_dataset(FIXTURE).unwrap();
        assert_eq!(ds.images.len(), 1);
        assert_eq!(ds.images[0].annotations.len(), 1);
        assert_eq!(ds.images[0].regions[1].class_id, 1);
        assert_eq!(ds.feature_dim, 2);
    }

    #[test]
    fn unused_header_classes_keep_dense_ids() {
        let ds = parse_dataset(FIXTURE).unwrap();
        assert_eq!(ds.vocab.num_objects(), 3);
        assert_eq!(ds.vocab.object_id("hat"), Some(2));
        assert_eq!(ds.vocab.predicate_id("on"), Some(1));
    }

    #[test]
    fn dangling_region_is_named() {
        let text = FIXTURE.replace(r#""obj":1}"#, r#""obj":99}"#);
        let err = parse_dataset(&text).unwrap_err();
        assert_eq!(err.to_string(), "unknown region 99 in image img1");
    }

    #[test]
    fn malformed_line_names_line_and_field() {
        let text = FIXTURE.replace(r#""class":"horse""#, r#""class":"zebra""#);
        let err = parse_dataset(&text).unwrap_err();
        match err {
            Error::Malformed { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "class");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_dataset(&FIXTURE.replace("\"regions\"", "\"regionz\"")).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }));
    }

    #[test]
    fn feature_length_mismatch() {
        let text = FIXTURE.replace("[0.5,1.0]", "[0.5]");
        assert!(matches!(
            parse_dataset(&text),
            Err(Error::FeatureLength {
                expected: 2,
                found: 1,
                ..
            })
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let ds = parse_dataset(FIXTURE).unwrap();
        let meta = ArtifactMeta::new(&ds.vocab, 7);
        let again = parse_dataset(&format_dataset(&ds, Some(&meta)).unwrap()).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn embedding_parse_and_means() {
        let table = EmbeddingTable::parse("on 0.1 0.2\nsitting 1 0\n", "mem").unwrap();
        assert_eq!(table.get("on"), Some(&[0.1, 0.2][..]));
        let table = EmbeddingTable::parse("sitting 1 0\non 0 1\n", "mem").unwrap();
        let vocab =
            Vocabulary::new(vec!["a".into()], vec!["sitting on".into(), "zxqv".into()]).unwrap();
        let emb = embed_predicates(table, &vocab);
        assert_eq!(emb.predicate_vectors[0], vec![0.5, 0.5]);
        assert_eq!(emb.predicate_vectors[1], vec![0.0, 0.0]);
        assert_eq!(emb.missing_tokens.len(), 1);
    }

    #[test]
    fn embedding_errors() {
        assert!(EmbeddingTable::parse("", "mem").is_err());
        assert!(EmbeddingTable::parse("a 1 2\nb 1\n", "mem").is_err());
    }
}
