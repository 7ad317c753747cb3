//! Guided relationship proposals: every ordered region pair and predicate is
//! scored as `p_s · p_o · p_v · relevance(s, o)` and the best `k` are kept.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, ArtifactMeta};
use crate::model::{predicate_input, MlpHead, RelevanceHead};
use crate::stats::{relevance_estimate, PairStats};
use crate::types::{Dataset, ImageRecord, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RelevanceSource {
    /// Constant relevance of one.
    None,
    /// Count-based estimate from pair statistics.
    Re,
    /// Predicted by the relevance head.
    Rp,
    /// Product of the predicted and estimated relevance.
    #[value(name = "rpre")]
    #[serde(rename = "rpre")]
    RpTimesRe,
}

impl fmt::Display for RelevanceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelevanceSource::None => "none",
            RelevanceSource::Re => "re",
            RelevanceSource::Rp => "rp",
            RelevanceSource::RpTimesRe => "rpre",
        })
    }
}

impl RelevanceSource {
    pub fn needs_stats(self) -> bool {
        matches!(self, RelevanceSource::Re | RelevanceSource::RpTimesRe)
    }

    pub fn needs_head(self) -> bool {
        matches!(self, RelevanceSource::Rp | RelevanceSource::RpTimesRe)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankMode {
    pub relevance: RelevanceSource,
    /// Keep only the best predicate of each ordered pair.
    pub one_per_pair: bool,
}

impl RankMode {
    pub fn new(relevance: RelevanceSource) -> Self {
        Self {
            relevance,
            one_per_pair: false,
        }
    }
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.relevance)?;
        if self.one_per_pair {
            f.write_str("+one-per-pair")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Ground-truth boxes and classes are given.
    #[value(name = "predcls")]
    PredCls,
    /// Ground-truth boxes are given, classes are predicted.
    #[value(name = "sgcls")]
    SgCls,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::PredCls => "predcls",
            Task::SgCls => "sgcls",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub subject_region: u32,
    pub object_region: u32,
    /// Subject and object classes (predicted under SGCls).
    pub subject_class: usize,
    pub object_class: usize,
    pub predicate: usize,
    pub score: f64,
    pub p_s: f64,
    pub p_o: f64,
    pub p_v: f64,
    pub relevance: f64,
}

/// Descending score, then ascending subject region, object region, predicate.
pub fn proposal_order(a: &Proposal, b: &Proposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.subject_region.cmp(&b.subject_region))
        .then(a.object_region.cmp(&b.object_region))
        .then(a.predicate.cmp(&b.predicate))
}

pub fn score_relationship(p_s: f64, p_o: f64, p_v: f64, relevance: f64) -> f64 {
    p_s * p_o * p_v * relevance
}

/// Heads used while ranking; only the predicate head is always required.
#[derive(Debug, Clone, Copy)]
pub struct Heads<'a> {
    pub predicate: &'a MlpHead,
    pub object: Option<&'a MlpHead>,
    pub relevance: Option<&'a RelevanceHead>,
}

pub fn relevance_of(
    source: RelevanceSource,
    stats: Option<&PairStats>,
    head: Option<&RelevanceHead>,
    x_s: &[f64],
    x_o: &[f64],
    s: usize,
    o: usize,
) -> Result<f64> {
    let estimated = || {
        stats
            .map(|st| relevance_estimate(st, s, o))
            .ok_or_else(|| Error::invalid(format!("relevance mode {source} needs pair statistics")))
    };
    let predicted = || {
        head.ok_or_else(|| {
            Error::invalid(format!("relevance mode {source} needs a relevance head"))
        })
        .and_then(|h| h.relevance_forward(x_s, x_o))
    };
    match source {
        RelevanceSource::None => Ok(1.0),
        RelevanceSource::Re => estimated(),
        RelevanceSource::Rp => predicted(),
        RelevanceSource::RpTimesRe => Ok(predicted()? * estimated()?),
    }
}

/// Ranks every ordered region pair of `image`, returning at most `k` proposals.
pub fn rank_image(
    image: &ImageRecord,
    heads: Heads<'_>,
    stats: Option<&PairStats>,
    mode: RankMode,
    task: Task,
    k: usize,
) -> Result<Vec<Proposal>> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let features = image
        .regions
        .iter()
        .map(|r| {
            r.feature.as_deref().ok_or_else(|| Error::InvalidImage {
                image_id: image.image_id.clone(),
                detail: format!("region {} has no feature", r.region_id),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // (class, probability) per region, fixed for the whole image.
    let classes: Vec<(usize, f64)> = match task {
        Task::PredCls => image.regions.iter().map(|r| (r.class_id, 1.0)).collect(),
        Task::SgCls => {
            let head = heads
                .object
                .ok_or_else(|| Error::invalid("sgcls ranking needs an object head"))?;
            features
                .iter()
                .map(|x| {
                    let d = head.classify(x)?;
                    let c = d.argmax();
                    Ok((c, d.probs()[c]))
                })
                .collect::<Result<_>>()?
        }
    };

    let mut proposals = Vec::new();
    for (i, subj) in image.regions.iter().enumerate() {
        for (j, obj) in image.regions.iter().enumerate() {
            if i == j {
                continue;
            }
            let (s, p_s) = classes[i];
            let (o, p_o) = classes[j];
            let relevance = relevance_of(
                mode.relevance,
                stats,
                heads.relevance,
                features[i],
                features[j],
                s,
                o,
            )?;
            let dist = heads
                .predicate
                .classify(&predicate_input(features[i], features[j]))?;
            let make = |v: usize, p_v: f64| Proposal {
                subject_region: subj.region_id,
                object_region: obj.region_id,
                subject_class: s,
                object_class: o,
                predicate: v,
                score: score_relationship(p_s, p_o, p_v, relevance),
                p_s,
                p_o,
                p_v,
                relevance,
            };
            if mode.one_per_pair {
                let v = dist.argmax();
                proposals.push(make(v, dist.probs()[v]));
            } else {
                proposals.extend(dist.probs().iter().enumerate().map(|(v, &p)| make(v, p)));
            }
        }
    }
    proposals.sort_by(proposal_order);
    proposals.truncate(k);
    Ok(proposals)
}

/// Ranks every image in parallel; results keep dataset order.
pub fn rank_dataset(
    dataset: &Dataset,
    heads: Heads<'_>,
    stats: Option<&PairStats>,
    mode: RankMode,
    task: Task,
    k: usize,
) -> Result<Vec<Vec<Proposal>>> {
    dataset
        .images
        .par_iter()
        .map(|img| rank_image(img, heads, stats, mode, task, k))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProposalHeader {
    meta: ArtifactMeta,
    mode: RelevanceSource,
    one_per_pair: bool,
    task: Task,
    k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalLine {
    image_id: String,
    sub: u32,
    obj: u32,
    s: String,
    v: String,
    o: String,
    score: f64,
}

/// Ranked proposals of a whole dataset, as written by the `rank` command.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub meta: ArtifactMeta,
    pub mode: RankMode,
    pub task: Task,
    pub k: usize,
    /// One ranked list per image id, in file order.
    pub images: Vec<(String, Vec<Proposal>)>,
}

impl ProposalSet {
    /// Header line followed by one record per proposal, sorted per image.
    pub fn to_text(&self, vocab: &Vocabulary) -> Result<String> {
        let header = ProposalHeader {
            meta: self.meta.clone(),
            mode: self.mode.relevance,
            one_per_pair: self.mode.one_per_pair,
            task: self.task,
            k: self.k,
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for (image_id, proposals) in &self.images {
            for p in proposals {
                let line = ProposalLine {
                    image_id: image_id.clone(),
                    sub: p.subject_region,
                    obj: p.object_region,
                    s: vocab.object_classes()[p.subject_class].clone(),
                    v: vocab.predicate_classes()[p.predicate].clone(),
                    o: vocab.object_classes()[p.object_class].clone(),
                    score: p.score,
                };
                out.push_str(&serde_json::to_string(&line)?);
                out.push('\n');
            }
        }
        Ok(out)
    }

    /// Parses a proposal file; component probabilities are not stored, so
    /// only the score is restored.
    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Artifact("empty proposal file".into()))?;
        let header: ProposalHeader = serde_json::from_str(first)?;
        io::check_vocab_hash(
            &header.meta.vocab_hash,
            "proposals",
            &vocab.hash(),
            "dataset",
        )?;
        let mut images: Vec<(String, Vec<Proposal>)> = Vec::new();
        for (i, line) in lines {
            let rec: ProposalLine = serde_json::from_str(line).map_err(|e| Error::Malformed {
                line: i + 1,
                field: "proposal".into(),
                detail: e.to_string(),
            })?;
            let lookup_obj = |name: &str| {
                vocab.object_id(name).ok_or_else(|| Error::Malformed {
                    line: i + 1,
                    field: "class".into(),
                    detail: format!("unknown object class {name:?}"),
                })
            };
            let predicate = vocab.predicate_id(&rec.v).ok_or_else(|| Error::Malformed {
                line: i + 1,
                field: "v".into(),
                detail: format!("unknown predicate {:?}", rec.v),
            })?;
            let proposal = Proposal {
                subject_region: rec.sub,
                object_region: rec.obj,
                subject_class: lookup_obj(&rec.s)?,
                object_class: lookup_obj(&rec.o)?,
                predicate,
                score: rec.score,
                p_s: f64::NAN,
                p_o: f64::NAN,
                p_v: f64::NAN,
                relevance: f64::NAN,
            };
            match images.last_mut() {
                Some((id, list)) if *id == rec.image_id => list.push(proposal),
                _ => images.push((rec.image_id, vec![proposal])),
            }
        }
        Ok(Self {
            meta: header.meta,
            mode: RankMode {
                relevance: header.mode,
                one_per_pair: header.one_per_pair,
            },
            task: header.task,
            k: header.k,
            images,
        })
    }

    pub fn read(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, vocab)
    }
}
