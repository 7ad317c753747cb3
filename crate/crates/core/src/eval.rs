//! Recall@k for PredCls and SGCls, per-predicate and macro recall over
//! predicate frequency groups, and relative-gain comparisons.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, ArtifactMeta};
use crate::rank::{Proposal, Task};
use crate::types::{Dataset, ImageRecord};

/// Cut-offs reported by [`evaluate`].
pub const REPORTED_K: [usize; 2] = [50, 100];

/// Sizes of the leading predicate frequency groups.
pub const GROUP_SIZES: [usize; 2] = [10, 30];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundTruth {
    pub subject_region: u32,
    pub object_region: u32,
    pub predicate: usize,
    pub subject_class: usize,
    pub object_class: usize,
}

pub fn ground_truth(image: &ImageRecord) -> Vec<GroundTruth> {
    image
        .annotations
        .iter()
        .map(|a| GroundTruth {
            subject_region: a.subject_region,
            object_region: a.object_region,
            predicate: a.predicate_id,
            subject_class: image
                .region(a.subject_region)
                .map_or(usize::MAX, |r| r.class_id),
            object_class: image
                .region(a.object_region)
                .map_or(usize::MAX, |r| r.class_id),
        })
        .collect()
}

fn matches(p: &Proposal, g: &GroundTruth, task: Task) -> bool {
    let base = p.subject_region == g.subject_region
        && p.object_region == g.object_region
        && p.predicate == g.predicate;
    match task {
        Task::PredCls => base,
        Task::SgCls => {
            base && p.subject_class == g.subject_class && p.object_class == g.object_class
        }
    }
}

/// One-to-one greedy matching in rank order over the top `k` proposals;
/// returns which ground-truth items were retrieved.
pub fn match_greedy(proposals: &[Proposal], gt: &[GroundTruth], k: usize, task: Task) -> Vec<bool> {
    let mut retrieved = vec![false; gt.len()];
    for p in proposals.iter().take(k) {
        if let Some(i) = (0..gt.len()).find(|&i| !retrieved[i] && matches(p, &gt[i], task)) {
            retrieved[i] = true;
        }
    }
    retrieved
}

/// Fraction of `gt` retrieved among the top `k` proposals.
pub fn recall_at_k(
    proposals: &[Proposal],
    gt: &[GroundTruth],
    k: usize,
    task: Task,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if gt.is_empty() {
        return Err(Error::EmptyEvaluation(
            "image has no ground-truth relationships".into(),
        ));
    }
    let hits = match_greedy(proposals, gt, k, task)
        .iter()
        .filter(|&&m| m)
        .count();
    Ok(hits as f64 / gt.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Every evaluated image contributes equally.
    ImageMean,
    /// Retrieved and total counts are pooled over all images.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateGroup {
    pub name: String,
    pub predicates: Vec<usize>,
    /// Percentage of training annotations covered by the group.
    pub train_share: f64,
}

/// Splits predicates by descending training frequency (ties by id) into the
/// top 10, the next 30 and the remainder. Empty groups are omitted; with at
/// most 10 predicates a single group is returned.
pub fn frequency_groups(train_counts: &[u64]) -> Vec<PredicateGroup> {
    let total: u64 = train_counts.iter().sum();
    let share = |ids: &[usize]| {
        if total == 0 {
            0.0
        } else {
            100.0 * ids.iter().map(|&v| train_counts[v]).sum::<u64>() as f64 / total as f64
        }
    };
    let mut order: Vec<usize> = (0..train_counts.len()).collect();
    order.sort_by(|&a, &b| train_counts[b].cmp(&train_counts[a]).then(a.cmp(&b)));

    if order.len() <= GROUP_SIZES[0] {
        log::warn!(
            "only {} predicates; reporting a single frequency group",
            order.len()
        );
        return vec![PredicateGroup {
            name: "all".into(),
            train_share: share(&order),
            predicates: order,
        }];
    }
    let first = GROUP_SIZES[0];
    let second = (first + GROUP_SIZES[1]).min(order.len());
    let slices = [
        ("top-10", &order[..first]),
        ("next-30", &order[first..second]),
        ("rest", &order[second..]),
    ];
    slices
        .into_iter()
        .filter(|(_, ids)| !ids.is_empty())
        .map(|(name, ids)| PredicateGroup {
            name: name.into(),
            predicates: ids.to_vec(),
            train_share: share(ids),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecall {
    pub group: PredicateGroup,
    /// Macro R@100; absent when no predicate of the group occurs in the test split.
    pub macro_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ArtifactMeta,
    pub task: Task,
    pub mode: String,
    pub aggregation: Aggregation,
    /// `(k, R@k)` for each reported cut-off.
    pub recall: Vec<(usize, f64)>,
    /// Pooled R@100 over all ground-truth items.
    pub micro_recall: f64,
    /// Pooled R@100 per predicate; `None` for predicates absent from the test split.
    pub per_predicate: Vec<Option<f64>>,
    pub per_predicate_counts: Vec<u64>,
    pub groups: Vec<GroupRecall>,
    pub num_images: usize,
    pub skipped_images: usize,
    pub predicate_names: Vec<String>,
}

impl EvalReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|(kk, _)| *kk == k).map(|(_, r)| *r)
    }

    pub fn group(&self, name: &str) -> Option<&GroupRecall> {
        self.groups.iter().find(|g| g.group.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_text(path, &self.to_json()?)
    }

    /// Human-readable report; all values with six decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vocab_hash: {}", self.meta.vocab_hash);
        let _ = writeln!(out, "seed: {}", self.meta.seed);
        let _ = writeln!(out, "tool_version: {}", self.meta.tool_version);
        let _ = writeln!(out, "task: {}", self.task);
        let _ = writeln!(out, "mode: {}", self.mode);
        let agg = match self.aggregation {
            Aggregation::ImageMean => "image-mean",
            Aggregation::Pooled => "pooled",
        };
        let _ = writeln!(out, "aggregation: {agg}");
        let _ = writeln!(
            out,
            "images: {} evaluated, {} skipped",
            self.num_images, self.skipped_images
        );
        for (k, r) in &self.recall {
            let _ = writeln!(out, "R@{k}: {r:.6}");
        }
        let _ = writeln!(out, "micro R@100: {:.6}", self.micro_recall);
        for g in &self.groups {
            let value = g
                .macro_recall
                .map_or_else(|| "n/a".to_string(), |m| format!("{m:.6}"));
            let _ = writeln!(
                out,
                "group {} ({} predicates, {:.2}% of training annotations): macro R@100 {}",
                g.group.name,
                g.group.predicates.len(),
                g.group.train_share,
                value
            );
        }
        let _ = writeln!(out, "per-predicate R@100:");
        for (v, r) in self.per_predicate.iter().enumerate() {
            if let Some(r) = r {
                let _ = writeln!(
                    out,
                    "  {} {} {:.6}",
                    self.predicate_names[v], self.per_predicate_counts[v], r
                );
            }
        }
        out
    }
}

/// Unweighted mean of per-predicate recall over the group's predicates that
/// occur in the test split.
pub fn macro_recall(report: &EvalReport, group: &PredicateGroup) -> Result<f64> {
    let values: Vec<f64> = group
        .predicates
        .iter()
        .filter_map(|&v| report.per_predicate.get(v).copied().flatten())
        .collect();
    if values.is_empty() {
        return Err(Error::EmptyEvaluation(format!(
            "group {} has no predicate present in the test split",
            group.name
        )));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// `100 · (value − baseline) / baseline`.
pub fn relative_gain(baseline: f64, value: f64) -> Result<f64> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(Error::invalid(format!(
            "baseline must be positive, got {baseline}"
        )));
    }
    Ok(100.0 * (value - baseline) / baseline)
}

struct ImageCounts {
    hits: Vec<usize>,
    total: usize,
    per_predicate_hits: HashMap<usize, usize>,
    per_predicate_total: HashMap<usize, usize>,
}

/// Scores ranked proposals (one list per dataset image, same order) against
/// the dataset's annotations. `train_counts` defines the frequency groups.
pub fn evaluate(
    dataset: &Dataset,
    proposals: &[Vec<Proposal>],
    task: Task,
    train_counts: &[u64],
    aggregation: Aggregation,
    mode: &str,
    meta: ArtifactMeta,
) -> Result<EvalReport> {
    if proposals.len() != dataset.images.len() {
        return Err(Error::invalid(format!(
            "{} proposal lists for {} images",
            proposals.len(),
            dataset.images.len()
        )));
    }
    let num_predicates = dataset.vocab.num_predicates();
    if train_counts.len() != num_predicates {
        return Err(Error::DimensionMismatch {
            expected: num_predicates,
            found: train_counts.len(),
        });
    }
    let max_k = *REPORTED_K.iter().max().expect("non-empty");

    let per_image: Vec<Option<ImageCounts>> = dataset
        .images
        .par_iter()
        .zip(proposals.par_iter())
        .map(|(image, props)| {
            let gt = ground_truth(image);
            if gt.is_empty() {
                return None;
            }
            let hits = REPORTED_K
                .iter()
                .map(|&k| {
                    match_greedy(props, &gt, k, task)
                        .iter()
                        .filter(|&&m| m)
                        .count()
                })
                .collect();
            let matched = match_greedy(props, &gt, max_k, task);
            let mut per_predicate_hits = HashMap::new();
            let mut per_predicate_total = HashMap::new();
            for (g, m) in gt.iter().zip(&matched) {
                *per_predicate_total.entry(g.predicate).or_insert(0) += 1;
                if *m {
                    *per_predicate_hits.entry(g.predicate).or_insert(0) += 1;
                }
            }
            Some(ImageCounts {
                hits,
                total: gt.len(),
                per_predicate_hits,
                per_predicate_total,
            })
        })
        .collect();

    let evaluated: Vec<&ImageCounts> = per_image.iter().flatten().collect();
    if evaluated.is_empty() {
        return Err(Error::EmptyEvaluation(
            "no image has ground-truth relationships".into(),
        ));
    }
    let n = evaluated.len();
    let total_gt: usize = evaluated.iter().map(|c| c.total).sum();
    let recall = REPORTED_K
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let value = match aggregation {
                Aggregation::ImageMean => {
                    evaluated
                        .iter()
                        .map(|c| c.hits[ki] as f64 / c.total as f64)
                        .sum::<f64>()
                        / n as f64
                }
                Aggregation::Pooled => {
                    evaluated.iter().map(|c| c.hits[ki]).sum::<usize>() as f64 / total_gt as f64
                }
            };
            (k, value)
        })
        .collect();
    let last = REPORTED_K.len() - 1;
    let micro_recall =
        evaluated.iter().map(|c| c.hits[last]).sum::<usize>() as f64 / total_gt as f64;

    let mut pred_hits = vec![0u64; num_predicates];
    let mut pred_total = vec![0u64; num_predicates];
    for c in &evaluated {
        for (&v, &t) in &c.per_predicate_total {
            pred_total[v] += t as u64;
        }
        for (&v, &h) in &c.per_predicate_hits {
            pred_hits[v] += h as u64;
        }
    }
    let per_predicate: Vec<Option<f64>> = pred_hits
        .iter()
        .zip(&pred_total)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();

    let mut report = EvalReport {
        meta,
        task,
        mode: mode.to_string(),
        aggregation,
        recall,
        micro_recall,
        per_predicate,
        per_predicate_counts: pred_total,
        groups: Vec::new(),
        num_images: n,
        skipped_images: dataset.images.len() - n,
        predicate_names: dataset.vocab.predicate_classes().to_vec(),
    };
    report.groups = frequency_groups(train_counts)
        .into_iter()
        .map(|group| GroupRecall {
            macro_recall: macro_recall(&report, &group).ok(),
            group,
        })
        .collect();
    Ok(report)
}

/// Relative gains of `value` over `baseline` for every shared metric.
pub fn compare(baseline: &EvalReport, value: &EvalReport) -> Vec<(String, f64, f64, Option<f64>)> {
    let mut rows = Vec::new();
    for &(k, b) in &baseline.recall {
        if let Some(v) = value.recall_at(k) {
            rows.push((format!("R@{k}"), b, v, relative_gain(b, v).ok()));
        }
    }
    rows.push((
        "micro R@100".into(),
        baseline.micro_recall,
        value.micro_recall,
        relative_gain(baseline.micro_recall, value.micro_recall).ok(),
    ));
    for g in &baseline.groups {
        let other = value.group(&g.group.name).and_then(|o| o.macro_recall);
        if let (Some(b), Some(v)) = (g.macro_recall, other) {
            rows.push((
                format!("macro R@100 {}", g.group.name),
                b,
                v,
                relative_gain(b, v).ok(),
            ));
        }
    }
    rows
}

pub fn format_comparison(rows: &[(String, f64, f64, Option<f64>)]) -> String {
    let mut out = String::new();
    for (name, b, v, gain) in rows {
        let gain = gain.map_or_else(|| "n/a".to_string(), |g| format!("{g:+.2}%"));
        let _ = writeln!(out, "{name}: {b:.6} -> {v:.6} ({gain})");
    }
    out
}
