//! Constraint values `f(X, Y)` used to project model outputs during
//! distillation: a semantic matrix built from predicate embedding similarity
//! and an internal prior read from pair statistics.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, ArtifactMeta};
use crate::stats::{internal_constraint, PairStats};
use crate::types::{softmax, Distribution, Vocabulary};

/// Default softmax temperature for the semantic matrix.
pub const DEFAULT_TAU: f64 = 10.0;

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-8;

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Row `v` holds `P(v' | v annotated) ∝ exp(τ · sim(v, v'))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticMatrix {
    pub meta: ArtifactMeta,
    pub tau: f64,
    pub rows: Vec<Vec<f64>>,
}

impl SemanticMatrix {
    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.rows[v]
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.rows.iter().any(|r| r.len() != m.rows.len()) {
            return Err(Error::Artifact("semantic matrix is not square".into()));
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        io::write_text(path, &text)
    }

    pub fn check_vocab(&self, vocab: &Vocabulary, source: &str) -> Result<()> {
        io::check_vocab_hash(
            &self.meta.vocab_hash,
            "semantic matrix",
            &vocab.hash(),
            source,
        )?;
        if self.size() != vocab.num_predicates() {
            return Err(Error::DimensionMismatch {
                expected: vocab.num_predicates(),
                found: self.size(),
            });
        }
        Ok(())
    }

    /// Dense row-major text dump with six decimals, preceded by a `#` line of
    /// provenance.
    pub fn export_text(&self) -> String {
        let mut out = format!(
            "# vocab_hash={} seed={} tool_version={} tau={}\n",
            self.meta.vocab_hash, self.meta.seed, self.meta.tool_version, self.tau
        );
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|p| format!("{p:.6}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }
}

/// Softmax over `τ · sim(v, ·)` for every predicate `v`.
pub fn build_semantic_matrix(
    pred_vectors: &[Vec<f64>],
    tau: f64,
    meta: ArtifactMeta,
) -> Result<SemanticMatrix> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::invalid(format!(
            "temperature must be a finite value >= 0, got {tau}"
        )));
    }
    let n = pred_vectors.len();
    let mut rows = Vec::with_capacity(n);
    for u in pred_vectors {
        let logits = pred_vectors
            .iter()
            .map(|v| cosine_similarity(u, v).map(|s| tau * s))
            .collect::<Result<Vec<_>>>()?;
        rows.push(softmax(&logits));
    }
    Ok(SemanticMatrix { meta, tau, rows })
}

/// Where the constraint row comes from for one training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintContext {
    /// Ground-truth predicate id (semantic knowledge).
    Predicate(usize),
    /// Ground-truth subject and object class ids (internal knowledge).
    Pair { subject: usize, object: usize },
}

#[derive(Debug, Clone)]
pub enum ConstraintMatrix {
    Semantic(SemanticMatrix),
    Internal { stats: PairStats, alpha: f64 },
}

impl ConstraintMatrix {
    pub fn num_predicates(&self) -> usize {
        match self {
            ConstraintMatrix::Semantic(m) => m.size(),
            ConstraintMatrix::Internal { stats, .. } => stats.num_predicates,
        }
    }

    /// The probability row selected by `context`.
    pub fn row(&self, context: ConstraintContext) -> Result<Distribution> {
        match (self, context) {
            (ConstraintMatrix::Semantic(m), ConstraintContext::Predicate(v)) => {
                let row = m
                    .rows
                    .get(v)
                    .ok_or_else(|| Error::invalid(format!("predicate {v} out of range")))?;
                Distribution::new(row.clone())
            }
            (
                ConstraintMatrix::Internal { stats, alpha },
                ConstraintContext::Pair { subject, object },
            ) => {
                if subject >= stats.head_of.len() || object >= stats.head_of.len() {
                    return Err(Error::invalid("object class out of range"));
                }
                internal_constraint(stats, subject, object, *alpha)
            }
            _ => Err(Error::invalid(
                "constraint context does not match knowledge kind",
            )),
        }
    }

    /// `log` of the materialized row with each probability floored at 1e-8.
    pub fn constraint_values(&self, context: ConstraintContext) -> Result<Vec<f64>> {
        Ok(log_floored(self.row(context)?.probs()))
    }
}

pub fn log_floored(probs: &[f64]) -> Vec<f64> {
    probs.iter().map(|p| p.max(LOG_FLOOR).ln()).collect()
}
