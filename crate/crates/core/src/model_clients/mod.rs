//! One abstraction over every external model: object labeler, relation
//! ranker, reasoning completer, and embedding encoder.
//!
//! Two backends implement all four traits: [`HttpModels`] speaks the
//! OpenAI-compatible `chat/completions` and `embeddings` endpoints, and
//! [`MockModels`] is a deterministic offline stand-in driven by a fixture file.

mod http;
mod mock;
mod semaphore;

pub use http::{parse_label_reply, parse_predicate_reply, HttpModels};
pub use mock::{MockCrop, MockFixture, MockLabel, MockModels, DEFAULT_MOCK_DIM, NOT_FOUND_ANSWER};
pub use semaphore::{Permit, Semaphore};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Obb;
use crate::rag_tasks::GroundedPrompt;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ClientError {
    #[error("model client unavailable: {0}")]
    Unavailable(String),
    #[error("malformed model reply: {0}")]
    MalformedReply(String),
    #[error("empty input")]
    EmptyInput,
    #[error("unresolvable reference {0:?}")]
    UnresolvableReference(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub base_url: String,
    /// Chat model used for reasoning and, unless overridden, labeling and
    /// relation ranking.
    pub model_name: String,
    pub labeler_model: Option<String>,
    pub relation_model: Option<String>,
    pub embedding_model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_parallel: usize,
    pub retry_count: u32,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "Qwen2-72B-Instruct".into(),
            labeler_model: None,
            relation_model: None,
            embedding_model: "text-embedding".into(),
            api_key_env: "OSGRAG_API_KEY".into(),
            timeout_secs: 60.0,
            max_parallel: 4,
            retry_count: 2,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs > 0.0) {
            return Err("timeout must be positive".into());
        }
        if self.max_parallel < 1 {
            return Err("max_parallel must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub normalized: bool,
}

impl EmbeddingVector {
    /// L2-normalizes `values`; a zero vector stays zero and is flagged
    /// unnormalized.
    pub fn normalize_from(values: &[f64]) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Self {
                values: values.iter().map(|&v| v as f32).collect(),
                normalized: false,
            };
        }
        Self {
            values: values.iter().map(|v| (v / norm) as f32).collect(),
            normalized: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }

    /// Normalized mean of several embeddings.
    pub fn mean_of(vectors: &[EmbeddingVector]) -> Option<Self> {
        let first = vectors.first()?;
        let mut acc = vec![0.0f64; first.dim()];
        for v in vectors {
            if v.dim() != acc.len() {
                return None;
            }
            for (a, &x) in acc.iter_mut().zip(&v.values) {
                *a += x as f64;
            }
        }
        Some(Self::normalize_from(&acc))
    }
}

/// Cosine similarity accumulated in f64: dot product, then both squared
/// norms, each summed left to right. Zero when either vector is zero or the
/// lengths differ.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    if a.len() != b.len() {
        return 0.0;
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelRequest {
    pub crop: String,
    /// Label suggested by the detector, if any.
    pub proposed_label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelReply {
    pub label: String,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairObject {
    pub id: u32,
    pub label: String,
    pub description: String,
    pub crop: Option<String>,
    pub obb: Obb,
}

/// Everything a relation ranker sees about one candidate pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairContext {
    pub subject: PairObject,
    pub object: PairObject,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationReply {
    /// Ranked, phrased subject → object.
    pub predicates: Vec<String>,
    /// The ranker swapped subject and object.
    pub reversed: bool,
}

pub trait Labeler: Send + Sync {
    fn label(&self, request: &LabelRequest) -> Result<LabelReply, ClientError>;
}

pub trait RelationRanker: Send + Sync {
    fn rank_predicates(&self, pair: &PairContext) -> Result<RelationReply, ClientError>;
}

pub trait Completer: Send + Sync {
    fn complete(&self, prompt: &GroundedPrompt) -> Result<String, ClientError>;
}

pub trait Encoder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ClientError>;
    fn embed_image(&self, crop: &str) -> Result<EmbeddingVector, ClientError>;
    /// Recorded in database headers.
    fn model_name(&self) -> String;
}

/// Splits `path#x0,y0,x1,y1` into the image path and the optional pixel box.
pub fn split_crop_ref(crop: &str) -> (&str, Option<[u32; 4]>) {
    match crop.rsplit_once('#') {
        Some((path, bbox)) => {
            let parts: Vec<u32> = bbox.split(',').filter_map(|s| s.trim().parse().ok()).collect();
            match parts.as_slice() {
                &[a, b, c, d] => (path, Some([a, b, c, d])),
                _ => (path, None),
            }
        }
        None => (crop, None),
    }
}

pub fn make_crop_ref(image: &str, bbox: [u32; 4]) -> String {
    format!("{image}#{},{},{},{}", bbox[0], bbox[1], bbox[2], bbox[3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_refs_round_trip() {
        let r = make_crop_ref("frame_000003.color.png", [1, 2, 30, 40]);
        assert_eq!(split_crop_ref(&r), ("frame_000003.color.png", Some([1, 2, 30, 40])));
        assert_eq!(split_crop_ref("box_red_0"), ("box_red_0", None));
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(cosine(&[1.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_embedding_is_normalized() {
        let a = EmbeddingVector::normalize_from(&[1.0, 0.0]);
        let b = EmbeddingVector::normalize_from(&[0.0, 1.0]);
        let m = EmbeddingVector::mean_of(&[a, b]).unwrap();
        assert!((m.norm() - 1.0).abs() < 1e-6);
        assert!(m.normalized);
    }
}
