//! Label-centered chunks of the scene graph, their embeddings, exact top-k
//! cosine search, and the `OSGV1` database file.
//!
//! File layout (all integers little-endian):
//! ```text
//! "OSGV1"
//! u32 header length, header JSON {"d", "encoder", "n"}
//! n × { d × f32 embedding, u32 chunk length, chunk JSON }
//! ```
//! Chunk JSON is compact with sorted keys:
//! `{"<label>": {"number", "nodes": {"<id>": {...}}, "relationships": {"<k>": {...}}}}`.
//!
//! `rendered_text`, the string that is embedded, is one line per fact:
//! ```text
//! <label>: <number> instance(s)
//! <attribute fact for each node, by id>
//! <semantic sentence>; distance <d> m (<level>)   for each relationship
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;

use nalgebra::Vector3;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::canonical::{num, num_array, round_sig, to_canonical_compact};
use crate::model_clients::{cosine, ClientError, EmbeddingVector, Encoder};
use crate::rag_tasks::prompt::{relation_fact, AttributeFact};
use crate::scene_model::{DistanceLevel, NodeId, SceneGraph};

pub const MAGIC: &[u8; 5] = b"OSGV1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("the vector database is empty")]
    EmptyDatabase,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("embedding dimension {got} does not match database dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("malformed database file: {0}")]
    MalformedFile(String),
    #[error("unsupported database version {0:?}")]
    VersionMismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkNode {
    pub label: String,
    /// Frame index of the best view.
    pub best_view: Option<u32>,
    pub bbox_extent: [f64; 3],
    pub bbox_center: [f64; 3],
    pub description: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkEndpoint {
    pub id: NodeId,
    pub label: String,
    pub description: String,
    pub color_image_idx: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkRelation {
    pub subject: ChunkEndpoint,
    pub object: ChunkEndpoint,
    pub semantic: Vec<String>,
    pub distance: f64,
    pub level: DistanceLevel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub label: String,
    pub number: usize,
    pub nodes: BTreeMap<NodeId, ChunkNode>,
    /// Keyed by the edge's index in the graph's canonical edge order.
    pub relationships: BTreeMap<u32, ChunkRelation>,
    pub rendered_text: String,
}

impl Chunk {
    pub fn attribute_facts(&self) -> Vec<String> {
        self.nodes
            .iter()
            .map(|(&id, n)| {
                AttributeFact {
                    label: n.label.clone(),
                    id,
                    description: n.description.clone(),
                    center: Vector3::from(n.bbox_center),
                    extent: Vector3::from(n.bbox_extent),
                }
                .render()
            })
            .collect()
    }

    pub fn relation_facts(&self) -> Vec<String> {
        self.relationships.values().flat_map(|r| r.semantic.iter().cloned()).collect()
    }

    fn render_text(&self) -> String {
        let mut s = format!(
            "{}: {} instance{}\n",
            self.label,
            self.number,
            if self.number == 1 { "" } else { "s" }
        );
        for f in self.attribute_facts() {
            s.push_str(&f);
            s.push('\n');
        }
        for r in self.relationships.values() {
            for sentence in &r.semantic {
                s.push_str(&format!("{sentence}; distance {:.2} m ({})\n", r.distance, r.level.as_str()));
            }
        }
        s
    }

    pub fn to_value(&self) -> Value {
        let endpoint = |e: &ChunkEndpoint| {
            json!({
                "id": e.id,
                "label": e.label,
                "description": e.description,
                "color_image_idx": e.color_image_idx,
            })
        };
        let nodes: Map<String, Value> = self
            .nodes
            .iter()
            .map(|(id, n)| {
                (
                    id.to_string(),
                    json!({
                        "label": n.label,
                        "best_view": n.best_view,
                        "bbox_extent": num_array(&n.bbox_extent),
                        "bbox_center": num_array(&n.bbox_center),
                        "description": n.description,
                    }),
                )
            })
            .collect();
        let rels: Map<String, Value> = self
            .relationships
            .iter()
            .map(|(k, r)| {
                (
                    k.to_string(),
                    json!({
                        "subject": endpoint(&r.subject),
                        "object": endpoint(&r.object),
                        "semantic": r.semantic,
                        "spatial": {"distance": num(r.distance), "level": r.level.as_str()},
                    }),
                )
            })
            .collect();
        json!({ self.label.clone(): {"number": self.number, "nodes": nodes, "relationships": rels} })
    }

    pub fn from_value(v: &Value) -> Result<Self, String> {
        let obj = v.as_object().filter(|o| o.len() == 1).ok_or("chunk must have exactly one label key")?;
        let (label, body) = obj.iter().next().expect("one entry");
        let number = body.get("number").and_then(Value::as_u64).ok_or("missing number")? as usize;
        let s = |v: &Value, k: &str| v.get(k).and_then(Value::as_str).map(str::to_string).ok_or(format!("missing {k}"));
        let arr3 = |v: &Value, k: &str| -> Result<[f64; 3], String> {
            let a = v.get(k).and_then(Value::as_array).ok_or(format!("missing {k}"))?;
            let xs: Vec<f64> = a.iter().filter_map(Value::as_f64).collect();
            xs.try_into().map_err(|_| format!("{k} must hold 3 numbers"))
        };
        let opt_u32 = |v: &Value, k: &str| v.get(k).and_then(Value::as_u64).map(|x| x as u32);
        let mut nodes = BTreeMap::new();
        for (id, n) in body.get("nodes").and_then(Value::as_object).ok_or("missing nodes")? {
            let id: NodeId = id.parse().map_err(|_| format!("bad node id {id:?}"))?;
            nodes.insert(
                id,
                ChunkNode {
                    label: s(n, "label")?,
                    best_view: opt_u32(n, "best_view"),
                    bbox_extent: arr3(n, "bbox_extent")?,
                    bbox_center: arr3(n, "bbox_center")?,
                    description: s(n, "description")?,
                },
            );
        }
        let endpoint = |e: &Value| -> Result<ChunkEndpoint, String> {
            Ok(ChunkEndpoint {
                id: e.get("id").and_then(Value::as_u64).ok_or("missing endpoint id")? as NodeId,
                label: s(e, "label")?,
                description: s(e, "description")?,
                color_image_idx: opt_u32(e, "color_image_idx"),
            })
        };
        let mut relationships = BTreeMap::new();
        for (k, r) in body.get("relationships").and_then(Value::as_object).ok_or("missing relationships")? {
            let key: u32 = k.parse().map_err(|_| format!("bad relationship key {k:?}"))?;
            let spatial = r.get("spatial").ok_or("missing spatial")?;
            let level = s(spatial, "level")?;
            relationships.insert(
                key,
                ChunkRelation {
                    subject: endpoint(r.get("subject").ok_or("missing subject")?)?,
                    object: endpoint(r.get("object").ok_or("missing object")?)?,
                    semantic: r
                        .get("semantic")
                        .and_then(Value::as_array)
                        .ok_or("missing semantic")?
                        .iter()
                        .map(|x| x.as_str().map(str::to_string).ok_or("non-string sentence"))
                        .collect::<Result<_, _>>()?,
                    distance: spatial.get("distance").and_then(Value::as_f64).ok_or("missing distance")?,
                    level: DistanceLevel::parse(&level).ok_or(format!("bad level {level:?}"))?,
                },
            );
        }
        let mut c = Chunk {
            label: label.clone(),
            number,
            nodes,
            relationships,
            rendered_text: String::new(),
        };
        if c.number != c.nodes.len() {
            return Err(format!("number {} != {} nodes", c.number, c.nodes.len()));
        }
        c.rendered_text = c.render_text();
        Ok(c)
    }
}

fn chunk_key(label: &str) -> String {
    label.trim().to_lowercase()
}

/// One chunk per case-folded label holding its instances and the edges whose
/// subject carries that label; sorted by label.
pub fn build_chunks(graph: &SceneGraph) -> Vec<Chunk> {
    let r3 = |v: &Vector3<f64>| [round_sig(v.x), round_sig(v.y), round_sig(v.z)];
    let mut chunks: BTreeMap<String, Chunk> = BTreeMap::new();
    for n in graph.nodes.values() {
        let key = chunk_key(&n.label);
        let c = chunks.entry(key.clone()).or_insert_with(|| Chunk {
            label: key,
            number: 0,
            nodes: BTreeMap::new(),
            relationships: BTreeMap::new(),
            rendered_text: String::new(),
        });
        c.nodes.insert(
            n.id,
            ChunkNode {
                label: n.label.clone(),
                best_view: n.best_view.as_ref().map(|b| b.frame_index),
                bbox_extent: r3(&n.obb.extents),
                bbox_center: r3(&n.obb.center),
                description: n.description.clone(),
            },
        );
        c.number += 1;
    }
    let mut edges: Vec<_> = graph.edges.iter().collect();
    edges.sort_by_key(|e| (e.subject_id, e.object_id));
    for (k, e) in edges.into_iter().enumerate() {
        let (Some(s), Some(o)) = (graph.nodes.get(&e.subject_id), graph.nodes.get(&e.object_id)) else {
            continue;
        };
        let endpoint = |n: &crate::scene_model::ObjectNode| ChunkEndpoint {
            id: n.id,
            label: n.label.clone(),
            description: n.description.clone(),
            color_image_idx: n.best_view.as_ref().map(|b| b.frame_index),
        };
        let rel = ChunkRelation {
            subject: endpoint(s),
            object: endpoint(o),
            semantic: vec![relation_fact(&s.label, e.predicate(), &o.label)],
            distance: round_sig(e.distance),
            level: e.level,
        };
        if let Some(c) = chunks.get_mut(&chunk_key(&s.label)) {
            c.relationships.insert(k as u32, rel);
        }
    }
    chunks
        .into_values()
        .map(|mut c| {
            c.rendered_text = c.render_text();
            c
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorRecord {
    pub record_id: usize,
    pub embedding: EmbeddingVector,
    pub chunk: Chunk,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorDb {
    pub dim: usize,
    pub encoder: String,
    pub records: Vec<VectorRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchHit {
    pub record_id: usize,
    pub score: f64,
}

/// Embeds every chunk; any client failure aborts without a database.
pub fn index_chunks(chunks: &[Chunk], encoder: &dyn Encoder) -> Result<VectorDb, StoreError> {
    let mut records = Vec::with_capacity(chunks.len());
    let mut dim = 0;
    for (i, c) in chunks.iter().enumerate() {
        let e = encoder.embed_text(&c.rendered_text)?;
        if !e.normalized {
            return Err(ClientError::MalformedReply("encoder returned a zero embedding".into()).into());
        }
        if i == 0 {
            dim = e.dim();
        } else if e.dim() != dim {
            return Err(StoreError::DimensionMismatch {
                expected: dim,
                got: e.dim(),
            });
        }
        records.push(VectorRecord {
            record_id: i,
            embedding: e,
            chunk: c.clone(),
        });
    }
    Ok(VectorDb {
        dim,
        encoder: encoder.model_name(),
        records,
    })
}

/// Heap entry ordered so that the heap's maximum is the current worst hit.
#[derive(PartialEq)]
struct Worst(f64, usize);

impl Eq for Worst {}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        // worse = lower score, then higher record id
        other.0.total_cmp(&self.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl VectorDb {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Top-k records by cosine, descending; ties to the lower record id.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, StoreError> {
        if k == 0 {
            return Err(StoreError::InvalidK);
        }
        if self.records.is_empty() {
            return Err(StoreError::EmptyDatabase);
        }
        if query.dim() != self.dim {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
        for r in &self.records {
            heap.push(Worst(cosine(&query.values, &r.embedding.values), r.record_id));
            if heap.len() > k {
                heap.pop();
            }
        }
        let mut hits: Vec<SearchHit> = heap
            .into_iter()
            .map(|Worst(score, record_id)| SearchHit { record_id, score })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.record_id.cmp(&b.record_id)));
        Ok(hits)
    }

    pub fn record(&self, record_id: usize) -> Option<&VectorRecord> {
        self.records.get(record_id).filter(|r| r.record_id == record_id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let header = to_canonical_compact(&json!({"d": self.dim, "encoder": self.encoder, "n": self.records.len()}));
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for r in &self.records {
            for v in &r.embedding.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let chunk = to_canonical_compact(&r.chunk.to_value());
            out.extend_from_slice(&(chunk.len() as u32).to_le_bytes());
            out.extend_from_slice(&chunk);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let bad = |s: &str| StoreError::MalformedFile(s.to_string());
        if bytes.len() < MAGIC.len() {
            return Err(bad("file too short"));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            if &bytes[..4] == b"OSGV" {
                return Err(StoreError::VersionMismatch(String::from_utf8_lossy(&bytes[..5]).into_owned()));
            }
            return Err(bad("bad magic bytes"));
        }
        let mut pos = MAGIC.len();
        let mut take = |n: usize| -> Result<&[u8], StoreError> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated file"))?;
            pos += n;
            Ok(s)
        };
        let read_u32 = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
        let hlen = read_u32(take(4)?);
        let header: Value = serde_json::from_slice(take(hlen)?).map_err(|e| bad(&e.to_string()))?;
        let field = |k: &str| header.get(k).and_then(Value::as_u64).ok_or_else(|| bad(&format!("header lacks {k}")));
        let dim = field("d")? as usize;
        let n = field("n")? as usize;
        let encoder = header
            .get("encoder")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("header lacks encoder"))?
            .to_string();
        let mut records = Vec::with_capacity(n.min(1 << 16));
        for record_id in 0..n {
            let raw = take(dim * 4)?;
            let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let clen = read_u32(take(4)?);
            let v: Value = serde_json::from_slice(take(clen)?).map_err(|e| bad(&e.to_string()))?;
            let chunk = Chunk::from_value(&v).map_err(|e| bad(&e))?;
            records.push(VectorRecord {
                record_id,
                embedding: EmbeddingVector {
                    values,
                    normalized: true,
                },
                chunk,
            });
        }
        if take(1).is_ok() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { dim, encoder, records })
    }

    pub fn persist(&self, path: &Path) -> Result<(), StoreError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Obb;
    use crate::model_clients::MockModels;
    use crate::scene_model::{Confidence, ObjectNode, RelationEdge};

    fn node(id: NodeId, label: &str, x: f64) -> ObjectNode {
        ObjectNode {
            id,
            label: label.into(),
            description: format!("a {label}"),
            feature: vec![],
            obb: Obb::axis_aligned(Vector3::new(x, 0.0, 0.4), Vector3::new(0.5, 0.5, 0.8)).unwrap(),
            best_view: None,
            confidence: Confidence { alpha: 1.0, beta: 1.0 },
            node_category: "object".into(),
            point_count: 1,
        }
    }

    fn graph() -> SceneGraph {
        let mut g = SceneGraph::empty(0);
        for (id, label, x) in [(1, "chair", 0.0), (2, "chair", 1.0), (3, "table", 2.0), (4, "mug", 2.0)] {
            g.nodes.insert(id, node(id, label, x));
        }
        g.edges.push(RelationEdge {
            subject_id: 4,
            object_id: 3,
            predicates: vec!["on".into(), "near".into()],
            distance: 0.35,
            level: DistanceLevel::Close,
        });
        g
    }

    #[test]
    fn chunks_group_by_label() {
        let chunks = build_chunks(&graph());
        let labels: Vec<&str> = chunks.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels, vec!["chair", "mug", "table"]);
        assert_eq!(chunks[0].number, 2);
        assert_eq!(chunks[1].relation_facts(), vec!["mug on the table"]);
        assert!(build_chunks(&SceneGraph::empty(0)).is_empty());
    }

    #[test]
    fn chunk_json_round_trip() {
        for c in build_chunks(&graph()) {
            assert_eq!(Chunk::from_value(&c.to_value()).unwrap(), c);
        }
    }

    #[test]
    fn search_and_persistence() {
        let m = MockModels::with_builtin_fixture(3);
        let db = index_chunks(&build_chunks(&graph()), &m).unwrap();
        assert_eq!(db.len(), 3);
        let q = m.embed_text(&db.records[2].chunk.rendered_text).unwrap();
        let hits = db.search(&q, 10).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].record_id, 2);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
        let back = VectorDb::from_bytes(&db.to_bytes()).unwrap();
        assert_eq!(back, db);
        let mut corrupt = db.to_bytes();
        corrupt[0] = b'X';
        assert!(matches!(VectorDb::from_bytes(&corrupt), Err(StoreError::MalformedFile(_))));
        corrupt[0] = b'O';
        corrupt[4] = b'2';
        assert!(matches!(VectorDb::from_bytes(&corrupt), Err(StoreError::VersionMismatch(_))));
        let empty = VectorDb {
            dim: 4,
            encoder: "x".into(),
            records: vec![],
        };
        assert_eq!(VectorDb::from_bytes(&empty.to_bytes()).unwrap(), empty);
        assert!(matches!(empty.search(&q, 1), Err(StoreError::EmptyDatabase)));
    }
}
