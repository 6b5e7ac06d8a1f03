//! Scene-graph data model and its canonical JSON document (`osg-rag/1`).

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::Deserialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::canonical::{num, num_array, round_sig, to_canonical_bytes};
use crate::geometry::{orthonormalize, Obb, Pose};

pub const SCHEMA_VERSION: &str = "osg-rag/1";

/// Labels dropped before relation extraction unless configured otherwise.
pub const DEFAULT_BACKGROUND_LABELS: [&str; 3] = ["floor", "ceiling", "wall"];

pub type NodeId = u32;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("malformed scene document: {0}")]
    MalformedDocument(String),
    #[error("invariant violated at {location}: {what}")]
    InvariantViolation { what: String, location: String },
}

fn violation(what: impl Into<String>, location: impl Into<String>) -> SceneError {
    SceneError::InvariantViolation {
        what: what.into(),
        location: location.into(),
    }
}

/// Beta parameters of a detection confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Confidence {
    pub alpha: f64,
    pub beta: f64,
}

impl Confidence {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestView {
    pub frame_index: u32,
    pub pose: Pose,
    /// Opaque crop reference handed to model clients.
    pub crop: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectNode {
    pub id: NodeId,
    pub label: String,
    pub description: String,
    pub feature: Vec<f64>,
    pub obb: Obb,
    pub best_view: Option<BestView>,
    pub confidence: Confidence,
    pub node_category: String,
    pub point_count: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistanceLevel {
    Close,
    Medium,
    Far,
}

impl DistanceLevel {
    /// close < 0.5 m ≤ medium < 2.0 m ≤ far
    pub fn from_distance(d: f64) -> Self {
        if d < 0.5 {
            Self::Close
        } else if d < 2.0 {
            Self::Medium
        } else {
            Self::Far
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Close => "close",
            Self::Medium => "medium",
            Self::Far => "far",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "close" => Some(Self::Close),
            "medium" => Some(Self::Medium),
            "far" => Some(Self::Far),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationEdge {
    pub subject_id: NodeId,
    pub object_id: NodeId,
    /// Ranked candidates; the first one is the edge predicate.
    pub predicates: Vec<String>,
    pub distance: f64,
    pub level: DistanceLevel,
}

impl RelationEdge {
    pub fn predicate(&self) -> &str {
        &self.predicates[0]
    }
}

/// Axis-aligned floor rectangle in meters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect2 {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl Rect2 {
    pub fn new(min: Vector2<f64>, max: Vector2<f64>) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.min.x && p.y >= self.min.y && p.x <= self.max.x && p.y <= self.max.y
    }

    pub fn contains_rect(&self, r: &Rect2) -> bool {
        self.contains(&r.min) && self.contains(&r.max)
    }

    pub fn union(&self, r: &Rect2) -> Rect2 {
        Rect2::new(self.min.inf(&r.min), self.max.sup(&r.max))
    }

    pub fn expanded(&self, margin: f64) -> Rect2 {
        Rect2::new(self.min.add_scalar(-margin), self.max.add_scalar(margin))
    }

    pub fn clamp(&self, p: &Vector2<f64>) -> Vector2<f64> {
        p.sup(&self.min).inf(&self.max)
    }

    pub fn intersection(&self, r: &Rect2) -> Option<Rect2> {
        let min = self.min.sup(&r.min);
        let max = self.max.inf(&r.max);
        (min.x <= max.x && min.y <= max.y).then(|| Rect2::new(min, max))
    }
}

/// Floor footprint (xy bounds of the box corners).
pub fn footprint(obb: &Obb) -> Rect2 {
    let (lo, hi) = obb.aabb();
    Rect2::new(Vector2::new(lo.x, lo.y), Vector2::new(hi.x, hi.y))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub nodes: BTreeMap<NodeId, ObjectNode>,
    pub edges: Vec<RelationEdge>,
    pub feature_dim: usize,
    pub frame_count: u32,
    pub floor_bounds: Rect2,
}

impl SceneGraph {
    pub fn empty(feature_dim: usize) -> Self {
        Self {
            nodes: BTreeMap::new(),
            edges: Vec::new(),
            feature_dim,
            frame_count: 0,
            floor_bounds: Rect2::new(Vector2::zeros(), Vector2::zeros()),
        }
    }

    /// Sorts edges by `(subject, object)`, the canonical order.
    pub fn sort_edges(&mut self) {
        self.edges.sort_by_key(|e| (e.subject_id, e.object_id));
    }

    /// Floor bounds covering every node footprint plus `margin`.
    pub fn fit_floor_bounds(&mut self, margin: f64) {
        let mut it = self.nodes.values().map(|n| footprint(&n.obb));
        if let Some(first) = it.next() {
            self.floor_bounds = it.fold(first, |acc, r| acc.union(&r)).expanded(margin);
        }
    }

    pub fn labels(&self) -> BTreeSet<String> {
        self.nodes.values().map(|n| n.label.to_lowercase()).collect()
    }

    pub fn neighbors(&self, id: NodeId) -> BTreeSet<NodeId> {
        self.edges
            .iter()
            .filter_map(|e| {
                if e.subject_id == id {
                    Some(e.object_id)
                } else if e.object_id == id {
                    Some(e.subject_id)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Subgraph on `keep` with every edge whose endpoints are both kept.
    pub fn induced(&self, keep: &BTreeSet<NodeId>) -> SceneGraph {
        SceneGraph {
            nodes: self
                .nodes
                .iter()
                .filter(|(id, _)| keep.contains(id))
                .map(|(id, n)| (*id, n.clone()))
                .collect(),
            edges: self
                .edges
                .iter()
                .filter(|e| keep.contains(&e.subject_id) && keep.contains(&e.object_id))
                .cloned()
                .collect(),
            feature_dim: self.feature_dim,
            frame_count: self.frame_count,
            floor_bounds: self.floor_bounds,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (id, n) in &self.nodes {
            let loc = format!("node {id}");
            if *id != n.id {
                return Err(violation("map key differs from node id", loc));
            }
            if n.label.trim().is_empty() {
                return Err(violation("label is empty", loc));
            }
            if !(n.confidence.alpha > 0.0 && n.confidence.beta > 0.0) {
                return Err(violation("confidence alpha and beta must be positive", loc));
            }
            if n.feature.len() != self.feature_dim {
                return Err(violation(
                    format!("feature length {} differs from feature_dim {}", n.feature.len(), self.feature_dim),
                    loc,
                ));
            }
            if !n.feature.iter().all(|v| v.is_finite()) {
                return Err(violation("feature has non-finite values", loc));
            }
            n.obb.validate().map_err(|e| violation(e.to_string(), loc.clone()))?;
        }
        for (i, e) in self.edges.iter().enumerate() {
            let loc = format!("edge {i} ({} -> {})", e.subject_id, e.object_id);
            if e.subject_id == e.object_id {
                return Err(violation("self loop", loc));
            }
            if !self.nodes.contains_key(&e.subject_id) || !self.nodes.contains_key(&e.object_id) {
                return Err(violation("endpoint does not resolve to a node", loc));
            }
            if e.predicates.is_empty() || e.predicates.len() > 5 {
                return Err(violation(format!("{} predicates, expected 1..=5", e.predicates.len()), loc));
            }
            let distinct: BTreeSet<&String> = e.predicates.iter().collect();
            if distinct.len() != e.predicates.len() {
                return Err(violation("duplicate predicates", loc));
            }
            if !(e.distance >= 0.0 && e.distance.is_finite()) {
                return Err(violation("distance must be finite and non-negative", loc));
            }
        }
        Ok(())
    }
}

/// Drops nodes whose label (case-insensitive) is in `background` together
/// with every edge touching them.
pub fn filter_background<S: AsRef<str>>(graph: &SceneGraph, background: &[S]) -> SceneGraph {
    let bg: BTreeSet<String> = background.iter().map(|s| s.as_ref().trim().to_lowercase()).collect();
    let keep: BTreeSet<NodeId> = graph
        .nodes
        .values()
        .filter(|n| !bg.contains(&n.label.trim().to_lowercase()))
        .map(|n| n.id)
        .collect();
    graph.induced(&keep)
}

fn matrix_rows(m: &Matrix3<f64>) -> Value {
    Value::Array((0..3).map(|r| num_array(&[m[(r, 0)], m[(r, 1)], m[(r, 2)]])).collect())
}

/// The canonical document as a JSON value (keys sorted, numbers rounded).
pub fn graph_to_value(graph: &SceneGraph) -> Value {
    let nodes: Vec<Value> = graph
        .nodes
        .values()
        .map(|n| {
            let best_view = match &n.best_view {
                Some(bv) => json!({
                    "frame": bv.frame_index,
                    "rotation": matrix_rows(&bv.pose.rotation),
                    "translation": num_array(bv.pose.translation.iter()),
                    "crop": bv.crop,
                }),
                None => Value::Null,
            };
            json!({
                "id": n.id,
                "label": n.label,
                "description": n.description,
                "feature": num_array(n.feature.iter()),
                "bbox_center": num_array(n.obb.center.iter()),
                "bbox_extent": num_array(n.obb.extents.iter()),
                "bbox_rotation": matrix_rows(&n.obb.rotation),
                "best_view": best_view,
                "confidence": {"alpha": num(n.confidence.alpha), "beta": num(n.confidence.beta)},
                "node_category": n.node_category,
                "point_count": n.point_count,
            })
        })
        .collect();
    let mut edges = graph.edges.clone();
    edges.sort_by_key(|e| (e.subject_id, e.object_id));
    let edges: Vec<Value> = edges
        .iter()
        .map(|e| {
            json!({
                "subject": e.subject_id,
                "object": e.object_id,
                "predicates": e.predicates,
                "distance": num(e.distance),
                "level": e.level.as_str(),
            })
        })
        .collect();
    json!({
        "schema": SCHEMA_VERSION,
        "feature_dim": graph.feature_dim,
        "frame_count": graph.frame_count,
        "floor_bounds": {
            "min": num_array(graph.floor_bounds.min.iter()),
            "max": num_array(graph.floor_bounds.max.iter()),
        },
        "nodes": nodes,
        "edges": edges,
    })
}

pub fn serialize_graph(graph: &SceneGraph) -> Vec<u8> {
    to_canonical_bytes(&graph_to_value(graph))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BestViewDoc {
    frame: u32,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    crop: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfidenceDoc {
    alpha: f64,
    beta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: NodeId,
    label: String,
    description: String,
    feature: Vec<f64>,
    bbox_center: [f64; 3],
    bbox_extent: [f64; 3],
    bbox_rotation: [[f64; 3]; 3],
    best_view: Option<BestViewDoc>,
    confidence: ConfidenceDoc,
    node_category: String,
    #[serde(default)]
    point_count: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    subject: NodeId,
    object: NodeId,
    predicates: Vec<String>,
    distance: f64,
    level: String,
}

#[derive(Deserialize)]
struct RectDoc {
    min: [f64; 2],
    max: [f64; 2],
}

#[derive(Deserialize)]
struct GraphDoc {
    schema: String,
    feature_dim: usize,
    frame_count: u32,
    floor_bounds: RectDoc,
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
}

/// Rotations printed with six significant digits are orthonormal only to
/// about 1e-6; anything within this distance is projected back onto SO(3).
const ROTATION_REPAIR_TOL: f64 = 1e-4;

fn read_rotation(rows: &[[f64; 3]; 3], loc: &str) -> Result<Matrix3<f64>, SceneError> {
    let m = Matrix3::from_fn(|r, c| rows[r][c]);
    if !m.iter().all(|v| v.is_finite()) {
        return Err(violation("rotation has non-finite entries", loc));
    }
    let err = (m.transpose() * m - Matrix3::identity()).norm();
    if err > ROTATION_REPAIR_TOL || m.determinant() <= 0.0 {
        return Err(violation(format!("rotation is not orthonormal (error {err:.3e})"), loc));
    }
    if m == Matrix3::identity() {
        return Ok(m);
    }
    Ok(orthonormalize(&m))
}

pub fn graph_from_value(v: Value) -> Result<SceneGraph, SceneError> {
    let doc: GraphDoc = serde_json::from_value(v).map_err(|e| SceneError::MalformedDocument(e.to_string()))?;
    if doc.schema != SCHEMA_VERSION {
        return Err(SceneError::MalformedDocument(format!("unsupported schema {:?}", doc.schema)));
    }
    let mut nodes = BTreeMap::new();
    for n in doc.nodes {
        let loc = format!("node {}", n.id);
        let rotation = read_rotation(&n.bbox_rotation, &loc)?;
        let obb = Obb {
            center: Vector3::from(n.bbox_center),
            extents: Vector3::from(n.bbox_extent),
            rotation,
        };
        let best_view = match n.best_view {
            Some(bv) => Some(BestView {
                frame_index: bv.frame,
                pose: Pose {
                    rotation: read_rotation(&bv.rotation, &format!("{loc} best_view"))?,
                    translation: Vector3::from(bv.translation),
                },
                crop: bv.crop,
            }),
            None => None,
        };
        let node = ObjectNode {
            id: n.id,
            label: n.label,
            description: n.description,
            feature: n.feature,
            obb,
            best_view,
            confidence: Confidence {
                alpha: n.confidence.alpha,
                beta: n.confidence.beta,
            },
            node_category: n.node_category,
            point_count: n.point_count,
        };
        if nodes.insert(node.id, node).is_some() {
            return Err(violation("duplicate node id", loc));
        }
    }
    let mut edges = Vec::with_capacity(doc.edges.len());
    for (i, e) in doc.edges.into_iter().enumerate() {
        let level = DistanceLevel::parse(&e.level)
            .ok_or_else(|| violation(format!("unknown level {:?}", e.level), format!("edge {i}")))?;
        edges.push(RelationEdge {
            subject_id: e.subject,
            object_id: e.object,
            predicates: e.predicates,
            distance: e.distance,
            level,
        });
    }
    let graph = SceneGraph {
        nodes,
        edges,
        feature_dim: doc.feature_dim,
        frame_count: doc.frame_count,
        floor_bounds: Rect2::new(Vector2::from(doc.floor_bounds.min), Vector2::from(doc.floor_bounds.max)),
    };
    graph.validate()?;
    let mut graph = graph;
    graph.sort_edges();
    Ok(graph)
}

pub fn deserialize_graph(bytes: &[u8]) -> Result<SceneGraph, SceneError> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| SceneError::MalformedDocument(e.to_string()))?;
    graph_from_value(v)
}

/// Returns a copy whose floats are already at serialization precision.
pub fn quantized(graph: &SceneGraph) -> SceneGraph {
    let q3 = |v: &Vector3<f64>| v.map(round_sig);
    let mut g = graph.clone();
    for n in g.nodes.values_mut() {
        n.feature.iter_mut().for_each(|x| *x = round_sig(*x));
        n.obb.center = q3(&n.obb.center);
        n.obb.extents = q3(&n.obb.extents);
        n.confidence.alpha = round_sig(n.confidence.alpha);
        n.confidence.beta = round_sig(n.confidence.beta);
        if let Some(bv) = n.best_view.as_mut() {
            bv.pose.translation = q3(&bv.pose.translation);
        }
    }
    for e in g.edges.iter_mut() {
        e.distance = round_sig(e.distance);
    }
    g.floor_bounds = Rect2::new(g.floor_bounds.min.map(round_sig), g.floor_bounds.max.map(round_sig));
    g
}

/// Inserts extra top-level sections (e.g. ground-truth annotations) into a
/// graph document.
pub fn with_sections(mut doc: Value, sections: Map<String, Value>) -> Value {
    if let Value::Object(map) = &mut doc {
        map.extend(sections);
    }
    doc
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn node(id: NodeId, label: &str, center: [f64; 3]) -> ObjectNode {
        ObjectNode {
            id,
            label: label.to_string(),
            description: format!("a {label}"),
            feature: vec![0.0; 4],
            obb: Obb::axis_aligned(Vector3::from(center), Vector3::new(0.5, 0.5, 0.5)).unwrap(),
            best_view: None,
            confidence: Confidence { alpha: 1.0, beta: 1.0 },
            node_category: "object".into(),
            point_count: 10,
        }
    }

    fn edge(s: NodeId, o: NodeId) -> RelationEdge {
        RelationEdge {
            subject_id: s,
            object_id: o,
            predicates: vec!["near".into()],
            distance: 0.4,
            level: DistanceLevel::Close,
        }
    }

    fn sample() -> SceneGraph {
        let mut g = SceneGraph::empty(4);
        for n in [node(0, "floor", [0.0, 0.0, 0.0]), node(1, "chair", [1.0, 0.0, 0.0]), node(2, "table", [1.0, 1.0, 0.0])] {
            g.nodes.insert(n.id, n);
        }
        g.edges = vec![edge(1, 0), edge(1, 2)];
        g.fit_floor_bounds(0.5);
        g
    }

    #[test]
    fn empty_graph_document() {
        let bytes = serialize_graph(&SceneGraph::empty(8));
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["schema"], SCHEMA_VERSION);
        assert_eq!(v["nodes"], json!([]));
        assert_eq!(v["edges"], json!([]));
        assert_eq!(deserialize_graph(&bytes).unwrap(), SceneGraph::empty(8));
    }

    #[test]
    fn equal_graphs_serialize_identically() {
        assert_eq!(serialize_graph(&sample()), serialize_graph(&sample()));
    }

    #[test]
    fn dangling_edge_is_rejected() {
        let mut g = sample();
        g.edges.push(edge(1, 9));
        let bytes = serialize_graph(&g);
        assert!(matches!(deserialize_graph(&bytes), Err(SceneError::InvariantViolation { .. })));
    }

    #[test]
    fn truncated_document_is_malformed() {
        let bytes = serialize_graph(&sample());
        assert!(matches!(
            deserialize_graph(&bytes[..bytes.len() / 2]),
            Err(SceneError::MalformedDocument(_))
        ));
    }

    #[test]
    fn background_filter() {
        let g = sample();
        let f = filter_background(&g, &DEFAULT_BACKGROUND_LABELS);
        assert_eq!(f.nodes.len(), 2);
        assert_eq!(f.edges, vec![edge(1, 2)]);
        let none: [&str; 0] = [];
        assert_eq!(filter_background(&g, &none), g);
        let all = filter_background(&g, &["FLOOR", "Chair", "table"]);
        assert!(all.nodes.is_empty() && all.edges.is_empty());
    }

    #[test]
    fn levels() {
        assert_eq!(DistanceLevel::from_distance(0.35), DistanceLevel::Close);
        assert_eq!(DistanceLevel::from_distance(0.5), DistanceLevel::Medium);
        assert_eq!(DistanceLevel::from_distance(2.0), DistanceLevel::Far);
    }
}
