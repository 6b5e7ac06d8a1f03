//! Candidate-pair filtering on box overlap and centroid distance, followed by
//! predicate ranking through a relation client.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::geometry::{centroid_distance, obb_iou, Obb};
use crate::model_clients::{ClientError, PairContext, PairObject, RelationRanker, RelationReply};
use crate::scene_model::{DistanceLevel, NodeId, RelationEdge, SceneGraph};

/// Maximum predicates kept per edge.
pub const MAX_PREDICATES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairFilterConfig {
    pub use_iou: bool,
    pub use_distance: bool,
    /// meters
    pub d_thresh: f64,
}

impl Default for PairFilterConfig {
    fn default() -> Self {
        Self {
            use_iou: true,
            use_distance: true,
            d_thresh: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassedBy {
    Iou,
    Distance,
    Both,
    /// Both criteria disabled.
    Unfiltered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub subject_id: NodeId,
    pub object_id: NodeId,
    pub iou: f64,
    pub distance: f64,
    pub passed_by: PassedBy,
}

struct PairMetrics {
    a: NodeId,
    b: NodeId,
    iou: f64,
    distance: f64,
}

fn pair_metrics(graph: &SceneGraph) -> Vec<PairMetrics> {
    let nodes: Vec<_> = graph.nodes.values().collect();
    let mut out = Vec::with_capacity(nodes.len() * nodes.len().saturating_sub(1) / 2);
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            out.push(PairMetrics {
                a: nodes[i].id,
                b: nodes[j].id,
                iou: obb_iou(&nodes[i].obb, &nodes[j].obb),
                distance: centroid_distance(&nodes[i].obb, &nodes[j].obb),
            });
        }
    }
    out
}

fn classify(m: &PairMetrics, cfg: &PairFilterConfig) -> Option<PassedBy> {
    if !cfg.use_iou && !cfg.use_distance {
        return Some(PassedBy::Unfiltered);
    }
    let by_iou = cfg.use_iou && m.iou > 0.0;
    let by_dist = cfg.use_distance && m.distance < cfg.d_thresh;
    match (by_iou, by_dist) {
        (true, true) => Some(PassedBy::Both),
        (true, false) => Some(PassedBy::Iou),
        (false, true) => Some(PassedBy::Distance),
        (false, false) => None,
    }
}

/// Unordered node pairs (lower id first) kept by the union of the enabled
/// criteria `IoU > 0` and `distance < d_thresh`; all pairs when both are off.
/// Expects a background-filtered graph.
pub fn candidate_pairs(graph: &SceneGraph, cfg: &PairFilterConfig) -> Vec<CandidatePair> {
    pair_metrics(graph)
        .into_iter()
        .filter_map(|m| {
            classify(&m, cfg).map(|passed_by| CandidatePair {
                subject_id: m.a,
                object_id: m.b,
                iou: m.iou,
                distance: m.distance,
                passed_by,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRow {
    pub use_iou: bool,
    pub use_distance: bool,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCounts {
    /// Rows in the order (off,off), (on,off), (off,on), (on,on).
    pub rows: Vec<AblationRow>,
    /// Pairs passing both criteria.
    pub intersection: usize,
}

pub fn ablation_pair_counts(graph: &SceneGraph, d_thresh: f64) -> AblationCounts {
    let metrics = pair_metrics(graph);
    let iou_set: BTreeSet<(NodeId, NodeId)> = metrics.iter().filter(|m| m.iou > 0.0).map(|m| (m.a, m.b)).collect();
    let dist_set: BTreeSet<(NodeId, NodeId)> =
        metrics.iter().filter(|m| m.distance < d_thresh).map(|m| (m.a, m.b)).collect();
    let intersection = iou_set.intersection(&dist_set).count();
    let rows = vec![
        AblationRow {
            use_iou: false,
            use_distance: false,
            pairs: metrics.len(),
        },
        AblationRow {
            use_iou: true,
            use_distance: false,
            pairs: iou_set.len(),
        },
        AblationRow {
            use_iou: false,
            use_distance: true,
            pairs: dist_set.len(),
        },
        AblationRow {
            use_iou: true,
            use_distance: true,
            pairs: iou_set.len() + dist_set.len() - intersection,
        },
    ];
    AblationCounts { rows, intersection }
}

/// Geometric predicate rules shared by the mock relation client and the
/// synthetic ground-truth generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationRules {
    /// Max gap between a bottom face and the supporting top face (m).
    pub on_tolerance: f64,
    /// Centroid distance below which two objects are "near" (m).
    pub near_distance: f64,
    /// Half-angle around the room's −y axis inside which the subject is
    /// "in front of" the object (degrees).
    pub front_half_angle_deg: f64,
}

impl Default for RelationRules {
    fn default() -> Self {
        Self {
            on_tolerance: 0.05,
            near_distance: 0.5,
            front_half_angle_deg: 45.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialRelation {
    /// True when the second box is the subject.
    pub reversed: bool,
    pub predicates: Vec<String>,
}

fn z_range(b: &Obb) -> (f64, f64) {
    let (lo, hi) = b.aabb();
    (lo.z, hi.z)
}

fn footprints_overlap(a: &Obb, b: &Obb) -> bool {
    let (alo, ahi) = a.aabb();
    let (blo, bhi) = b.aabb();
    alo.x <= bhi.x && blo.x <= ahi.x && alo.y <= bhi.y && blo.y <= ahi.y
}

fn rests_on(top: &Obb, bottom: &Obb, tol: f64) -> bool {
    let (top_lo, _) = z_range(top);
    let (_, bottom_hi) = z_range(bottom);
    footprints_overlap(top, bottom) && (top_lo - bottom_hi).abs() <= tol && top.center.z > bottom.center.z
}

/// Ranked predicates for the pair `(a, b)` and which box is the subject, or
/// `None` when the boxes are neither stacked, near, nor overlapping.
///
/// Orientation does not depend on ids: a stacked box is the subject of "on";
/// otherwise the subject is the box with the smaller coordinate along the
/// dominant horizontal axis of the centroid offset (x first on ties), so it is
/// "left of" or "in front of" the other.
pub fn spatial_relation(a: &Obb, b: &Obb, rules: &RelationRules) -> Option<SpatialRelation> {
    let distance = centroid_distance(a, b);
    let near = distance < rules.near_distance;
    let overlap = obb_iou(a, b) > 0.0;
    let mut predicates: Vec<&str> = Vec::new();
    let reversed;
    if rests_on(a, b, rules.on_tolerance) || rests_on(b, a, rules.on_tolerance) {
        reversed = !rests_on(a, b, rules.on_tolerance);
        predicates.extend(["on", "above"]);
        if near {
            predicates.extend(["near", "next to"]);
        }
        // resting contact counts as touching even without volume overlap
        predicates.push("touching");
    } else if near || overlap {
        let d = b.center - a.center;
        let x_dominant = d.x.abs() >= d.y.abs();
        reversed = if x_dominant { d.x < 0.0 } else { d.y < 0.0 };
        let (subj, obj) = if reversed { (b, a) } else { (a, b) };
        let offset = subj.center - obj.center;
        let horizontal = (offset.x * offset.x + offset.y * offset.y).sqrt();
        let directional = if horizontal < 1e-9 {
            None
        } else if !x_dominant {
            let angle = (-offset.y / horizontal).clamp(-1.0, 1.0).acos().to_degrees();
            (angle <= rules.front_half_angle_deg).then_some("in front of")
        } else {
            Some("left of")
        };
        if near {
            predicates.push("near");
        }
        if let Some(dir) = directional {
            predicates.push(dir);
        }
        if overlap {
            predicates.push("touching");
        }
    } else {
        return None;
    }
    Some(SpatialRelation {
        reversed,
        predicates: predicates.into_iter().map(String::from).collect(),
    })
}

/// Checks a relation reply: 1..=5 non-empty predicates, duplicates removed
/// keeping first occurrence.
pub fn clean_predicates(raw: &[String]) -> Result<Vec<String>, ClientError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for p in raw {
        let p = p.trim().to_lowercase();
        if p.is_empty() {
            return Err(ClientError::MalformedReply("empty predicate".into()));
        }
        if seen.insert(p.clone()) {
            out.push(p);
        }
    }
    if out.is_empty() || out.len() > MAX_PREDICATES {
        return Err(ClientError::MalformedReply(format!(
            "expected 1..={MAX_PREDICATES} predicates, got {}",
            out.len()
        )));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct RelationFailure {
    pub subject_id: NodeId,
    pub object_id: NodeId,
    pub error: ClientError,
}

pub fn pair_context(graph: &SceneGraph, pair: &CandidatePair) -> Option<PairContext> {
    let obj = |id: NodeId| {
        graph.nodes.get(&id).map(|n| PairObject {
            id: n.id,
            label: n.label.clone(),
            description: n.description.clone(),
            crop: n.best_view.as_ref().map(|bv| bv.crop.clone()),
            obb: n.obb,
        })
    };
    Some(PairContext {
        subject: obj(pair.subject_id)?,
        object: obj(pair.object_id)?,
        distance: pair.distance,
    })
}

fn edge_from_reply(pair: &CandidatePair, reply: RelationReply) -> Result<RelationEdge, ClientError> {
    let predicates = clean_predicates(&reply.predicates)?;
    let (subject_id, object_id) = if reply.reversed {
        (pair.object_id, pair.subject_id)
    } else {
        (pair.subject_id, pair.object_id)
    };
    Ok(RelationEdge {
        subject_id,
        object_id,
        predicates,
        distance: pair.distance,
        level: DistanceLevel::from_distance(pair.distance),
    })
}

/// Ranks predicates for every pair with up to `parallelism` concurrent client
/// calls. Output follows the input pair order; failed pairs are reported and
/// produce no edge.
pub fn extract_relations(
    pairs: &[CandidatePair],
    graph: &SceneGraph,
    relator: &dyn RelationRanker,
    parallelism: usize,
) -> (Vec<RelationEdge>, Vec<RelationFailure>) {
    let results: Vec<Mutex<Option<Result<RelationEdge, ClientError>>>> =
        pairs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = parallelism.max(1).min(pairs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= pairs.len() {
                    break;
                }
                let pair = &pairs[i];
                let outcome = match pair_context(graph, pair) {
                    Some(ctx) => relator.rank_predicates(&ctx).and_then(|r| edge_from_reply(pair, r)),
                    None => Err(ClientError::MalformedReply(format!(
                        "pair ({}, {}) references a missing node",
                        pair.subject_id, pair.object_id
                    ))),
                };
                *results[i].lock().unwrap() = Some(outcome);
            });
        }
    });
    let mut edges = Vec::new();
    let mut failures = Vec::new();
    for (pair, slot) in pairs.iter().zip(results) {
        match slot.into_inner().unwrap().expect("every pair is processed") {
            Ok(e) => edges.push(e),
            Err(error) => {
                log::warn!("relation for pair ({}, {}) dropped: {error}", pair.subject_id, pair.object_id);
                failures.push(RelationFailure {
                    subject_id: pair.subject_id,
                    object_id: pair.object_id,
                    error,
                });
            }
        }
    }
    (edges, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn aa(center: [f64; 3], ext: [f64; 3]) -> Obb {
        Obb::axis_aligned(Vector3::from(center), Vector3::from(ext)).unwrap()
    }

    #[test]
    fn stacked_box_is_subject_of_on() {
        let table = aa([0.0, 0.0, 0.2], [0.8, 0.8, 0.4]);
        let mug = aa([0.1, 0.0, 0.45], [0.1, 0.1, 0.1]);
        let r = spatial_relation(&table, &mug, &RelationRules::default()).unwrap();
        assert!(r.reversed);
        assert_eq!(r.predicates[0], "on");
        let r2 = spatial_relation(&mug, &table, &RelationRules::default()).unwrap();
        assert!(!r2.reversed);
        assert_eq!(r.predicates, r2.predicates);
    }

    #[test]
    fn near_pair_orientation_is_geometric() {
        let a = aa([0.0, 0.0, 0.2], [0.2, 0.2, 0.4]);
        let b = aa([0.3, 0.05, 0.2], [0.2, 0.2, 0.4]);
        let r = spatial_relation(&b, &a, &RelationRules::default()).unwrap();
        assert!(r.reversed, "a has the smaller x and becomes subject");
        assert_eq!(r.predicates, vec!["near", "left of"]);
        let c = aa([0.05, -0.35, 0.2], [0.2, 0.2, 0.4]);
        let r = spatial_relation(&a, &c, &RelationRules::default()).unwrap();
        assert!(r.reversed);
        assert_eq!(r.predicates, vec!["near", "in front of"]);
    }

    #[test]
    fn distant_pair_has_no_relation() {
        let a = aa([0.0, 0.0, 0.2], [0.2, 0.2, 0.4]);
        let b = aa([3.0, 0.0, 0.2], [0.2, 0.2, 0.4]);
        assert!(spatial_relation(&a, &b, &RelationRules::default()).is_none());
    }

    #[test]
    fn predicate_cleaning() {
        let seven: Vec<String> = (0..7).map(|i| format!("p{i}")).collect();
        assert!(clean_predicates(&seven).is_err());
        assert!(clean_predicates(&[]).is_err());
        let dup = vec!["On".to_string(), "on".into(), "near".into()];
        assert_eq!(clean_predicates(&dup).unwrap(), vec!["on", "near"]);
    }
}
