//! Scoring: recall at k for objects, predicates and subject-predicate-object
//! triples against a ground-truth graph, task accuracies, and the pair-filter
//! ablation.
//!
//! Predicted nodes are paired with ground-truth nodes greedily by box IoU
//! (highest first, ties by ground-truth id then predicted id), keeping only
//! pairs with IoU above [`ASSIGNMENT_MIN_IOU`]. Label agreement is embedding
//! cosine at a per-kind threshold, with exact string equality accepted
//! outright. Each ground-truth edge is scored with its first predicate, and
//! predicted edges are looked up with the same direction.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::geometry::obb_iou;
use crate::model_clients::{ClientError, EmbeddingVector, Encoder, RelationRanker};
use crate::rag_tasks::plan::PlanReport;
use crate::relations::{ablation_pair_counts, candidate_pairs, extract_relations, PairFilterConfig};
use crate::scene_model::{NodeId, SceneGraph};
use crate::text::normalize_answer;

pub const ASSIGNMENT_MIN_IOU: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub object_threshold: f64,
    pub predicate_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            object_threshold: 0.95,
            predicate_threshold: 0.9,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, t) in [("object_threshold", self.object_threshold), ("predicate_threshold", self.predicate_threshold)] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(format!("{name} must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}

fn canon(s: &str) -> String {
    s.trim().to_lowercase()
}

pub fn labels_match(pred: &str, gt: &str, threshold: f64, encoder: &dyn Encoder) -> Result<bool, ClientError> {
    if canon(pred) == canon(gt) {
        return Ok(true);
    }
    Ok(encoder.embed_text(pred)?.cosine(&encoder.embed_text(gt)?) >= threshold)
}

/// [`labels_match`] with an embedding cache.
pub struct Matcher<'a> {
    pub encoder: &'a dyn Encoder,
    pub cfg: MatchConfig,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
}

impl<'a> Matcher<'a> {
    pub fn new(encoder: &'a dyn Encoder, cfg: MatchConfig) -> Self {
        Self {
            encoder,
            cfg,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn embed(&self, s: &str) -> Result<EmbeddingVector, ClientError> {
        let key = canon(s);
        if let Some(e) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(e.clone());
        }
        let e = self.encoder.embed_text(&key)?;
        self.cache.lock().expect("cache lock").insert(key, e.clone());
        Ok(e)
    }

    fn matches(&self, pred: &str, gt: &str, threshold: f64) -> Result<bool, ClientError> {
        if canon(pred) == canon(gt) {
            return Ok(true);
        }
        Ok(self.embed(pred)?.cosine(&self.embed(gt)?) >= threshold)
    }

    pub fn object(&self, pred: &str, gt: &str) -> Result<bool, ClientError> {
        self.matches(pred, gt, self.cfg.object_threshold)
    }

    pub fn predicate(&self, pred: &str, gt: &str) -> Result<bool, ClientError> {
        self.matches(pred, gt, self.cfg.predicate_threshold)
    }
}

/// Ground-truth id → predicted id.
pub fn assign_nodes(pred: &SceneGraph, gt: &SceneGraph) -> BTreeMap<NodeId, NodeId> {
    let mut pairs = Vec::new();
    for g in gt.nodes.values() {
        for p in pred.nodes.values() {
            let iou = obb_iou(&g.obb, &p.obb);
            if iou > ASSIGNMENT_MIN_IOU {
                pairs.push((iou, g.id, p.id));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = BTreeMap::new();
    let mut used = std::collections::BTreeSet::new();
    for (_, g, p) in pairs {
        if !out.contains_key(&g) && !used.contains(&p) {
            out.insert(g, p);
            used.insert(p);
        }
    }
    out
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    }
}

/// Nodes carry a single label, so every `k ≥ 1` scores the same.
pub fn object_recall_at_k(
    pred: &SceneGraph,
    gt: &SceneGraph,
    k: usize,
    matcher: &Matcher,
) -> Result<f64, ClientError> {
    let assign = assign_nodes(pred, gt);
    let mut hits = 0;
    for g in gt.nodes.values() {
        if let Some(p) = assign.get(&g.id) {
            if k >= 1 && matcher.object(&pred.nodes[p].label, &g.label)? {
                hits += 1;
            }
        }
    }
    Ok(fraction(hits, gt.nodes.len()))
}

fn predicted_edge(pred: &SceneGraph, s: NodeId, o: NodeId) -> Option<&crate::scene_model::RelationEdge> {
    pred.edges.iter().find(|e| e.subject_id == s && e.object_id == o)
}

fn predicate_in_top_k(list: &[String], gt: &str, k: usize, matcher: &Matcher) -> Result<bool, ClientError> {
    for p in list.iter().take(k) {
        if matcher.predicate(p, gt)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Over ground-truth edges with both endpoints assigned.
pub fn predicate_recall_at_k(
    pred: &SceneGraph,
    gt: &SceneGraph,
    k: usize,
    matcher: &Matcher,
) -> Result<f64, ClientError> {
    let assign = assign_nodes(pred, gt);
    let (mut hits, mut total) = (0, 0);
    for e in &gt.edges {
        let (Some(&s), Some(&o)) = (assign.get(&e.subject_id), assign.get(&e.object_id)) else {
            continue;
        };
        total += 1;
        if let Some(pe) = predicted_edge(pred, s, o) {
            if predicate_in_top_k(&pe.predicates, e.predicate(), k, matcher)? {
                hits += 1;
            }
        }
    }
    Ok(fraction(hits, total))
}

/// Over all ground-truth edges: both labels match and the predicate is
/// within the top `k` of the directed predicted edge.
pub fn relationship_recall_at_k(
    pred: &SceneGraph,
    gt: &SceneGraph,
    k: usize,
    matcher: &Matcher,
) -> Result<f64, ClientError> {
    let assign = assign_nodes(pred, gt);
    let mut hits = 0;
    for e in &gt.edges {
        if triple_hit(pred, gt, &assign, e, k, matcher)? {
            hits += 1;
        }
    }
    Ok(fraction(hits, gt.edges.len()))
}

fn triple_hit(
    pred: &SceneGraph,
    gt: &SceneGraph,
    assign: &BTreeMap<NodeId, NodeId>,
    e: &crate::scene_model::RelationEdge,
    k: usize,
    matcher: &Matcher,
) -> Result<bool, ClientError> {
    let (Some(&s), Some(&o)) = (assign.get(&e.subject_id), assign.get(&e.object_id)) else {
        return Ok(false);
    };
    if !matcher.object(&pred.nodes[&s].label, &gt.nodes[&e.subject_id].label)?
        || !matcher.object(&pred.nodes[&o].label, &gt.nodes[&e.object_id].label)?
    {
        return Ok(false);
    }
    match predicted_edge(pred, s, o) {
        Some(pe) => predicate_in_top_k(&pe.predicates, e.predicate(), k, matcher),
        None => Ok(false),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchLogEntry {
    pub gt_id: NodeId,
    pub gt_label: String,
    pub pred_id: Option<NodeId>,
    pub pred_label: Option<String>,
    pub label_match: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub object_r1: f64,
    pub predicate_r1: f64,
    pub predicate_r3: f64,
    pub relationship_r1: f64,
    pub relationship_r3: f64,
    pub gt_nodes: usize,
    pub gt_edges: usize,
    pub pred_nodes: usize,
    pub pred_edges: usize,
    pub matches: Vec<MatchLogEntry>,
}

pub fn evaluate(pred: &SceneGraph, gt: &SceneGraph, matcher: &Matcher) -> Result<EvalReport, ClientError> {
    let assign = assign_nodes(pred, gt);
    let mut matches = Vec::new();
    for g in gt.nodes.values() {
        let p = assign.get(&g.id).map(|p| &pred.nodes[p]);
        matches.push(MatchLogEntry {
            gt_id: g.id,
            gt_label: g.label.clone(),
            pred_id: p.map(|n| n.id),
            pred_label: p.map(|n| n.label.clone()),
            label_match: match p {
                Some(n) => matcher.object(&n.label, &g.label)?,
                None => false,
            },
        });
    }
    Ok(EvalReport {
        object_r1: object_recall_at_k(pred, gt, 1, matcher)?,
        predicate_r1: predicate_recall_at_k(pred, gt, 1, matcher)?,
        predicate_r3: predicate_recall_at_k(pred, gt, 3, matcher)?,
        relationship_r1: relationship_recall_at_k(pred, gt, 1, matcher)?,
        relationship_r3: relationship_recall_at_k(pred, gt, 3, matcher)?,
        gt_nodes: gt.nodes.len(),
        gt_edges: gt.edges.len(),
        pred_nodes: pred.nodes.len(),
        pred_edges: pred.edges.len(),
        matches,
    })
}

pub fn report_table(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>8} {:>8}", "metric", "R@1", "R@3");
    let _ = writeln!(s, "{:<16} {:>8.4} {:>8}", "object", r.object_r1, "-");
    let _ = writeln!(s, "{:<16} {:>8.4} {:>8.4}", "predicate", r.predicate_r1, r.predicate_r3);
    let _ = writeln!(s, "{:<16} {:>8.4} {:>8.4}", "relationship", r.relationship_r1, r.relationship_r3);
    let _ = writeln!(
        s,
        "gt {} nodes / {} edges, predicted {} nodes / {} edges",
        r.gt_nodes, r.gt_edges, r.pred_nodes, r.pred_edges
    );
    s
}

/// Normalized string equality, or numeric equality when the gold answer is
/// a number.
pub fn answer_matches(predicted: &str, gold: &str) -> bool {
    let (p, g) = (normalize_answer(predicted), normalize_answer(gold));
    if p == g {
        return true;
    }
    match (g.parse::<f64>(), p.parse::<f64>()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

/// Fraction of `(predicted, gold)` pairs that match; 0 for an empty list.
pub fn qa_accuracy(answers: &[(String, String)]) -> f64 {
    if answers.is_empty() {
        return 0.0;
    }
    answers.iter().filter(|(p, g)| answer_matches(p, g)).count() as f64 / answers.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningMetrics {
    /// Percent of plans equal to their reference.
    pub corr: f64,
    /// Percent of executable plans.
    pub exec: f64,
    /// Wrong steps per hundred reference steps.
    pub wact: f64,
    /// Missing steps per hundred reference steps.
    pub mact: f64,
}

fn percent(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        (n as f64 * 100.0) / d as f64
    }
}

pub fn planning_metrics(reports: &[PlanReport]) -> PlanningMetrics {
    let steps: usize = reports.iter().map(|r| r.reference_steps).sum();
    PlanningMetrics {
        corr: percent(reports.iter().filter(|r| r.correct).count(), reports.len()),
        exec: percent(reports.iter().filter(|r| r.executable).count(), reports.len()),
        wact: percent(reports.iter().map(|r| r.wrong_actions).sum(), steps),
        mact: percent(reports.iter().map(|r| r.missing_actions).sum(), steps),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub use_iou: bool,
    pub use_distance: bool,
    pub pairs: usize,
    pub edges: usize,
    pub predicate_r1: f64,
    pub relationship_r1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub d_thresh: f64,
    /// Order (off,off), (on,off), (off,on), (on,on).
    pub runs: Vec<AblationRun>,
    /// Pairs passing both criteria.
    pub intersection: usize,
}

/// Re-extracts the relations of `scene`'s nodes under each filter
/// combination and scores them against `gt`.
pub fn run_ablation(
    scene: &SceneGraph,
    gt: &SceneGraph,
    d_thresh: f64,
    relator: &dyn RelationRanker,
    matcher: &Matcher,
    parallelism: usize,
) -> Result<AblationReport, ClientError> {
    let counts = ablation_pair_counts(scene, d_thresh);
    let mut runs = Vec::new();
    for row in &counts.rows {
        let cfg = PairFilterConfig {
            use_iou: row.use_iou,
            use_distance: row.use_distance,
            d_thresh,
        };
        let pairs = candidate_pairs(scene, &cfg);
        let (edges, _) = extract_relations(&pairs, scene, relator, parallelism);
        let mut g = scene.clone();
        g.edges = edges;
        g.sort_edges();
        runs.push(AblationRun {
            use_iou: row.use_iou,
            use_distance: row.use_distance,
            pairs: pairs.len(),
            edges: g.edges.len(),
            predicate_r1: predicate_recall_at_k(&g, gt, 1, matcher)?,
            relationship_r1: relationship_recall_at_k(&g, gt, 1, matcher)?,
        });
    }
    Ok(AblationReport {
        d_thresh,
        runs,
        intersection: counts.intersection,
    })
}

pub fn ablation_table(r: &AblationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<5} {:<9} {:>6} {:>6} {:>8} {:>8}", "IoU", "Distance", "pairs", "edges", "Pred@1", "Rel@1");
    let mark = |b: bool| if b { "yes" } else { "no" };
    for run in &r.runs {
        let _ = writeln!(
            s,
            "{:<5} {:<9} {:>6} {:>6} {:>8.4} {:>8.4}",
            mark(run.use_iou),
            mark(run.use_distance),
            run.pairs,
            run.edges,
            run.predicate_r1,
            run.relationship_r1
        );
    }
    s
}
