//! Downstream tasks over the indexed scene: question answering, grounding,
//! instance retrieval, and task planning.

pub mod map;
pub mod plan;
pub mod prompt;

use std::collections::BTreeSet;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_clients::{ClientError, Completer, EmbeddingVector, Encoder};
use crate::scene_model::{footprint, NodeId, Rect2, SceneGraph};
use crate::text::words;
use crate::vector_store::{StoreError, VectorDb};

pub use map::render_map_svg;
pub use plan::{parse_plan, validate_plan, Action, Plan, PlanError, PlanReport, Step};
pub use prompt::{GroundedPrompt, GROUND_TEMPLATE, PLAN_TEMPLATE, QA_TEMPLATE};

/// Retrieval depth used when the caller does not choose one.
pub const DEFAULT_K: usize = 3;
/// Minimum label similarity for an instruction phrase to name an object.
pub const MENTION_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("the vector database is empty")]
    EmptyDatabase,
    #[error("no scene object matches the query")]
    NoMatchingInstance,
    #[error("the query carries neither text nor an image")]
    EmptyQuery,
    #[error("the instruction mentions no scene object")]
    NoMentionedObjects,
    #[error("plan does not follow the action grammar: {0}")]
    PlanParseFailure(String),
    #[error("plan argument {0:?} matches no scene object")]
    UnboundTarget(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for TaskError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::EmptyDatabase => TaskError::EmptyDatabase,
            StoreError::Client(c) => TaskError::Client(c),
            other => TaskError::Store(other),
        }
    }
}

impl From<PlanError> for TaskError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::PlanParseFailure(s) => TaskError::PlanParseFailure(s),
            PlanError::UnboundTarget(s) => TaskError::UnboundTarget(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub record_id: usize,
    pub label: String,
    pub node_ids: Vec<NodeId>,
    pub attributes: Vec<String>,
    pub relationships: Vec<String>,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    /// Best chunk first.
    pub entries: Vec<ContextEntry>,
}

impl RetrievedContext {
    /// Attribute then relation facts of every entry, first occurrence kept.
    pub fn facts(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for e in &self.entries {
            for f in e.attributes.iter().chain(&e.relationships) {
                if seen.insert(f.clone()) {
                    out.push(f.clone());
                }
            }
        }
        out
    }

    pub fn source_scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }
}

pub fn retrieve_context(query: &EmbeddingVector, db: &VectorDb, k: usize) -> Result<RetrievedContext, TaskError> {
    let hits = db.search(query, k)?;
    let entries = hits
        .into_iter()
        .filter_map(|h| db.record(h.record_id).map(|r| (h, r)))
        .map(|(h, r)| ContextEntry {
            record_id: h.record_id,
            label: r.chunk.label.clone(),
            node_ids: r.chunk.nodes.keys().copied().collect(),
            attributes: r.chunk.attribute_facts(),
            relationships: r.chunk.relation_facts(),
            score: h.score,
        })
        .collect();
    Ok(RetrievedContext { entries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaOutcome {
    pub answer: String,
    pub context: RetrievedContext,
    pub prompt: GroundedPrompt,
}

pub fn answer_question(
    question: &str,
    db: &VectorDb,
    encoder: &dyn Encoder,
    completer: &dyn Completer,
    k: usize,
) -> Result<QaOutcome, TaskError> {
    if db.is_empty() {
        return Err(TaskError::EmptyDatabase);
    }
    let q = encoder.embed_text(question)?;
    let context = retrieve_context(&q, db, k)?;
    let prompt = GroundedPrompt::render(QA_TEMPLATE, context.facts(), question).expect("built-in template");
    let answer = completer.complete(&prompt)?.trim().to_string();
    Ok(QaOutcome {
        answer,
        context,
        prompt,
    })
}

/// Position on the top-down map: the box center clamped into the floor
/// bounds, and the box footprint clipped to them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapLocation {
    pub xy: Vector2<f64>,
    pub footprint: Rect2,
}

pub fn map_location(graph: &SceneGraph, id: NodeId) -> Option<MapLocation> {
    let node = graph.nodes.get(&id)?;
    let bounds = graph.floor_bounds;
    let xy = bounds.clamp(&node.obb.center.xy());
    let fp = footprint(&node.obb).intersection(&bounds).unwrap_or(Rect2::new(xy, xy));
    Some(MapLocation { xy, footprint: fp })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMatch {
    pub node_id: NodeId,
    pub label: String,
    pub description: String,
    pub score: f64,
    pub crop: Option<String>,
    pub map: MapLocation,
}

fn instance_text(label: &str, description: &str) -> String {
    format!("{label}: {description}")
}

/// Highest cosine between `query` and `"<label>: <description>"` over the
/// candidate nodes present in `graph`; ties to the lower id.
fn rerank_instances(
    query: &EmbeddingVector,
    candidates: &BTreeSet<NodeId>,
    graph: &SceneGraph,
    encoder: &dyn Encoder,
) -> Result<InstanceMatch, TaskError> {
    let mut best: Option<(f64, NodeId)> = None;
    for &id in candidates {
        let Some(node) = graph.nodes.get(&id) else { continue };
        let e = encoder.embed_text(&instance_text(&node.label, &node.description))?;
        let s = query.cosine(&e);
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, id));
        }
    }
    let (score, id) = best.ok_or(TaskError::NoMatchingInstance)?;
    let node = &graph.nodes[&id];
    Ok(InstanceMatch {
        node_id: id,
        label: node.label.clone(),
        description: node.description.clone(),
        score,
        crop: node.best_view.as_ref().map(|b| b.crop.clone()),
        map: map_location(graph, id).expect("node exists"),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundOutcome {
    pub text: String,
    pub instance: InstanceMatch,
    pub context: RetrievedContext,
    pub prompt: GroundedPrompt,
}

/// Answers a "where is" question and locates the object: the instance is
/// re-ranked within the best chunk.
pub fn ground_query(
    question: &str,
    db: &VectorDb,
    encoder: &dyn Encoder,
    completer: &dyn Completer,
    graph: &SceneGraph,
    k: usize,
) -> Result<GroundOutcome, TaskError> {
    if db.is_empty() {
        return Err(TaskError::EmptyDatabase);
    }
    let q = encoder.embed_text(question)?;
    let context = retrieve_context(&q, db, k)?;
    let top: BTreeSet<NodeId> = context
        .entries
        .first()
        .map(|e| e.node_ids.iter().copied().collect())
        .unwrap_or_default();
    let instance = rerank_instances(&q, &top, graph, encoder)?;
    let prompt = GroundedPrompt::render(GROUND_TEMPLATE, context.facts(), question).expect("built-in template");
    let text = completer.complete(&prompt)?.trim().to_string();
    Ok(GroundOutcome {
        text,
        instance,
        context,
        prompt,
    })
}

/// Text and/or image crop reference describing the wanted instance.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceQuery {
    pub text: Option<String>,
    pub image: Option<String>,
}

/// Embeds the query (mean of the text and image embeddings when both are
/// given), collects instances of the top-k chunks and re-ranks them.
pub fn retrieve_instance(
    query: &InstanceQuery,
    db: &VectorDb,
    encoder: &dyn Encoder,
    graph: &SceneGraph,
    k: usize,
) -> Result<InstanceMatch, TaskError> {
    if db.is_empty() {
        return Err(TaskError::EmptyDatabase);
    }
    let mut parts = Vec::new();
    if let Some(t) = query.text.as_deref().filter(|t| !t.trim().is_empty()) {
        parts.push(encoder.embed_text(t)?);
    }
    if let Some(img) = query.image.as_deref().filter(|s| !s.trim().is_empty()) {
        parts.push(encoder.embed_image(img)?);
    }
    let q = EmbeddingVector::mean_of(&parts).ok_or(TaskError::EmptyQuery)?;
    let context = retrieve_context(&q, db, k)?;
    let candidates: BTreeSet<NodeId> = context.entries.iter().flat_map(|e| e.node_ids.iter().copied()).collect();
    rerank_instances(&q, &candidates, graph, encoder)
}

/// Objects named by 1- to 3-word phrases of the instruction (label cosine at
/// least [`MENTION_THRESHOLD`]), plus their one-hop neighbors, as an induced
/// subgraph.
pub fn extract_task_subgraph(
    instruction: &str,
    graph: &SceneGraph,
    encoder: &dyn Encoder,
) -> Result<SceneGraph, TaskError> {
    let toks = words(instruction);
    let mut phrases = Vec::new();
    for n in 1..=3 {
        for w in toks.windows(n) {
            phrases.push(encoder.embed_text(&w.join(" ")).ok());
        }
    }
    let mut mentioned = BTreeSet::new();
    for label in graph.labels() {
        let e = encoder.embed_text(&label)?;
        let hit = phrases.iter().flatten().any(|p| p.cosine(&e) >= MENTION_THRESHOLD);
        if hit {
            mentioned.extend(graph.nodes.values().filter(|n| n.label == label).map(|n| n.id));
        }
    }
    if mentioned.is_empty() {
        return Err(TaskError::NoMentionedObjects);
    }
    let mut keep = mentioned.clone();
    for id in &mentioned {
        keep.extend(graph.neighbors(*id));
    }
    Ok(graph.induced(&keep))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub plan: Plan,
    pub reply: String,
    pub subgraph_nodes: Vec<NodeId>,
    pub prompt: GroundedPrompt,
}

/// Facts describing a whole (sub)graph: attribute facts by id, then one
/// relation sentence per edge.
pub fn graph_facts(graph: &SceneGraph) -> Vec<String> {
    let mut facts: Vec<String> = graph
        .nodes
        .values()
        .map(|n| {
            prompt::AttributeFact {
                label: n.label.clone(),
                id: n.id,
                description: n.description.clone(),
                center: n.obb.center,
                extent: n.obb.extents,
            }
            .render()
        })
        .collect();
    for e in &graph.edges {
        if let (Some(s), Some(o)) = (graph.nodes.get(&e.subject_id), graph.nodes.get(&e.object_id)) {
            facts.push(prompt::relation_fact(&s.label, e.predicate(), &o.label));
        }
    }
    facts
}

pub fn plan_task(
    instruction: &str,
    graph: &SceneGraph,
    encoder: &dyn Encoder,
    completer: &dyn Completer,
) -> Result<PlanOutcome, TaskError> {
    let sub = extract_task_subgraph(instruction, graph, encoder)?;
    let prompt = GroundedPrompt::render(PLAN_TEMPLATE, graph_facts(&sub), instruction).expect("built-in template");
    let reply = completer.complete(&prompt)?.trim().to_string();
    let steps = plan::parse_plan(&reply)?;
    let plan = plan::bind_plan(steps, &sub, instruction)?;
    Ok(PlanOutcome {
        plan,
        reply,
        subgraph_nodes: sub.nodes.keys().copied().collect(),
        prompt,
    })
}
