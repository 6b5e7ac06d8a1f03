//! Frames to scene graph: fusion, box fitting, best-view labeling, background
//! removal, pair filtering and relation extraction.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::best_view::{label_best_view, select_best_view, subsample, DepthMap, ViewCandidate, ViewScoreConfig};
use crate::frames::FrameObservation;
use crate::fusion::{FusionConfig, FusionSession};
use crate::geometry::{fit_obb, fit_upright_obb};
use crate::model_clients::{Labeler, RelationRanker};
use crate::relations::{candidate_pairs, extract_relations, PairFilterConfig, RelationFailure};
use crate::scene_model::{filter_background, BestView, NodeId, ObjectNode, SceneGraph, DEFAULT_BACKGROUND_LABELS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub fusion: FusionConfig,
    pub view: ViewScoreConfig,
    pub filter: PairFilterConfig,
    pub background_labels: Vec<String>,
    /// Points kept per object when scoring views.
    pub max_view_points: usize,
    pub relation_parallelism: usize,
    /// Margin added around object footprints for the floor bounds (m).
    pub floor_margin: f64,
    /// Voxel edge for thinning points before box fitting (m); 0 keeps all.
    pub voxel_size: f64,
    /// Keep box z on world z instead of the free PCA fit.
    pub upright_boxes: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            view: ViewScoreConfig::default(),
            filter: PairFilterConfig::default(),
            background_labels: DEFAULT_BACKGROUND_LABELS.iter().map(|s| s.to_string()).collect(),
            max_view_points: 2000,
            relation_parallelism: 4,
            floor_margin: 0.5,
            voxel_size: 0.02,
            upright_boxes: true,
        }
    }
}

/// One point per occupied voxel of edge `size`: the mean of the points in
/// it, in voxel order. Evens out sampling density across surfaces seen from
/// different distances.
pub fn voxel_downsample(points: &[Vector3<f64>], size: f64) -> Vec<Vector3<f64>> {
    if !(size > 0.0) {
        return points.to_vec();
    }
    let mut cells: BTreeMap<[i64; 3], (Vector3<f64>, usize)> = BTreeMap::new();
    for p in points {
        let key = [0, 1, 2].map(|i| (p[i] / size).floor() as i64);
        let cell = cells.entry(key).or_insert((Vector3::zeros(), 0));
        cell.0 += p;
        cell.1 += 1;
    }
    cells.into_values().map(|(sum, n)| sum / n as f64).collect()
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no frames to build from")]
    NoFrames,
    #[error("frame {frame}: {reason}")]
    BadFrame { frame: u32, reason: String },
}

#[derive(Debug)]
pub struct BuildOutput {
    pub graph: SceneGraph,
    /// Tracks dropped for lack of a box, a view, or a label.
    pub dropped_tracks: Vec<u32>,
    pub relation_failures: Vec<RelationFailure>,
}

pub fn build_graph(
    frames: &[FrameObservation],
    cfg: &PipelineConfig,
    labeler: &dyn Labeler,
    relator: &dyn RelationRanker,
) -> Result<BuildOutput, PipelineError> {
    cfg.fusion.validate().map_err(PipelineError::Config)?;
    cfg.view.validate().map_err(PipelineError::Config)?;
    if frames.is_empty() {
        return Err(PipelineError::NoFrames);
    }
    for f in frames {
        f.validate().map_err(|reason| PipelineError::BadFrame {
            frame: f.frame_index,
            reason,
        })?;
        if let Some(d) = f.detections.iter().find(|d| d.feature.len() != cfg.fusion.feature_dim) {
            return Err(PipelineError::BadFrame {
                frame: f.frame_index,
                reason: format!("feature length {} differs from {}", d.feature.len(), cfg.fusion.feature_dim),
            });
        }
    }
    let by_index: BTreeMap<u32, &FrameObservation> = frames.iter().map(|f| (f.frame_index, f)).collect();

    let mut session = FusionSession::new(cfg.fusion);
    for f in by_index.values() {
        session.ingest(f);
    }
    let tracks = session.finish();

    let mut graph = SceneGraph::empty(cfg.fusion.feature_dim);
    graph.frame_count = frames.len() as u32;
    let mut dropped = Vec::new();
    for mut track in tracks.tracks {
        let thinned = voxel_downsample(&track.world_points, cfg.voxel_size);
        let fit = if cfg.upright_boxes { fit_upright_obb(&thinned) } else { fit_obb(&thinned) };
        let Ok(obb) = fit else {
            dropped.push(track.id);
            continue;
        };
        let candidates: Vec<ViewCandidate> = track
            .observations
            .iter()
            .filter_map(|o| by_index.get(&o.frame_index))
            .map(|f| ViewCandidate {
                frame_index: f.frame_index,
                pose: f.pose_w_c,
                intrinsics: f.intrinsics,
                depth: Some(DepthMap {
                    width: f.intrinsics.width,
                    height: f.intrinsics.height,
                    data: &f.depth,
                }),
            })
            .collect();
        let points = subsample(&thinned, cfg.max_view_points);
        let Ok(choice) = select_best_view(&points, &candidates, &cfg.view, None) else {
            dropped.push(track.id);
            continue;
        };
        if label_best_view(&mut track, choice.frame_index, labeler).is_err() {
            dropped.push(track.id);
            continue;
        }
        let crop = track
            .observation(choice.frame_index)
            .map(|o| o.crop.clone())
            .unwrap_or_default();
        let id = track.id as NodeId;
        graph.nodes.insert(
            id,
            ObjectNode {
                id,
                label: track.label.clone().unwrap_or_default(),
                description: track.description.clone().unwrap_or_default(),
                feature: track.feature.clone(),
                obb,
                best_view: Some(BestView {
                    frame_index: choice.frame_index,
                    pose: choice.pose,
                    crop,
                }),
                confidence: track.confidence,
                node_category: "object".into(),
                point_count: track.world_points.len() as u64,
            },
        );
    }
    let mut graph = filter_background(&graph, &cfg.background_labels);
    graph.fit_floor_bounds(cfg.floor_margin);
    let pairs = candidate_pairs(&graph, &cfg.filter);
    let (edges, failures) = extract_relations(&pairs, &graph, relator, cfg.relation_parallelism);
    graph.edges = edges;
    graph.sort_edges();
    Ok(BuildOutput {
        graph,
        dropped_tracks: dropped,
        relation_failures: failures,
    })
}
