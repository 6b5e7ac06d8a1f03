//! Seeded box-world scenes with known ground truth, simulated RGB-D frames,
//! and brute-force reference computations used by the test suites.
//!
//! Rooms are centered on the origin with the floor at `z = 0`. Objects are
//! axis-aligned boxes either on the floor or resting on a low support
//! (table, cabinet). Placement rejects configurations that sit close to a
//! relation-rule boundary, so ground-truth relations are stable under the
//! small box-fitting errors of the reconstruction.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::canonical::to_canonical_bytes;
use crate::frames::{frame_stem, write_frame, Detection2D, FrameError, FrameObservation};
use crate::geometry::{centroid_distance, CameraIntrinsics, Obb, Pose};
use crate::model_clients::{cosine, make_crop_ref, EmbeddingVector, MockFixture, MockLabel};
use crate::rag_tasks::plan::{render_steps, Action, Step};
use crate::relations::{spatial_relation, RelationRules};
use crate::scene_model::{graph_to_value, with_sections, Confidence, DistanceLevel, NodeId, ObjectNode, Rect2, RelationEdge, SceneGraph};
use crate::vector_store::{SearchHit, VectorDb};

/// File names written next to the frames of a synthetic scene.
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const MOCK_FIXTURE_FILE: &str = "mock_fixture.json";

/// Distance kept between a pair's geometry and any rule threshold (m).
const RULE_MARGIN: f64 = 0.06;
/// Gap between floor footprints (m).
const FLOOR_GAP: f64 = 0.15;
/// Objects stay inside this fraction of the half room extent.
const PLACEMENT_FRACTION: f64 = 0.6;
const MAX_ATTEMPTS: usize = 400;
const MAX_RESTARTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    /// Floor only, can carry small objects.
    Support,
    /// Floor only.
    Floor,
    /// Floor or on a support.
    Small,
}

const CATALOG: &[(&str, [f64; 3], Kind)] = &[
    ("table", [1.0, 0.6, 0.6], Kind::Support),
    ("cabinet", [0.8, 0.45, 0.7], Kind::Support),
    ("shelf", [0.9, 0.35, 1.2], Kind::Floor),
    ("chair", [0.5, 0.5, 0.9], Kind::Floor),
    ("sofa", [1.6, 0.8, 0.8], Kind::Floor),
    ("plant", [0.4, 0.4, 0.8], Kind::Floor),
    ("trash bin", [0.35, 0.35, 0.5], Kind::Floor),
    ("box", [0.3, 0.25, 0.2], Kind::Small),
    ("book", [0.25, 0.2, 0.08], Kind::Small),
    ("mug", [0.15, 0.15, 0.15], Kind::Small),
    ("lamp", [0.25, 0.25, 0.5], Kind::Small),
];

const PALETTE: &[(&str, [u8; 3])] = &[
    ("red", [200, 40, 40]),
    ("blue", [40, 70, 200]),
    ("green", [40, 160, 60]),
    ("yellow", [230, 210, 40]),
    ("black", [25, 25, 25]),
    ("white", [245, 245, 245]),
    ("orange", [240, 140, 30]),
    ("purple", [130, 50, 170]),
    ("brown", [120, 80, 40]),
    ("gray", [128, 128, 128]),
    ("pink", [240, 150, 190]),
    ("silver", [190, 190, 200]),
    ("gold", [210, 170, 50]),
    ("beige", [225, 210, 170]),
    ("teal", [30, 140, 140]),
    ("navy", [20, 30, 100]),
];

fn catalog_entry(label: &str) -> ([f64; 3], Kind) {
    CATALOG
        .iter()
        .find(|(l, _, _)| *l == label)
        .map(|&(_, e, k)| (e, k))
        .unwrap_or(([0.4, 0.4, 0.4], Kind::Floor))
}

pub fn default_vocabulary() -> Vec<String> {
    CATALOG.iter().map(|(l, _, _)| l.to_string()).collect()
}

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("could not place {wanted} objects after bounded retries (placed {placed})")]
    PlacementOverflow { wanted: usize, placed: usize },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png encoding failed: {0}")]
    Image(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub object_count: usize,
    pub label_vocabulary: Vec<String>,
    pub room_extent: [f64; 3],
    pub relation_rules: RelationRules,
    /// Chance that a small object goes on a support.
    pub stack_probability: f64,
    pub feature_dim: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            object_count: 8,
            label_vocabulary: default_vocabulary(),
            room_extent: [6.0, 6.0, 3.0],
            relation_rules: RelationRules::default(),
            stack_probability: 0.6,
            feature_dim: 32,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: &str| Err(SyntheticError::InvalidSpec(m.into()));
        if self.object_count == 0 {
            return bad("object_count must be at least 1");
        }
        if !self.room_extent.iter().all(|&e| e > 0.0 && e.is_finite()) {
            return bad("room_extent must be positive");
        }
        if self.label_vocabulary.is_empty() {
            return bad("label_vocabulary is empty");
        }
        if self.object_count > self.feature_dim {
            return bad("object_count exceeds feature_dim");
        }
        if self.object_count > PALETTE.len() {
            return bad("object_count exceeds the color palette");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthScene {
    pub spec: SceneSpec,
    pub graph: SceneGraph,
    /// Box used for depth rendering, by node id.
    pub surfaces: BTreeMap<NodeId, Obb>,
    pub colors: BTreeMap<NodeId, [u8; 3]>,
}

struct Placed {
    label: String,
    obb: Obb,
    kind: Kind,
    /// Index of the support this object rests on.
    support: Option<usize>,
}

fn footprints_clear(a: &Obb, b: &Obb, gap: f64) -> bool {
    let (alo, ahi) = a.aabb();
    let (blo, bhi) = b.aabb();
    alo.x > bhi.x + gap || blo.x > ahi.x + gap || alo.y > bhi.y + gap || blo.y > ahi.y + gap
}

/// True when the pair sits clear of every rule threshold.
fn unambiguous(a: &Obb, b: &Obb, stacked: bool, rules: &RelationRules) -> bool {
    let d = centroid_distance(a, b);
    if (d - rules.near_distance).abs() < RULE_MARGIN {
        return false;
    }
    if stacked {
        // stacked pairs must pass the distance filter
        return d < rules.near_distance - RULE_MARGIN;
    }
    if d < rules.near_distance {
        let off = b.center - a.center;
        if (off.x.abs() - off.y.abs()).abs() < RULE_MARGIN {
            return false;
        }
    }
    true
}

fn jittered(base: [f64; 3], rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        base[0] * rng.random_range(0.9..1.1),
        base[1] * rng.random_range(0.9..1.1),
        base[2] * rng.random_range(0.9..1.1),
    )
}

fn try_place(
    label: &str,
    placed: &[Placed],
    spec: &SceneSpec,
    rng: &mut ChaCha8Rng,
) -> Option<Placed> {
    let (base, kind) = catalog_entry(label);
    let ext = jittered(base, rng);
    let half_room = Vector2::new(spec.room_extent[0], spec.room_extent[1]) * 0.5 * PLACEMENT_FRACTION;
    let supports: Vec<usize> = placed
        .iter()
        .enumerate()
        .filter(|(_, p)| p.kind == Kind::Support)
        .map(|(i, _)| i)
        .collect();
    let stack = kind == Kind::Small && !supports.is_empty() && rng.random_bool(spec.stack_probability);
    let (center, support) = if stack {
        let s = supports[rng.random_range(0..supports.len())];
        let sb = &placed[s].obb;
        let (lo, hi) = sb.aabb();
        let slack = Vector2::new(hi.x - lo.x - ext.x, hi.y - lo.y - ext.y) * 0.5 - Vector2::repeat(0.02);
        if slack.x <= 0.0 || slack.y <= 0.0 {
            return None;
        }
        let c = Vector3::new(
            sb.center.x + rng.random_range(-slack.x..slack.x),
            sb.center.y + rng.random_range(-slack.y..slack.y),
            hi.z + ext.z * 0.5,
        );
        (c, Some(s))
    } else {
        let lim = half_room - ext.xy() * 0.5;
        if lim.x <= 0.0 || lim.y <= 0.0 {
            return None;
        }
        let c = Vector3::new(
            rng.random_range(-lim.x..lim.x),
            rng.random_range(-lim.y..lim.y),
            ext.z * 0.5,
        );
        (c, None)
    };
    let obb = Obb::axis_aligned(center, ext).ok()?;
    for (i, p) in placed.iter().enumerate() {
        let pair_stacked = support == Some(i);
        let same_floor = support.is_none() && p.support.is_none();
        if same_floor && !footprints_clear(&obb, &p.obb, FLOOR_GAP) {
            return None;
        }
        if support.is_some() && support == p.support && !footprints_clear(&obb, &p.obb, 0.05) {
            return None;
        }
        if support.is_none() && p.support.is_some() && !footprints_clear(&obb, &p.obb, FLOOR_GAP) {
            return None;
        }
        if !unambiguous(&obb, &p.obb, pair_stacked, &spec.relation_rules) {
            return None;
        }
    }
    Some(Placed {
        label: label.to_string(),
        obb,
        kind,
        support,
    })
}

/// Ground-truth edges: every pair the geometric rules relate, subject chosen
/// by the rule, sorted by `(subject, object)`.
pub fn ground_truth_edges(nodes: &BTreeMap<NodeId, ObjectNode>, rules: &RelationRules) -> Vec<RelationEdge> {
    let list: Vec<&ObjectNode> = nodes.values().collect();
    let mut edges = Vec::new();
    for i in 0..list.len() {
        for j in (i + 1)..list.len() {
            let (a, b) = (list[i], list[j]);
            if let Some(rel) = spatial_relation(&a.obb, &b.obb, rules) {
                let (s, o) = if rel.reversed { (b, a) } else { (a, b) };
                let d = centroid_distance(&a.obb, &b.obb);
                edges.push(RelationEdge {
                    subject_id: s.id,
                    object_id: o.id,
                    predicates: rel.predicates,
                    distance: d,
                    level: DistanceLevel::from_distance(d),
                });
            }
        }
    }
    edges.sort_by_key(|e| (e.subject_id, e.object_id));
    edges
}

/// Seeded layout. Labels are drawn from the vocabulary and placed one by
/// one; when an object does not fit, the whole draw restarts (bounded).
pub fn generate_scene(spec: &SceneSpec) -> Result<GroundTruthScene, SyntheticError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut most = 0;
    let mut layout = None;
    for _ in 0..MAX_RESTARTS {
        let mut labels: Vec<String> = (0..spec.object_count)
            .map(|_| spec.label_vocabulary[rng.random_range(0..spec.label_vocabulary.len())].clone())
            .collect();
        // supports first so small objects can land on them
        labels.sort_by_key(|l| match catalog_entry(l).1 {
            Kind::Support => 0,
            Kind::Floor => 1,
            Kind::Small => 2,
        });
        let mut placed: Vec<Placed> = Vec::new();
        for label in &labels {
            match (0..MAX_ATTEMPTS).find_map(|_| try_place(label, &placed, spec, &mut rng)) {
                Some(p) => placed.push(p),
                None => break,
            }
        }
        most = most.max(placed.len());
        if placed.len() == spec.object_count {
            layout = Some(placed);
            break;
        }
    }
    let placed = layout.ok_or(SyntheticError::PlacementOverflow {
        wanted: spec.object_count,
        placed: most,
    })?;

    let mut palette: Vec<usize> = (0..PALETTE.len()).collect();
    palette.shuffle(&mut rng);
    let mut graph = SceneGraph::empty(spec.feature_dim);
    let mut surfaces = BTreeMap::new();
    let mut colors = BTreeMap::new();
    for (i, p) in placed.iter().enumerate() {
        let id = i as NodeId + 1;
        let (color_name, rgb) = PALETTE[palette[i]];
        let mut feature = vec![0.0; spec.feature_dim];
        feature[i] = 1.0;
        graph.nodes.insert(
            id,
            ObjectNode {
                id,
                label: p.label.clone(),
                description: crate::text::with_article(&format!("{color_name} {}", p.label)),
                feature,
                obb: p.obb,
                best_view: None,
                confidence: Confidence { alpha: 1.0, beta: 1.0 },
                node_category: "object".into(),
                point_count: 0,
            },
        );
        surfaces.insert(id, p.obb);
        colors.insert(id, rgb);
    }
    graph.edges = ground_truth_edges(&graph.nodes, &spec.relation_rules);
    let (hx, hy) = (spec.room_extent[0] * 0.5, spec.room_extent[1] * 0.5);
    graph.floor_bounds = Rect2::new(Vector2::new(-hx, -hy), Vector2::new(hx, hy));
    Ok(GroundTruthScene {
        spec: spec.clone(),
        graph,
        surfaces,
        colors,
    })
}

/// 160 × 120 pinhole camera used for synthetic frames.
pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(140.0, 140.0, 80.0, 60.0, 160, 120).expect("valid intrinsics")
}

/// `n` poses on a circle of radius `0.48 · min(room x, y)` at 1.6 m height,
/// all looking at `(0, 0, 0.3)`.
pub fn circle_trajectory(room_extent: [f64; 3], n: usize) -> Vec<Pose> {
    let r = 0.48 * room_extent[0].min(room_extent[1]);
    let target = Vector3::new(0.0, 0.0, 0.3);
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            let eye = Vector3::new(r * a.cos(), r * a.sin(), 1.6);
            Pose::look_at(eye, target, Vector3::z()).expect("eye differs from target")
        })
        .collect()
}

/// Room scan in two rings of `n / 2` poses each (the outer ring takes the odd
/// one): the outer ring is [`circle_trajectory`]; the inner ring sits at
/// radius `0.15 · min(room x, y)` looking outward and down at points
/// `0.4 · min` from the center, 0.1 m above the floor. The inner ring sees
/// floor objects close to the walls that the outer ring looks over.
pub fn scan_trajectory(room_extent: [f64; 3], n: usize) -> Vec<Pose> {
    let inner_n = n / 2;
    let mut poses = circle_trajectory(room_extent, n - inner_n);
    let m = room_extent[0].min(room_extent[1]);
    for i in 0..inner_n {
        let a = std::f64::consts::TAU * (i as f64 + 0.5) / inner_n as f64;
        let (c, s) = (a.cos(), a.sin());
        let eye = Vector3::new(0.15 * m * c, 0.15 * m * s, 1.4);
        let target = Vector3::new(0.4 * m * c, 0.4 * m * s, 0.1);
        poses.push(Pose::look_at(eye, target, Vector3::z()).expect("eye differs from target"));
    }
    poses
}

/// Nearest positive ray parameter at which `origin + t·dir` enters the box.
pub fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, b: &Obb) -> Option<f64> {
    let o = b.to_local(origin);
    let d = b.rotation.transpose() * dir;
    let h = b.half_extents();
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k].abs() > h[k] {
                return None;
            }
            continue;
        }
        let a = (-h[k] - o[k]) / d[k];
        let c = (h[k] - o[k]) / d[k];
        t0 = t0.max(a.min(c));
        t1 = t1.min(a.max(c));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub seed: u64,
    /// Standard deviation of the Gaussian added to every feature entry.
    pub feature_noise: f64,
    pub min_mask_pixels: usize,
    pub mu_min: f64,
    pub mu_max: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            feature_noise: 0.0,
            min_mask_pixels: 12,
            mu_min: 0.6,
            mu_max: 0.99,
        }
    }
}

/// Per-pixel object id (0 = background) with the matching z-depth image.
pub fn render_ids(scene: &GroundTruthScene, pose: &Pose, intr: &CameraIntrinsics) -> (Vec<NodeId>, Vec<f32>) {
    let (w, h) = (intr.width as usize, intr.height as usize);
    let origin = pose.camera_center();
    let rt = pose.rotation.transpose();
    let mut ids = vec![0; w * h];
    let mut depth = vec![0f32; w * h];
    for v in 0..h {
        for u in 0..w {
            // camera-frame direction with unit z, so the ray parameter is z-depth
            let dc = Vector3::new((u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0);
            let dw = rt * dc;
            let mut best: Option<(f64, NodeId)> = None;
            for (&id, b) in &scene.surfaces {
                if let Some(t) = ray_box(&origin, &dw, b) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, id));
                    }
                }
            }
            if let Some((t, id)) = best {
                ids[v * w + u] = id;
                depth[v * w + u] = t as f32;
            }
        }
    }
    (ids, depth)
}

fn color_name(i: usize) -> String {
    format!("{}.color.png", frame_stem(i as u32))
}

pub fn render_observations(
    scene: &GroundTruthScene,
    trajectory: &[Pose],
    intr: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Vec<FrameObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ scene.spec.seed.rotate_left(17));
    let noise = Normal::new(0.0, cfg.feature_noise.max(0.0)).expect("finite sigma");
    trajectory
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let (ids, depth) = render_ids(scene, pose, intr);
            let mut masks: BTreeMap<NodeId, Vec<(u32, u32)>> = BTreeMap::new();
            for (k, &id) in ids.iter().enumerate() {
                if id != 0 {
                    let (u, v) = ((k % intr.width as usize) as u32, (k / intr.width as usize) as u32);
                    masks.entry(id).or_default().push((u, v));
                }
            }
            let detections = masks
                .into_iter()
                .filter(|(_, m)| m.len() >= cfg.min_mask_pixels)
                .map(|(id, mask)| {
                    let node = &scene.graph.nodes[&id];
                    let feature = node
                        .feature
                        .iter()
                        .map(|f| if cfg.feature_noise > 0.0 { f + noise.sample(&mut rng) } else { *f })
                        .collect();
                    Detection2D {
                        mask,
                        score_mu: rng.random_range(cfg.mu_min..=cfg.mu_max),
                        feature,
                        proposed_label: Some(node.label.clone()),
                    }
                })
                .collect();
            FrameObservation {
                frame_index: i as u32,
                intrinsics: *intr,
                pose_w_c: *pose,
                depth,
                detections,
                color: Some(color_name(i)),
            }
        })
        .collect()
}

fn color_image(scene: &GroundTruthScene, obs: &FrameObservation) -> image::RgbImage {
    let (ids, _) = render_ids(scene, &obs.pose_w_c, &obs.intrinsics);
    let w = obs.intrinsics.width;
    image::RgbImage::from_fn(w, obs.intrinsics.height, |u, v| {
        let id = ids[(v * w + u) as usize];
        image::Rgb(scene.colors.get(&id).copied().unwrap_or([210, 205, 195]))
    })
}

/// Labeler answers for every detection crop: the ground-truth label and
/// description of the object under the mask.
pub fn scene_fixture(scene: &GroundTruthScene, frames: &[FrameObservation]) -> MockFixture {
    let mut fixture = MockFixture::default();
    for obs in frames {
        let (ids, _) = render_ids(scene, &obs.pose_w_c, &obs.intrinsics);
        let image = obs.color.clone().unwrap_or_else(|| color_name(obs.frame_index as usize));
        for det in &obs.detections {
            let (u, v) = det.mask[0];
            let id = ids[(v * obs.intrinsics.width + u) as usize];
            let node = &scene.graph.nodes[&id];
            fixture.labels.insert(
                make_crop_ref(&image, det.bbox()),
                MockLabel {
                    label: node.label.clone(),
                    description: node.description.clone(),
                },
            );
        }
    }
    fixture
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanItem {
    pub instruction: String,
    pub reference_steps: String,
}

fn plural(label: &str) -> String {
    match label.rsplit_once(' ') {
        Some((head, last)) => format!("{head} {}", plural(last)),
        None if label.ends_with('x') || label.ends_with("ch") || label.ends_with("sh") => format!("{label}es"),
        None if label.ends_with("lf") => format!("{}ves", &label[..label.len() - 1]),
        None => format!("{label}s"),
    }
}

/// Count questions for every label, then "What is the X on?" for every
/// stacked object whose label is unique in the scene.
pub fn generate_qa(scene: &GroundTruthScene) -> Vec<QaItem> {
    let g = &scene.graph;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for n in g.nodes.values() {
        *counts.entry(n.label.as_str()).or_default() += 1;
    }
    let mut out: Vec<QaItem> = counts
        .iter()
        .map(|(l, c)| QaItem {
            question: format!("How many {} are there in the room?", plural(l)),
            answer: c.to_string(),
        })
        .collect();
    for e in &g.edges {
        let (s, o) = (&g.nodes[&e.subject_id], &g.nodes[&e.object_id]);
        if e.predicate() == "on" && counts[s.label.as_str()] == 1 {
            out.push(QaItem {
                question: format!("What is the {} on?", s.label),
                answer: o.label.clone(),
            });
        }
    }
    out
}

/// "Put the X on the Y" for stacked objects whose label is unique, with
/// the matching reference plan.
pub fn generate_plans(scene: &GroundTruthScene) -> Vec<PlanItem> {
    let g = &scene.graph;
    let unique = |l: &str| g.nodes.values().filter(|n| n.label == l).count() == 1;
    g.edges
        .iter()
        .filter(|e| e.predicate() == "on")
        .filter_map(|e| {
            let (s, o) = (&g.nodes[&e.subject_id], &g.nodes[&e.object_id]);
            (unique(&s.label) && unique(&o.label)).then(|| PlanItem {
                instruction: format!("Put the {} on the {}", s.label, o.label),
                reference_steps: render_steps(&[
                    Step::new(Action::Navigate, &s.label),
                    Step::new(Action::Grasp, &s.label),
                    Step::new(Action::Navigate, &o.label),
                    Step::new(Action::Place, &s.label),
                ]),
            })
        })
        .collect()
}

pub fn ground_truth_document(scene: &GroundTruthScene) -> Value {
    let mut sections = Map::new();
    sections.insert("qa".into(), serde_json::to_value(generate_qa(scene)).expect("serializable"));
    sections.insert("plans".into(), serde_json::to_value(generate_plans(scene)).expect("serializable"));
    sections.insert(
        "scene_spec".into(),
        json!({"seed": scene.spec.seed, "object_count": scene.spec.object_count}),
    );
    with_sections(graph_to_value(&scene.graph), sections)
}

/// Writes frames, color images, the ground-truth graph and the scene's mock
/// labeler fixture into `dir`.
pub fn write_scene_frames(
    dir: &Path,
    scene: &GroundTruthScene,
    frames: &[FrameObservation],
) -> Result<(), SyntheticError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SyntheticError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for obs in frames {
        write_frame(dir, obs)?;
        let path = dir.join(obs.color.clone().unwrap_or_else(|| color_name(obs.frame_index as usize)));
        color_image(scene, obs)
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| SyntheticError::Image(e.to_string()))?;
    }
    let gt = dir.join(GROUND_TRUTH_FILE);
    std::fs::write(&gt, to_canonical_bytes(&ground_truth_document(scene))).map_err(io(&gt))?;
    let fx = dir.join(MOCK_FIXTURE_FILE);
    let value = serde_json::to_value(scene_fixture(scene, frames)).expect("serializable");
    std::fs::write(&fx, to_canonical_bytes(&value)).map_err(io(&fx))?;
    Ok(())
}

/// Grid estimate of the IoU of two boxes over their joint bounding box,
/// `n³` cell centers. Error shrinks as O(1/n).
pub fn oracle_iou(a: &Obb, b: &Obb, n: usize) -> f64 {
    let (alo, ahi) = a.aabb();
    let (blo, bhi) = b.aabb();
    let lo = alo.inf(&blo);
    let hi = ahi.sup(&bhi);
    let step = (hi - lo) / n as f64;
    let (mut ia, mut ib, mut both) = (0u64, 0u64, 0u64);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let p = lo + Vector3::new(
                    (i as f64 + 0.5) * step.x,
                    (j as f64 + 0.5) * step.y,
                    (k as f64 + 0.5) * step.z,
                );
                let (in_a, in_b) = (a.contains(&p, 0.0), b.contains(&p, 0.0));
                ia += in_a as u64;
                ib += in_b as u64;
                both += (in_a && in_b) as u64;
            }
        }
    }
    let union = ia + ib - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

/// Reference top-k: score every record, stable sort by descending score.
pub fn oracle_topk(db: &VectorDb, query: &EmbeddingVector, k: usize) -> Vec<SearchHit> {
    let mut all: Vec<SearchHit> = db
        .records
        .iter()
        .map(|r| SearchHit {
            record_id: r.record_id,
            score: cosine(&r.embedding.values, &query.values),
        })
        .collect();
    all.sort_by_key(|h| h.record_id);
    all.sort_by(|a, b| b.score.total_cmp(&a.score));
    all.truncate(k);
    all
}
