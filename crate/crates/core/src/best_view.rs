//! Best-view selection: among the poses that observed an object, pick the one
//! maximizing `A · V^γ − λ · D`, where `A` is the projected convex-hull area,
//! `V` the visible-point fraction, and `D` the distance to a reference pose.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::ObjectTrack;
use crate::geometry::{convex_hull, polygon_area, project_to_pixel, CameraIntrinsics, Pose, Projection};
use crate::model_clients::{ClientError, LabelReply, LabelRequest, Labeler};

/// Depth slack for the occlusion test (m).
pub const OCCLUSION_TOLERANCE: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BestViewError {
    #[error("no candidate views")]
    NoCandidates,
    #[error("track has no observation for frame {0}")]
    MissingObservation(u32),
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePose {
    PreviousBest,
    FirstObservation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewScoreConfig {
    pub gamma: f64,
    /// px² per unit of pose distance
    pub lambda_pose: f64,
    pub reference: ReferencePose,
}

impl Default for ViewScoreConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            lambda_pose: 100.0,
            reference: ReferencePose::PreviousBest,
        }
    }
}

impl ViewScoreConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0) {
            return Err("gamma must be positive".into());
        }
        if !(self.lambda_pose >= 0.0) {
            return Err("lambda_pose must be non-negative".into());
        }
        Ok(())
    }
}

/// Row-major depth map borrowed from a frame.
#[derive(Clone, Copy, Debug)]
pub struct DepthMap<'a> {
    pub width: u32,
    pub height: u32,
    pub data: &'a [f32],
}

impl DepthMap<'_> {
    fn at(&self, u: f64, v: f64) -> f64 {
        let (x, y) = (u.round() as usize, v.round() as usize);
        self.data[y.min(self.height as usize - 1) * self.width as usize + x.min(self.width as usize - 1)] as f64
    }
}

#[derive(Clone, Debug)]
pub struct ViewCandidate<'a> {
    pub frame_index: u32,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub depth: Option<DepthMap<'a>>,
}

fn in_view(p: &Vector3<f64>, pose: &Pose, intr: &CameraIntrinsics) -> Option<(f64, f64, f64)> {
    match project_to_pixel(p, pose, intr) {
        Projection::Pixel { u, v, depth } if intr.contains(u, v) => Some((u, v, depth)),
        _ => None,
    }
}

/// Convex-hull area (px²) of the in-bounds, in-front projections; 0 with
/// fewer than three such points.
pub fn projected_area(points: &[Vector3<f64>], pose: &Pose, intr: &CameraIntrinsics) -> f64 {
    let px: Vec<Vector2<f64>> = points
        .iter()
        .filter_map(|p| in_view(p, pose, intr).map(|(u, v, _)| Vector2::new(u, v)))
        .collect();
    if px.len() < 3 {
        return 0.0;
    }
    polygon_area(&convex_hull(&px))
}

/// Fraction of points projecting in bounds and in front; with a depth map, a
/// point also needs its depth at most the map depth plus 2 cm (map depth 0
/// means nothing was measured there and does not occlude).
pub fn visibility(points: &[Vector3<f64>], pose: &Pose, intr: &CameraIntrinsics, depth: Option<&DepthMap>) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let visible = points
        .iter()
        .filter(|p| match in_view(p, pose, intr) {
            None => false,
            Some((u, v, z)) => match depth {
                None => true,
                Some(map) => {
                    let m = map.at(u, v);
                    m <= 0.0 || z <= m + OCCLUSION_TOLERANCE
                }
            },
        })
        .count();
    visible as f64 / points.len() as f64
}

/// `‖R_a − R_b‖_F + ‖t_a − t_b‖₂`
pub fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    (a.rotation - b.rotation).norm() + (a.translation - b.translation).norm()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewScore {
    pub area: f64,
    pub visibility: f64,
    pub pose_distance: f64,
    pub score: f64,
}

pub fn score_view(points: &[Vector3<f64>], c: &ViewCandidate, reference: &Pose, cfg: &ViewScoreConfig) -> ViewScore {
    let area = projected_area(points, &c.pose, &c.intrinsics);
    let vis = visibility(points, &c.pose, &c.intrinsics, c.depth.as_ref());
    let d = pose_distance(&c.pose, reference);
    ViewScore {
        area,
        visibility: vis,
        pose_distance: d,
        score: area * vis.powf(cfg.gamma) - cfg.lambda_pose * d,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewChoice {
    pub frame_index: u32,
    pub pose: Pose,
    pub score: ViewScore,
}

/// The highest-scoring candidate, ties to the lower frame index. The pose
/// distance is measured against `previous_best` under
/// [`ReferencePose::PreviousBest`] when given, otherwise against the
/// earliest candidate.
pub fn select_best_view(
    points: &[Vector3<f64>],
    candidates: &[ViewCandidate],
    cfg: &ViewScoreConfig,
    previous_best: Option<&Pose>,
) -> Result<ViewChoice, BestViewError> {
    let first = candidates
        .iter()
        .min_by_key(|c| c.frame_index)
        .ok_or(BestViewError::NoCandidates)?;
    let reference = match (cfg.reference, previous_best) {
        (ReferencePose::PreviousBest, Some(p)) => *p,
        _ => first.pose,
    };
    let mut order: Vec<&ViewCandidate> = candidates.iter().collect();
    order.sort_by_key(|c| c.frame_index);
    let mut best: Option<ViewChoice> = None;
    for c in order {
        let s = score_view(points, c, &reference, cfg);
        if best.as_ref().is_none_or(|b| s.score > b.score.score) {
            best = Some(ViewChoice {
                frame_index: c.frame_index,
                pose: c.pose,
                score: s,
            });
        }
    }
    best.ok_or(BestViewError::NoCandidates)
}

/// Every `stride`-th point so that at most `max_points` remain.
pub fn subsample(points: &[Vector3<f64>], max_points: usize) -> Vec<Vector3<f64>> {
    if points.len() <= max_points || max_points == 0 {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(max_points);
    points.iter().step_by(stride).copied().collect()
}

/// Asks the labeler about the crop seen in `frame_index` and stores the reply
/// on the track. On failure the track keeps no label.
pub fn label_best_view(
    track: &mut ObjectTrack,
    frame_index: u32,
    labeler: &dyn Labeler,
) -> Result<LabelReply, BestViewError> {
    let obs = track
        .observation(frame_index)
        .ok_or(BestViewError::MissingObservation(frame_index))?;
    let request = LabelRequest {
        crop: obs.crop.clone(),
        proposed_label: obs.proposed_label.clone(),
    };
    match labeler.label(&request) {
        Ok(reply) => {
            track.label = Some(reply.label.clone());
            track.description = Some(reply.description.clone());
            Ok(reply)
        }
        Err(e) => {
            log::warn!("labeling track {} failed: {e}", track.id);
            track.label = None;
            track.description = None;
            Err(e.into())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn square(z: f64) -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(-0.5, -0.5, z),
            Vector3::new(0.5, -0.5, z),
            Vector3::new(0.5, 0.5, z),
            Vector3::new(-0.5, 0.5, z),
        ]
    }

    #[test]
    fn area_of_unit_square_at_depth_two() {
        let a = projected_area(&square(2.0), &Pose::identity(), &k());
        assert!((a - 62500.0).abs() < 1e-6);
        let mut doubled = square(2.0);
        doubled.extend(square(2.0));
        assert!((projected_area(&doubled, &Pose::identity(), &k()) - a).abs() < 1e-9);
        assert_eq!(projected_area(&square(-2.0), &Pose::identity(), &k()), 0.0);
    }

    #[test]
    fn visibility_with_occluder() {
        let pts: Vec<Vector3<f64>> = (0..10).map(|i| Vector3::new(-0.45 + 0.1 * i as f64, 0.0, 2.0)).collect();
        assert_eq!(visibility(&pts, &Pose::identity(), &k(), None), 1.0);
        assert_eq!(visibility(&square(-1.0), &Pose::identity(), &k(), None), 0.0);
        // occluder at 1 m over the left half of the image
        let data: Vec<f32> = (0..640 * 480).map(|i| if i % 640 < 320 { 1.0 } else { 0.0 }).collect();
        let map = DepthMap {
            width: 640,
            height: 480,
            data: &data,
        };
        assert_eq!(visibility(&pts, &Pose::identity(), &k(), Some(&map)), 0.5);
    }

    #[test]
    fn pose_distance_hand_cases() {
        let rz = Pose::new(Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0), Vector3::zeros()).unwrap();
        assert!((pose_distance(&Pose::identity(), &rz) - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        let t = Pose::from_translation(Vector3::new(3.0, 4.0, 0.0));
        assert!((pose_distance(&Pose::identity(), &t) - 5.0).abs() < 1e-12);
        assert_eq!(pose_distance(&t, &t), 0.0);
    }

    #[test]
    fn closer_view_wins_without_pose_penalty() {
        let cfg = ViewScoreConfig {
            lambda_pose: 0.0,
            ..ViewScoreConfig::default()
        };
        let pts = square(0.0);
        let far = ViewCandidate {
            frame_index: 0,
            pose: Pose::from_translation(Vector3::new(0.0, 0.0, 4.0)),
            intrinsics: k(),
            depth: None,
        };
        let near = ViewCandidate {
            frame_index: 1,
            pose: Pose::from_translation(Vector3::new(0.0, 0.0, 2.0)),
            intrinsics: k(),
            depth: None,
        };
        let choice = select_best_view(&pts, &[far.clone(), near], &cfg, None).unwrap();
        assert_eq!(choice.frame_index, 1);
        assert_eq!(select_best_view(&pts, &[far], &cfg, None).unwrap().frame_index, 0);
        assert_eq!(select_best_view(&pts, &[], &cfg, None), Err(BestViewError::NoCandidates));
    }
}
