//! Multi-frame fusion of 2D detections into persistent 3D object tracks.
//!
//! Each detection is lifted to world points through its depth pixels and
//! associated greedily with the existing track of highest feature cosine
//! (at least `assoc_cos_min`, ties to the lower id, one detection per track
//! per frame); otherwise it starts a new track. Every `merge_period` frames
//! the track features are Mahalanobis-whitened and tracks whose gated cosine
//! reaches `s_merge` are merged, transitively.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{Detection2D, FrameObservation};
use crate::geometry::{back_project, camera_to_world, fit_obb, Obb};
use crate::model_clients::make_crop_ref;
use crate::scene_model::Confidence;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("every mask pixel of the detection has invalid depth")]
    EmptyAfterDepthFilter,
    #[error("whitening needs at least 2 feature vectors, got {0}")]
    TooFewSamples(usize),
    #[error("both feature vectors are zero")]
    BothZeroVectors,
    #[error("feature vectors differ in length")]
    DimensionMismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub tau0: f64,
    pub lambda_entropy: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Frames between merge passes.
    pub merge_period: u32,
    /// Gate on `‖a − b‖ / (‖a‖ + ‖b‖)`.
    pub tau_merge: f64,
    /// Gated cosine at or above which two tracks merge.
    pub s_merge: f64,
    pub feature_dim: usize,
    pub assoc_cos_min: f64,
    pub epsilon_mu: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            tau0: 8.0,
            lambda_entropy: 2.0,
            tau_min: 1.0,
            tau_max: 50.0,
            merge_period: 10,
            tau_merge: 0.2,
            s_merge: 0.8,
            feature_dim: 32,
            assoc_cos_min: 0.75,
            epsilon_mu: 1e-3,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau_max) {
            return Err("need 0 < tau_min <= tau_max".into());
        }
        if self.merge_period < 1 {
            return Err("merge_period must be at least 1".into());
        }
        if !(self.tau_merge > 0.0 && self.tau_merge < 1.0) {
            return Err("tau_merge must lie in (0, 1)".into());
        }
        if !(self.s_merge > 0.0 && self.s_merge <= 1.0) {
            return Err("s_merge must lie in (0, 1]".into());
        }
        if !(self.epsilon_mu > 0.0 && self.epsilon_mu < 0.5) {
            return Err("epsilon_mu must lie in (0, 0.5)".into());
        }
        if self.feature_dim == 0 {
            return Err("feature_dim must be positive".into());
        }
        Ok(())
    }
}

/// Binary entropy in nats.
fn entropy(mu: f64) -> f64 {
    -(mu * mu.ln() + (1.0 - mu) * (1.0 - mu).ln())
}

/// Beta parameters `(μτ, (1 − μ)τ)` with `τ = clamp(τ₀ + λ H(μ), τ_min, τ_max)`
/// and μ clamped to `[ε, 1 − ε]`.
pub fn confidence_params(mu: f64, cfg: &FusionConfig) -> Confidence {
    let mu = mu.clamp(cfg.epsilon_mu, 1.0 - cfg.epsilon_mu);
    let tau = (cfg.tau0 + cfg.lambda_entropy * entropy(mu)).min(cfg.tau_max).max(cfg.tau_min);
    Confidence {
        alpha: mu * tau,
        beta: (1.0 - mu) * tau,
    }
}

/// World points of the detection's valid-depth pixels, in mask order.
pub fn lift_detection(obs: &FrameObservation, det: &Detection2D) -> Result<Vec<Vector3<f64>>, FusionError> {
    let points: Vec<Vector3<f64>> = det
        .mask
        .iter()
        .filter_map(|&(u, v)| {
            let d = obs.depth_at(u, v);
            back_project((u as f64, v as f64), d, &obs.intrinsics)
                .ok()
                .map(|pc| camera_to_world(&pc, &obs.pose_w_c))
        })
        .collect();
    if points.is_empty() {
        Err(FusionError::EmptyAfterDepthFilter)
    } else {
        Ok(points)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackObservation {
    pub frame_index: u32,
    /// Mask pixel count.
    pub pixel_area: usize,
    pub crop: String,
    pub proposed_label: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTrack {
    pub id: u32,
    pub world_points: Vec<Vector3<f64>>,
    /// Running mean of associated detection features.
    pub feature: Vec<f64>,
    /// Number of features averaged into `feature`.
    pub feature_count: usize,
    pub confidence: Confidence,
    pub max_mu: f64,
    pub observations: Vec<TrackObservation>,
    pub obb: Option<Obb>,
    pub label: Option<String>,
    pub description: Option<String>,
}

impl ObjectTrack {
    pub fn refit_obb(&mut self) {
        self.obb = fit_obb(&self.world_points).ok();
    }

    pub fn observation(&self, frame_index: u32) -> Option<&TrackObservation> {
        self.observations.iter().find(|o| o.frame_index == frame_index)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackSet {
    /// Sorted by id.
    pub tracks: Vec<ObjectTrack>,
    pub next_id: u32,
    pub frames_ingested: u32,
}

impl TrackSet {
    pub fn total_points(&self) -> usize {
        self.tracks.iter().map(|t| t.world_points.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Association {
    Appended { detection: usize, track: u32, cosine: f64 },
    Created { detection: usize, track: u32 },
    Skipped { detection: usize, reason: FusionError },
}

fn raw_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Crop reference for a detection: the frame's color image plus mask box.
pub fn detection_crop(obs: &FrameObservation, det: &Detection2D) -> String {
    let image = obs
        .color
        .clone()
        .unwrap_or_else(|| format!("{}.color.png", crate::frames::frame_stem(obs.frame_index)));
    make_crop_ref(&image, det.bbox())
}

/// Associates every detection of `obs` with a track or starts a new one.
/// Does not run the periodic merge; see [`FusionSession`].
pub fn ingest_frame(set: &mut TrackSet, obs: &FrameObservation, cfg: &FusionConfig) -> Vec<Association> {
    let mut log = Vec::with_capacity(obs.detections.len());
    let mut used: Vec<u32> = Vec::new();
    for (i, det) in obs.detections.iter().enumerate() {
        let points = match lift_detection(obs, det) {
            Ok(p) => p,
            Err(reason) => {
                log::debug!("frame {} detection {i} skipped: {reason}", obs.frame_index);
                log.push(Association::Skipped { detection: i, reason });
                continue;
            }
        };
        let mut best: Option<(usize, f64)> = None;
        for (k, t) in set.tracks.iter().enumerate() {
            if used.contains(&t.id) {
                continue;
            }
            let c = raw_cosine(&t.feature, &det.feature);
            if c >= cfg.assoc_cos_min && best.is_none_or(|(_, bc)| c > bc) {
                best = Some((k, c));
            }
        }
        let record = TrackObservation {
            frame_index: obs.frame_index,
            pixel_area: det.mask.len(),
            crop: detection_crop(obs, det),
            proposed_label: det.proposed_label.clone(),
        };
        match best {
            Some((k, cosine)) => {
                let t = &mut set.tracks[k];
                let n = t.feature_count as f64;
                for (f, x) in t.feature.iter_mut().zip(&det.feature) {
                    *f = (*f * n + x) / (n + 1.0);
                }
                t.feature_count += 1;
                t.world_points.extend(points);
                t.max_mu = t.max_mu.max(det.score_mu);
                t.confidence = confidence_params(t.max_mu, cfg);
                t.observations.push(record);
                t.obb = None;
                used.push(t.id);
                log.push(Association::Appended {
                    detection: i,
                    track: t.id,
                    cosine,
                });
            }
            None => {
                let id = set.next_id;
                set.next_id += 1;
                set.tracks.push(ObjectTrack {
                    id,
                    world_points: points,
                    feature: det.feature.clone(),
                    feature_count: 1,
                    confidence: confidence_params(det.score_mu, cfg),
                    max_mu: det.score_mu,
                    observations: vec![record],
                    obb: None,
                    label: None,
                    description: None,
                });
                used.push(id);
                log.push(Association::Created { detection: i, track: id });
            }
        }
    }
    set.frames_ingested += 1;
    log
}

#[derive(Clone, Debug, PartialEq)]
pub struct Whitened {
    pub vectors: Vec<DVector<f64>>,
    pub mean: DVector<f64>,
    /// Regularized sample covariance.
    pub covariance: DMatrix<f64>,
}

pub const WHITEN_EPSILON: f64 = 1e-6;

/// `Σ^{-1/2}(f − μ)` with `Σ` the sample covariance (n − 1 denominator) plus
/// `εI`.
pub fn whiten_features(features: &[Vec<f64>]) -> Result<Whitened, FusionError> {
    let n = features.len();
    if n < 2 {
        return Err(FusionError::TooFewSamples(n));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(FusionError::DimensionMismatch);
    }
    let mut mean = DVector::zeros(d);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n as f64;
    let centered: Vec<DVector<f64>> = features.iter().map(|f| DVector::from_column_slice(f) - &mean).collect();
    let mut cov = DMatrix::identity(d, d) * WHITEN_EPSILON;
    for c in &centered {
        cov += c * c.transpose() / (n as f64 - 1.0);
    }
    let eig = cov.clone().symmetric_eigen();
    let inv_sqrt = DVector::from_iterator(d, eig.eigenvalues.iter().map(|&l| 1.0 / l.max(WHITEN_EPSILON).sqrt()));
    let w = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    Ok(Whitened {
        vectors: centered.iter().map(|c| &w * c).collect(),
        mean,
        covariance: cov,
    })
}

/// Gated cosine: the cosine of `a` and `b` when
/// `‖a − b‖ / (‖a‖ + ‖b‖) < τ_merge`, else 0.
pub fn merge_similarity(a: &[f64], b: &[f64], cfg: &FusionConfig) -> Result<f64, FusionError> {
    if a.len() != b.len() {
        return Err(FusionError::DimensionMismatch);
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        return Err(FusionError::BothZeroVectors);
    }
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    if diff / (na + nb) < cfg.tau_merge {
        Ok(raw_cosine(a, b))
    } else {
        Ok(0.0)
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Connected components of the graph whose edges are the pairs accepted by
/// `joined`, each sorted, listed by smallest member.
pub fn union_groups(n: usize, mut joined: impl FnMut(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if joined(i, j) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Pairwise merge decisions over the current tracks.
///
/// Two tracks whose whitened features are both zero (their raw features
/// coincide with the set mean) are compared on their raw features instead.
pub fn merge_pass_matrix(tracks: &[ObjectTrack], cfg: &FusionConfig) -> Vec<Vec<bool>> {
    let n = tracks.len();
    let mut pass = vec![vec![false; n]; n];
    if n < 2 {
        return pass;
    }
    let feats: Vec<Vec<f64>> = tracks.iter().map(|t| t.feature.clone()).collect();
    let Ok(w) = whiten_features(&feats) else {
        return pass;
    };
    for i in 0..n {
        for j in (i + 1)..n {
            let s = match merge_similarity(w.vectors[i].as_slice(), w.vectors[j].as_slice(), cfg) {
                Ok(s) => s,
                Err(FusionError::BothZeroVectors) => merge_similarity(&feats[i], &feats[j], cfg).unwrap_or(0.0),
                Err(_) => 0.0,
            };
            pass[i][j] = s >= cfg.s_merge;
            pass[j][i] = pass[i][j];
        }
    }
    pass
}

/// Merges every group of transitively similar tracks. A merged track keeps
/// the smallest id, the union of points and observations, the point-weighted
/// mean feature, and the summed Beta parameters.
pub fn merge_step(set: &TrackSet, cfg: &FusionConfig) -> TrackSet {
    let pass = merge_pass_matrix(&set.tracks, cfg);
    let groups = union_groups(set.tracks.len(), |i, j| pass[i][j]);
    let mut tracks = Vec::with_capacity(groups.len());
    for g in groups {
        if g.len() == 1 {
            let mut t = set.tracks[g[0]].clone();
            if t.obb.is_none() {
                t.refit_obb();
            }
            tracks.push(t);
            continue;
        }
        let members: Vec<&ObjectTrack> = g.iter().map(|&i| &set.tracks[i]).collect();
        let total: usize = members.iter().map(|t| t.world_points.len()).sum();
        let dim = members[0].feature.len();
        let mut feature = vec![0.0; dim];
        for t in &members {
            let w = t.world_points.len() as f64 / total as f64;
            for (f, x) in feature.iter_mut().zip(&t.feature) {
                *f += w * x;
            }
        }
        let mut observations: Vec<TrackObservation> =
            members.iter().flat_map(|t| t.observations.iter().cloned()).collect();
        observations.sort_by_key(|o| o.frame_index);
        let mut merged = ObjectTrack {
            id: members.iter().map(|t| t.id).min().unwrap(),
            world_points: members.iter().flat_map(|t| t.world_points.iter().copied()).collect(),
            feature,
            feature_count: members.iter().map(|t| t.feature_count).sum(),
            confidence: Confidence {
                alpha: members.iter().map(|t| t.confidence.alpha).sum(),
                beta: members.iter().map(|t| t.confidence.beta).sum(),
            },
            max_mu: members.iter().map(|t| t.max_mu).fold(0.0, f64::max),
            observations,
            obb: None,
            label: members.iter().find_map(|t| t.label.clone()),
            description: members.iter().find_map(|t| t.description.clone()),
        };
        merged.refit_obb();
        log::debug!("merged tracks {:?} into {}", members.iter().map(|t| t.id).collect::<Vec<_>>(), merged.id);
        tracks.push(merged);
    }
    tracks.sort_by_key(|t| t.id);
    TrackSet {
        tracks,
        next_id: set.next_id,
        frames_ingested: set.frames_ingested,
    }
}

/// Single-writer fusion state machine: ingest frames in order, merging every
/// `merge_period` frames, then [`finish`](Self::finish).
#[derive(Clone, Debug)]
pub struct FusionSession {
    pub cfg: FusionConfig,
    pub set: TrackSet,
}

impl FusionSession {
    pub fn new(cfg: FusionConfig) -> Self {
        Self {
            cfg,
            set: TrackSet::default(),
        }
    }

    pub fn ingest(&mut self, obs: &FrameObservation) -> Vec<Association> {
        let log = ingest_frame(&mut self.set, obs, &self.cfg);
        if self.set.frames_ingested.is_multiple_of(self.cfg.merge_period) {
            self.set = merge_step(&self.set, &self.cfg);
        }
        log
    }

    /// Final merge and box fitting.
    pub fn finish(self) -> TrackSet {
        let mut set = merge_step(&self.set, &self.cfg);
        for t in &mut set.tracks {
            if t.obb.is_none() {
                t.refit_obb();
            }
        }
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose};

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 2.0, 2.0, 5, 5).unwrap()
    }

    fn frame(index: u32, pose: Pose, depth: f32, dets: Vec<Detection2D>) -> FrameObservation {
        FrameObservation {
            frame_index: index,
            intrinsics: intr(),
            pose_w_c: pose,
            depth: vec![depth; 25],
            detections: dets,
            color: None,
        }
    }

    fn det(mask: Vec<(u32, u32)>, feature: Vec<f64>) -> Detection2D {
        Detection2D {
            mask,
            score_mu: 0.9,
            feature,
            proposed_label: None,
        }
    }

    #[test]
    fn confidence_hand_case() {
        let c = confidence_params(0.5, &FusionConfig::default());
        let tau = 8.0 + 2.0 * std::f64::consts::LN_2;
        assert!((c.alpha - tau / 2.0).abs() < 1e-12);
        assert!((c.alpha - 4.6931).abs() < 1e-4);
        assert_eq!(c.alpha, c.beta);
        let c = confidence_params(1.0, &FusionConfig::default());
        assert!(c.alpha > 0.0 && c.beta > 0.0);
        assert!((c.alpha / (c.alpha + c.beta) - 0.999).abs() < 1e-12);
    }

    #[test]
    fn lift_principal_pixel_and_translation() {
        let f = frame(0, Pose::identity(), 2.0, vec![]);
        let d = det(vec![(2, 2)], vec![1.0]);
        assert_eq!(lift_detection(&f, &d).unwrap(), vec![Vector3::new(0.0, 0.0, 2.0)]);
        let t = Vector3::new(0.3, -1.0, 2.0);
        let f = frame(0, Pose::from_translation(t), 2.0, vec![]);
        assert_eq!(lift_detection(&f, &d).unwrap(), vec![Vector3::new(0.0, 0.0, 2.0) - t]);
    }

    #[test]
    fn lift_skips_invalid_depth() {
        let mut f = frame(0, Pose::identity(), 1.0, vec![]);
        f.depth[5 + 1] = 0.0;
        let d = det(vec![(0, 1), (1, 1), (3, 1)], vec![1.0]);
        let pts = lift_detection(&f, &d).unwrap();
        let expect = |u: f64| Vector3::new((u - 2.0) / 500.0, (1.0 - 2.0) / 500.0, 1.0);
        assert_eq!(pts, vec![expect(0.0), expect(3.0)]);
        f.depth.iter_mut().for_each(|d| *d = 0.0);
        assert_eq!(lift_detection(&f, &d), Err(FusionError::EmptyAfterDepthFilter));
    }

    #[test]
    fn association_by_feature() {
        let cfg = FusionConfig {
            assoc_cos_min: 0.5,
            ..FusionConfig::default()
        };
        let mut set = TrackSet::default();
        let f0 = frame(0, Pose::identity(), 1.0, vec![det(vec![(0, 0)], vec![1.0, 0.0])]);
        ingest_frame(&mut set, &f0, &cfg);
        assert_eq!(set.tracks.len(), 1);
        let f1 = frame(
            1,
            Pose::identity(),
            1.0,
            vec![det(vec![(1, 1)], vec![1.0, 0.0]), det(vec![(2, 2)], vec![0.0, 1.0])],
        );
        let log = ingest_frame(&mut set, &f1, &cfg);
        assert_eq!(set.tracks.len(), 2);
        assert!(matches!(log[0], Association::Appended { track: 0, .. }));
        assert!(matches!(log[1], Association::Created { track: 1, .. }));
        assert_eq!(set.tracks[0].world_points.len(), 2);
    }

    #[test]
    fn merge_similarity_hand_cases() {
        let cfg = FusionConfig::default();
        assert!((merge_similarity(&[1.0, 2.0], &[1.0, 2.0], &cfg).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(merge_similarity(&[1.0, 2.0], &[-1.0, -2.0], &cfg).unwrap(), 0.0);
        let s = merge_similarity(&[1.0, 0.0], &[0.9, 0.1], &cfg).unwrap();
        let expect = 0.9 / 0.82f64.sqrt();
        assert!((s - expect).abs() < 1e-12);
        assert!((s - 0.9939).abs() < 1e-4);
        assert_eq!(merge_similarity(&[0.0], &[0.0], &cfg), Err(FusionError::BothZeroVectors));
    }

    #[test]
    fn whitening_identity_input() {
        // mean zero, sample covariance I for these four vectors in 2D
        let s = (1.5f64).sqrt();
        let f = vec![vec![s, 0.0], vec![-s, 0.0], vec![0.0, s], vec![0.0, -s]];
        let w = whiten_features(&f).unwrap();
        for (a, b) in w.vectors.iter().zip(&f) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-5);
            }
        }
        assert_eq!(whiten_features(&f[..1]), Err(FusionError::TooFewSamples(1)));
    }

    #[test]
    fn union_groups_are_transitive() {
        let pairs = [(0, 1), (1, 2)];
        let g = union_groups(4, |i, j| pairs.contains(&(i, j)));
        assert_eq!(g, vec![vec![0, 1, 2], vec![3]]);
    }

    #[test]
    fn identical_tracks_merge() {
        let cfg = FusionConfig::default();
        let mut set = TrackSet::default();
        let f = frame(
            0,
            Pose::identity(),
            1.0,
            vec![det(vec![(0, 0), (1, 0)], vec![1.0, 0.0]), det(vec![(3, 3)], vec![1.0, 0.0])],
        );
        ingest_frame(&mut set, &f, &cfg);
        assert_eq!(set.tracks.len(), 2, "one detection per track per frame");
        let merged = merge_step(&set, &cfg);
        assert_eq!(merged.tracks.len(), 1);
        assert_eq!(merged.total_points(), 3);
        assert_eq!(merged.tracks[0].confidence.alpha, 2.0 * set.tracks[0].confidence.alpha);
    }
}
