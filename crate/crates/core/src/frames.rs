//! Per-frame RGB-D observations and their directory layout.
//!
//! A frame directory holds, for each frame `i`:
//! * `frame_%06d.depth.bin`: little-endian f32, row-major, meters (0 = invalid)
//! * `frame_%06d.meta.json`: intrinsics, world-to-camera pose, detections
//! * `frame_%06d.color.png`: color image, opaque to fusion
//!
//! `meta.json` shape:
//! ```json
//! {
//!   "frame": 3,
//!   "intrinsics": {"fx": 140.0, "fy": 140.0, "cx": 80.0, "cy": 60.0, "width": 160, "height": 120},
//!   "pose": {"rotation": [[1,0,0],[0,1,0],[0,0,1]], "translation": [0,0,0]},
//!   "color": "frame_000003.color.png",
//!   "detections": [
//!     {"mask": {"runs": [[start, length], ...]}, "mu": 0.9, "feature": [...], "label": "chair"}
//!   ]
//! }
//! ```
//! Mask runs index pixels linearly as `v * width + u`. `pose` maps world
//! points into the camera frame.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::to_canonical_bytes;
use crate::geometry::{CameraIntrinsics, GeometryError, Pose};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed frame {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FrameError + '_ {
    move |source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection2D {
    /// Pixels `(u, v)` in row-major scan order.
    pub mask: Vec<(u32, u32)>,
    pub score_mu: f64,
    pub feature: Vec<f64>,
    pub proposed_label: Option<String>,
}

impl Detection2D {
    pub fn validate(&self, intr: &CameraIntrinsics) -> Result<(), String> {
        if self.mask.is_empty() {
            return Err("empty mask".into());
        }
        if !(0.0..=1.0).contains(&self.score_mu) {
            return Err(format!("mu {} outside [0, 1]", self.score_mu));
        }
        if let Some(&(u, v)) = self.mask.iter().find(|&&(u, v)| u >= intr.width || v >= intr.height) {
            return Err(format!("mask pixel ({u}, {v}) out of bounds"));
        }
        Ok(())
    }

    /// Inclusive-exclusive pixel box `[u0, v0, u1, v1]`.
    pub fn bbox(&self) -> [u32; 4] {
        let mut b = [u32::MAX, u32::MAX, 0, 0];
        for &(u, v) in &self.mask {
            b[0] = b[0].min(u);
            b[1] = b[1].min(v);
            b[2] = b[2].max(u + 1);
            b[3] = b[3].max(v + 1);
        }
        b
    }

    pub fn to_runs(&self, width: u32) -> Vec<[u64; 2]> {
        let mut idx: Vec<u64> = self.mask.iter().map(|&(u, v)| v as u64 * width as u64 + u as u64).collect();
        idx.sort_unstable();
        idx.dedup();
        let mut runs: Vec<[u64; 2]> = Vec::new();
        for i in idx {
            match runs.last_mut() {
                Some(r) if r[0] + r[1] == i => r[1] += 1,
                _ => runs.push([i, 1]),
            }
        }
        runs
    }

    pub fn mask_from_runs(runs: &[[u64; 2]], width: u32) -> Vec<(u32, u32)> {
        let mut mask: Vec<(u32, u32)> = runs
            .iter()
            .flat_map(|&[s, l]| (s..s + l).map(move |i| ((i % width as u64) as u32, (i / width as u64) as u32)))
            .collect();
        mask.sort_unstable_by_key(|&(u, v)| (v, u));
        mask.dedup();
        mask
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameObservation {
    pub frame_index: u32,
    pub intrinsics: CameraIntrinsics,
    /// World-to-camera transform.
    pub pose_w_c: Pose,
    /// Row-major meters, `height × width`; 0 marks invalid depth.
    pub depth: Vec<f32>,
    pub detections: Vec<Detection2D>,
    /// Color image file name relative to the frame directory.
    pub color: Option<String>,
}

impl FrameObservation {
    pub fn validate(&self) -> Result<(), String> {
        self.intrinsics.validate().map_err(|e| e.to_string())?;
        let n = self.intrinsics.width as usize * self.intrinsics.height as usize;
        if self.depth.len() != n {
            return Err(format!("depth has {} values, expected {n}", self.depth.len()));
        }
        for (i, d) in self.detections.iter().enumerate() {
            d.validate(&self.intrinsics).map_err(|e| format!("detection {i}: {e}"))?;
        }
        Ok(())
    }

    pub fn depth_at(&self, u: u32, v: u32) -> f64 {
        self.depth[v as usize * self.intrinsics.width as usize + u as usize] as f64
    }
}

pub fn frame_stem(index: u32) -> String {
    format!("frame_{index:06}")
}

#[derive(Serialize, Deserialize)]
struct PoseDoc {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct MaskDoc {
    runs: Vec<[u64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct DetectionDoc {
    mask: MaskDoc,
    mu: f64,
    feature: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct MetaDoc {
    frame: u32,
    intrinsics: CameraIntrinsics,
    pose: PoseDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    color: Option<String>,
    detections: Vec<DetectionDoc>,
}

pub fn write_frame(dir: &Path, obs: &FrameObservation) -> Result<(), FrameError> {
    let stem = frame_stem(obs.frame_index);
    let r = obs.pose_w_c.rotation;
    let t = obs.pose_w_c.translation;
    let meta = MetaDoc {
        frame: obs.frame_index,
        intrinsics: obs.intrinsics,
        pose: PoseDoc {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [t.x, t.y, t.z],
        },
        color: obs.color.clone(),
        detections: obs
            .detections
            .iter()
            .map(|d| DetectionDoc {
                mask: MaskDoc {
                    runs: d.to_runs(obs.intrinsics.width),
                },
                mu: d.score_mu,
                feature: d.feature.clone(),
                label: d.proposed_label.clone(),
            })
            .collect(),
    };
    let value = serde_json::to_value(&meta).expect("frame metadata serializes");
    let meta_path = dir.join(format!("{stem}.meta.json"));
    std::fs::write(&meta_path, to_canonical_bytes(&value)).map_err(io_err(&meta_path))?;
    let depth_path = dir.join(format!("{stem}.depth.bin"));
    let bytes: Vec<u8> = obs.depth.iter().flat_map(|d| d.to_le_bytes()).collect();
    std::fs::write(&depth_path, bytes).map_err(io_err(&depth_path))?;
    Ok(())
}

pub fn read_frame(dir: &Path, index: u32) -> Result<FrameObservation, FrameError> {
    let stem = frame_stem(index);
    let meta_path = dir.join(format!("{stem}.meta.json"));
    let malformed = |reason: String| FrameError::Malformed {
        path: meta_path.clone(),
        reason,
    };
    let text = std::fs::read(&meta_path).map_err(io_err(&meta_path))?;
    let meta: MetaDoc = serde_json::from_slice(&text).map_err(|e| malformed(e.to_string()))?;
    let rot = Matrix3::from_fn(|i, j| meta.pose.rotation[i][j]);
    let pose_w_c = Pose::new(rot, Vector3::from(meta.pose.translation))?;
    let depth_path = dir.join(format!("{stem}.depth.bin"));
    let raw = std::fs::read(&depth_path).map_err(io_err(&depth_path))?;
    if raw.len() % 4 != 0 {
        return Err(FrameError::Malformed {
            path: depth_path,
            reason: "length is not a multiple of 4".into(),
        });
    }
    let depth: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let width = meta.intrinsics.width;
    let obs = FrameObservation {
        frame_index: meta.frame,
        intrinsics: meta.intrinsics,
        pose_w_c,
        depth,
        detections: meta
            .detections
            .into_iter()
            .map(|d| Detection2D {
                mask: Detection2D::mask_from_runs(&d.mask.runs, width),
                score_mu: d.mu,
                feature: d.feature,
                proposed_label: d.label,
            })
            .collect(),
        color: meta.color,
    };
    obs.validate().map_err(malformed)?;
    Ok(obs)
}

/// Frame indices present in `dir` (by their `meta.json`), ascending.
pub fn list_frames(dir: &Path) -> Result<Vec<u32>, FrameError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(idx) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".meta.json"))
            .and_then(|s| s.parse().ok())
        {
            out.push(idx);
        }
    }
    out.sort_unstable();
    Ok(out)
}

pub fn read_frames(dir: &Path) -> Result<Vec<FrameObservation>, FrameError> {
    list_frames(dir)?.into_iter().map(|i| read_frame(dir, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_round_trip() {
        let det = Detection2D {
            mask: vec![(1, 0), (2, 0), (3, 0), (0, 1), (3, 1)],
            score_mu: 0.5,
            feature: vec![],
            proposed_label: None,
        };
        let runs = det.to_runs(4);
        assert_eq!(runs, vec![[1, 4], [7, 1]]);
        assert_eq!(Detection2D::mask_from_runs(&runs, 4), det.mask);
        assert_eq!(det.bbox(), [0, 0, 4, 2]);
    }

    #[test]
    fn frame_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let intr = CameraIntrinsics::new(10.0, 10.0, 2.0, 1.0, 4, 3).unwrap();
        let obs = FrameObservation {
            frame_index: 12,
            intrinsics: intr,
            pose_w_c: Pose::from_translation(Vector3::new(0.5, 0.0, -1.0)),
            depth: (0..12).map(|i| i as f32 * 0.25).collect(),
            detections: vec![Detection2D {
                mask: vec![(0, 1), (1, 1)],
                score_mu: 0.75,
                feature: vec![1.0, 0.0],
                proposed_label: Some("mug".into()),
            }],
            color: Some("frame_000012.color.png".into()),
        };
        write_frame(dir.path(), &obs).unwrap();
        assert_eq!(list_frames(dir.path()).unwrap(), vec![12]);
        assert_eq!(read_frame(dir.path(), 12).unwrap(), obs);
    }
}
