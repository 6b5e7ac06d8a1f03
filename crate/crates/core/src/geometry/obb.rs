//! Oriented bounding boxes: PCA fitting, containment, separation, and IoU.

use std::cmp::Ordering;

use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::hull::min_area_rect_direction;
use super::se3::check_rotation;
use super::GeometryError;

/// Floor applied to fitted extents, in meters.
pub const MIN_EXTENT: f64 = 1e-4;

/// Samples per axis used by [`obb_iou`] on the oriented path.
pub const DEFAULT_IOU_SAMPLES: usize = 64;

/// Box with center, full side lengths along its local axes, and a rotation
/// whose columns are those axes in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: Vector3<f64>,
    pub extents: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Obb {
    pub fn new(center: Vector3<f64>, extents: Vector3<f64>, rotation: Matrix3<f64>) -> Result<Self, GeometryError> {
        let b = Self {
            center,
            extents,
            rotation,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn axis_aligned(center: Vector3<f64>, extents: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::new(center, extents, Matrix3::identity())
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !self.extents.iter().all(|&e| e > 0.0 && e.is_finite()) {
            return Err(GeometryError::NonPositiveExtent);
        }
        check_rotation(&self.rotation, 1e-9)
    }

    pub fn volume(&self) -> f64 {
        self.extents.x * self.extents.y * self.extents.z
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        self.extents * 0.5
    }

    pub fn is_axis_aligned(&self) -> bool {
        self.rotation == Matrix3::identity()
    }

    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.center)
    }

    /// Containment with every half extent grown by `inflate`.
    pub fn contains(&self, p: &Vector3<f64>, inflate: f64) -> bool {
        let l = self.to_local(p);
        let h = self.half_extents();
        l.x.abs() <= h.x + inflate && l.y.abs() <= h.y + inflate && l.z.abs() <= h.z + inflate
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let h = self.half_extents();
        let mut out = [Vector3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *c = self.center + self.rotation * Vector3::new(sx * h.x, sy * h.y, sz * h.z);
        }
        out
    }

    /// World-aligned bounds `(min, max)`.
    pub fn aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        let r = self.rotation.abs() * self.half_extents();
        (self.center - r, self.center + r)
    }
}

fn aabbs_disjoint(a: &Obb, b: &Obb) -> bool {
    let (amin, amax) = a.aabb();
    let (bmin, bmax) = b.aabb();
    (0..3).any(|k| amax[k] < bmin[k] || bmax[k] < amin[k])
}

/// Separating-axis test over the 15 candidate axes; `true` only when a
/// strictly separating axis exists.
pub fn obbs_separated(a: &Obb, b: &Obb) -> bool {
    let ha = a.half_extents();
    let hb = b.half_extents();
    let d = b.center - a.center;
    let mut axes: Vec<Vector3<f64>> = Vec::with_capacity(15);
    for i in 0..3 {
        axes.push(a.rotation.column(i).into_owned());
        axes.push(b.rotation.column(i).into_owned());
    }
    for i in 0..3 {
        for j in 0..3 {
            let c = a.rotation.column(i).cross(&b.rotation.column(j));
            if c.norm() > 1e-9 {
                axes.push(c.normalize());
            }
        }
    }
    axes.iter().any(|ax| {
        let ra: f64 = (0..3).map(|k| ha[k] * a.rotation.column(k).dot(ax).abs()).sum();
        let rb: f64 = (0..3).map(|k| hb[k] * b.rotation.column(k).dot(ax).abs()).sum();
        d.dot(ax).abs() > ra + rb
    })
}

/// `‖c_a − c_b‖₂`
pub fn centroid_distance(a: &Obb, b: &Obb) -> f64 {
    (a.center - b.center).norm()
}

fn axis_aligned_intersection(a: &Obb, b: &Obb) -> f64 {
    let (ha, hb) = (a.half_extents(), b.half_extents());
    (0..3)
        .map(|k| {
            let lo = (a.center[k] - ha[k]).max(b.center[k] - hb[k]);
            let hi = (a.center[k] + ha[k]).min(b.center[k] + hb[k]);
            (hi - lo).max(0.0)
        })
        .product()
}

fn box_order(a: &Obb, b: &Obb) -> Ordering {
    a.volume()
        .total_cmp(&b.volume())
        .then_with(|| {
            a.center
                .iter()
                .chain(a.extents.iter())
                .chain(a.rotation.iter())
                .zip(b.center.iter().chain(b.extents.iter()).chain(b.rotation.iter()))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Volumetric IoU with the default sampling resolution.
pub fn obb_iou(a: &Obb, b: &Obb) -> f64 {
    obb_iou_with_resolution(a, b, DEFAULT_IOU_SAMPLES)
}

/// Exact when both boxes are axis-aligned. Otherwise the smaller box (ties
/// broken by a fixed total order, so the result is symmetric) is covered with
/// an `n³` grid of cell centers in its own frame and the fraction inside the
/// other box estimates the intersection volume.
pub fn obb_iou_with_resolution(a: &Obb, b: &Obb, n: usize) -> f64 {
    if aabbs_disjoint(a, b) {
        return 0.0;
    }
    let (va, vb) = (a.volume(), b.volume());
    if a.is_axis_aligned() && b.is_axis_aligned() {
        let inter = axis_aligned_intersection(a, b);
        return (inter / (va + vb - inter)).clamp(0.0, 1.0);
    }
    if obbs_separated(a, b) {
        return 0.0;
    }
    let (small, large) = if box_order(a, b) == Ordering::Greater { (b, a) } else { (a, b) };
    let n = n.max(1);
    let h = small.half_extents();
    let step = small.extents / n as f64;
    let mut inside = 0usize;
    for i in 0..n {
        let x = -h.x + (i as f64 + 0.5) * step.x;
        for j in 0..n {
            let y = -h.y + (j as f64 + 0.5) * step.y;
            for k in 0..n {
                let z = -h.z + (k as f64 + 0.5) * step.z;
                let p = small.center + small.rotation * Vector3::new(x, y, z);
                if large.contains(&p, 0.0) {
                    inside += 1;
                }
            }
        }
    }
    let inter = small.volume() * inside as f64 / (n * n * n) as f64;
    (inter / (va + vb - inter)).clamp(0.0, 1.0)
}

fn point_cov(points: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let cov = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    }) / n;
    (mean, cov)
}

fn orthonormal_complement(a: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = a.cross(&helper).normalize();
    let v = a.cross(&u);
    (u, v)
}

/// Given a fixed axis, the in-plane pair minimizing the projected rectangle.
fn best_plane_axes(points: &[Vector3<f64>], axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>, f64) {
    let (u, v) = orthonormal_complement(axis);
    let projected: Vec<Vector2<f64>> = points.iter().map(|p| Vector2::new(p.dot(&u), p.dot(&v))).collect();
    let (e1, e2) = match min_area_rect_direction(&projected) {
        Some(d) => {
            let e1 = (u * d.x + v * d.y).normalize();
            (e1, axis.cross(&e1))
        }
        None => (u, v),
    };
    let span = |dir: &Vector3<f64>| {
        let (lo, hi) = points
            .iter()
            .map(|p| p.dot(dir))
            .fold((f64::MAX, f64::MIN), |(lo, hi), x| (lo.min(x), hi.max(x)));
        (hi - lo).max(MIN_EXTENT)
    };
    let volume = span(axis) * span(&e1) * span(&e2);
    (e1, e2, volume)
}

fn strided_sample(points: &[Vector3<f64>], max: usize) -> Vec<Vector3<f64>> {
    if points.len() <= max {
        return points.to_vec();
    }
    (0..max).map(|i| points[i * points.len() / max]).collect()
}

/// PCA box. Columns of the rotation are the covariance eigenvectors sorted by
/// descending variance. Inside a degenerate eigenspace the axes are chosen to
/// minimize box volume; among equal variances the axis most aligned with
/// world z goes last. Extents are floored at [`MIN_EXTENT`].
pub fn fit_obb(points: &[Vector3<f64>]) -> Result<Obb, GeometryError> {
    if points.len() < 4 {
        return Err(GeometryError::TooFewPoints { got: points.len(), need: 4 });
    }
    if !points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(GeometryError::NonFinite);
    }
    let (mean, cov) = point_cov(points);
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lam: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs: Vec<Vector3<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();

    let scale = lam[0].abs().max(1e-300);
    let tie = |a: f64, b: f64| (a - b).abs() <= 1e-6 * scale;
    let centered: Vec<Vector3<f64>> = points.iter().map(|p| p - mean).collect();

    let mut axes = [vecs[0], vecs[1], vecs[2]];
    match (tie(lam[0], lam[1]), tie(lam[1], lam[2])) {
        (false, false) => {}
        (false, true) => {
            let (e1, e2, _) = best_plane_axes(&centered, &vecs[0]);
            axes = [vecs[0], e1, e2];
        }
        (true, false) => {
            let (e1, e2, _) = best_plane_axes(&centered, &vecs[2]);
            axes = [e1, e2, vecs[2]];
        }
        (true, true) => {
            let sample = strided_sample(&centered, 24);
            let mut candidates: Vec<Vector3<f64>> = vecs.clone();
            for i in 0..sample.len() {
                for j in (i + 1)..sample.len() {
                    let d = sample[j] - sample[i];
                    if d.norm() > 1e-12 {
                        candidates.push(d.normalize());
                    }
                }
            }
            let mut best: Option<(f64, [Vector3<f64>; 3])> = None;
            for c in candidates {
                let (e1, e2, vol) = best_plane_axes(&centered, &c);
                if best.as_ref().is_none_or(|(v, _)| vol < v * (1.0 - 1e-9)) {
                    best = Some((vol, [c, e1, e2]));
                }
            }
            axes = best.expect("candidate set is non-empty").1;
        }
    }

    let variance = |a: &Vector3<f64>| centered.iter().map(|p| p.dot(a).powi(2)).sum::<f64>() / centered.len() as f64;
    let mut keyed: Vec<(f64, Vector3<f64>)> = axes.iter().map(|a| (variance(a), *a)).collect();
    // insertion sort: a strict total order is not available once ties are fuzzy
    for i in 1..keyed.len() {
        let mut j = i;
        while j > 0 {
            let (va, a) = keyed[j - 1];
            let (vb, b) = keyed[j];
            let swap = if tie(va, vb) { a.z.abs() > b.z.abs() + 1e-12 } else { vb > va };
            if !swap {
                break;
            }
            keyed.swap(j - 1, j);
            j -= 1;
        }
    }
    let canonical_sign = |v: Vector3<f64>| {
        let k = v.iamax();
        if v[k] < 0.0 {
            -v
        } else {
            v
        }
    };
    let c1 = canonical_sign(keyed[0].1.normalize());
    let c2 = canonical_sign((keyed[1].1 - c1 * c1.dot(&keyed[1].1)).normalize());
    let c3 = c1.cross(&c2);
    let rotation = Matrix3::from_columns(&[c1, c2, c3]);

    let mut lo = Vector3::repeat(f64::MAX);
    let mut hi = Vector3::repeat(f64::MIN);
    for p in points {
        let l = rotation.transpose() * p;
        lo = lo.inf(&l);
        hi = hi.sup(&l);
    }
    let extents = (hi - lo).map(|e| e.max(MIN_EXTENT));
    let center = rotation * ((lo + hi) * 0.5);
    Ok(Obb {
        center,
        extents,
        rotation,
    })
}

/// Box with one axis on world z and the horizontal pair taken from the
/// minimum-area rectangle around the points' floor projection. Suits upright
/// objects whose underside is never observed, where PCA axes tilt.
pub fn fit_upright_obb(points: &[Vector3<f64>]) -> Result<Obb, GeometryError> {
    if points.len() < 4 {
        return Err(GeometryError::TooFewPoints { got: points.len(), need: 4 });
    }
    if !points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(GeometryError::NonFinite);
    }
    let floor: Vec<Vector2<f64>> = points.iter().map(|p| p.xy()).collect();
    let d = min_area_rect_direction(&floor).unwrap_or_else(Vector2::x);
    // put the first axis in the half-plane x > 0 (or +y when vertical)
    let d = if d.x < -1e-12 || (d.x.abs() <= 1e-12 && d.y < 0.0) { -d } else { d };
    let c1 = Vector3::new(d.x, d.y, 0.0).normalize();
    let c3 = Vector3::z();
    let c2 = c3.cross(&c1);
    let rotation = Matrix3::from_columns(&[c1, c2, c3]);
    let mut lo = Vector3::repeat(f64::MAX);
    let mut hi = Vector3::repeat(f64::MIN);
    for p in points {
        let l = rotation.transpose() * p;
        lo = lo.inf(&l);
        hi = hi.sup(&l);
    }
    let extents = (hi - lo).map(|e| e.max(MIN_EXTENT));
    let center = rotation * ((lo + hi) * 0.5);
    Ok(Obb {
        center,
        extents,
        rotation,
    })
}
