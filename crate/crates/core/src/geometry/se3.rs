//! Rigid transforms in SE(3), their se(3) twists, and seeded pose noise.
//!
//! A [`Pose`] stores the world-to-camera transform `T_w^c`: a world point `p`
//! maps to the camera frame as `R p + t`.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::GeometryError;

const SMALL_ANGLE: f64 = 1e-6;

/// Rotation angles closer than this to π are refused by [`se3_log`].
pub const LOG_PI_MARGIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose after checking the rotation is orthonormal with det +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        check_rotation(&rotation, 1e-9)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World-to-camera pose looking from `eye` toward `target`, with the
    /// camera y axis pointing as close to world `-up` as possible (image rows
    /// grow downward).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Pose, GeometryError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(GeometryError::DegenerateLookAt);
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(GeometryError::DegenerateLookAt);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        // rows of R are the camera axes expressed in world coordinates
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Ok(Pose {
            rotation,
            translation,
        })
    }

    /// Camera center in world coordinates.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

pub(crate) fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<(), GeometryError> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let err = (r.transpose() * r - Matrix3::identity()).norm();
    let det = r.determinant();
    if err >= tol || (det - 1.0).abs() >= tol {
        return Err(GeometryError::NotARotation { orthonormality: err, det });
    }
    Ok(())
}

/// Nearest rotation matrix in the Frobenius sense (polar decomposition).
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// se(3) tangent vector: translation part `xi`, rotation part `omega`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub xi: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl Twist {
    pub fn new(xi: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Self { xi, omega }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// `[xi; omega]`
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.xi.x, self.xi.y, self.xi.z, self.omega.x, self.omega.y, self.omega.z)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            xi: Vector3::new(v[0], v[1], v[2]),
            omega: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.xi.iter().chain(self.omega.iter()).all(|v| v.is_finite())
    }
}

fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Exponential map: Rodrigues for the rotation, left Jacobian applied to `xi`
/// for the translation.
pub fn se3_exp(twist: &Twist) -> Pose {
    let w = twist.omega;
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let wx = hat(&w);
    let wx2 = wx * wx;
    // a = sinθ/θ, b = (1-cosθ)/θ², c = (θ-sinθ)/θ³
    let (a, b, c) = if theta < SMALL_ANGLE {
        (
            1.0 - theta2 / 6.0,
            0.5 - theta2 / 24.0,
            1.0 / 6.0 - theta2 / 120.0,
        )
    } else {
        let (s, co) = theta.sin_cos();
        (s / theta, (1.0 - co) / theta2, (theta - s) / (theta2 * theta))
    };
    let rotation = Matrix3::identity() + wx * a + wx2 * b;
    let left_jacobian = Matrix3::identity() + wx * b + wx2 * c;
    Pose {
        rotation,
        translation: left_jacobian * twist.xi,
    }
}

/// Rotation angle in `[0, π]`, computed with atan2 for accuracy near 0 and π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let axis = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = 0.5 * axis.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos)
}

/// Logarithm map on the principal branch. Refuses angles within
/// [`LOG_PI_MARGIN`] of π, where the axis is ill-conditioned.
pub fn se3_log(pose: &Pose) -> Result<Twist, GeometryError> {
    let r = &pose.rotation;
    let theta = rotation_angle(r);
    if std::f64::consts::PI - theta < LOG_PI_MARGIN {
        return Err(GeometryError::AngleNearPi { angle: theta });
    }
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let theta2 = theta * theta;
    let scale = if theta < SMALL_ANGLE {
        0.5 * (1.0 + theta2 / 6.0)
    } else {
        theta / (2.0 * theta.sin())
    };
    let omega = vee * scale;
    let wx = hat(&omega);
    // V⁻¹ = I - ½Ω + k Ω², k = (1 - θ sinθ / (2(1 - cosθ))) / θ²
    let k = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let (s, c) = theta.sin_cos();
        (1.0 - theta * s / (2.0 * (1.0 - c))) / theta2
    };
    let v_inv = Matrix3::identity() - wx * 0.5 + wx * wx * k;
    Ok(Twist {
        xi: v_inv * pose.translation,
        omega,
    })
}

/// `(Rᵀ, −Rᵀt)`
pub fn invert_pose(pose: &Pose) -> Pose {
    let rt = pose.rotation.transpose();
    Pose {
        rotation: rt,
        translation: -(rt * pose.translation),
    }
}

/// Gaussian in se(3) around `mean_twist`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseNoiseModel {
    pub mean_twist: Twist,
    pub covariance: Matrix6<f64>,
}

impl PoseNoiseModel {
    pub fn isotropic(variance: f64) -> Self {
        Self {
            mean_twist: Twist::zero(),
            covariance: Matrix6::identity() * variance,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let c = &self.covariance;
        if !c.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::CovarianceNotPsd);
        }
        if (c - c.transpose()).abs().max() > 1e-12 {
            return Err(GeometryError::CovarianceNotPsd);
        }
        let eig = c.symmetric_eigenvalues();
        if eig.iter().any(|&l| l < -1e-12) {
            return Err(GeometryError::CovarianceNotPsd);
        }
        Ok(())
    }
}

/// SplitMix64 (Steele, Lea & Flood 2014). Fixed here so seeded pose noise can
/// be reproduced by any other implementation of the same algorithm:
///
/// ```text
/// state += 0x9E3779B97F4A7C15
/// z = state
/// z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
/// z = (z ^ (z >> 27)) * 0x94D049BB133111EB
/// return z ^ (z >> 31)
/// ```
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Box–Muller pair: `r = sqrt(-2 ln(1 - u1))`, returns `(r cos 2πu2, r sin 2πu2)`.
    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let phi = 2.0 * std::f64::consts::PI * u2;
        (r * phi.cos(), r * phi.sin())
    }
}

/// Lower-triangular `L` with `L Lᵀ = Σ` for PSD `Σ`. Zero pivots give zero
/// columns, so singular covariances (including 0) are accepted.
fn psd_cholesky(cov: &Matrix6<f64>) -> Result<Matrix6<f64>, GeometryError> {
    let mut l = Matrix6::zeros();
    let scale = cov.abs().max().max(1.0);
    let tol = 1e-12 * scale;
    for j in 0..6 {
        let mut d = cov[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return Err(GeometryError::CovarianceNotPsd);
        }
        if d <= tol {
            for i in (j + 1)..6 {
                let mut s = cov[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > 1e-9 * scale {
                    return Err(GeometryError::CovarianceNotPsd);
                }
            }
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..6 {
            let mut s = cov[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Draws `mean + L z`, with `z` six standard normals taken from three
/// [`SplitMix64::next_normal_pair`] calls in order `(z0, z1), (z2, z3), (z4, z5)`
/// and `L` the lower Cholesky factor of the covariance.
pub fn sample_twist(noise: &PoseNoiseModel, seed: u64) -> Result<Twist, GeometryError> {
    noise.validate()?;
    let l = psd_cholesky(&noise.covariance)?;
    let mut rng = SplitMix64::new(seed);
    let mut z = Vector6::zeros();
    for i in 0..3 {
        let (a, b) = rng.next_normal_pair();
        z[2 * i] = a;
        z[2 * i + 1] = b;
    }
    Ok(Twist::from_vector(&(noise.mean_twist.to_vector() + l * z)))
}

/// `exp(𝒯) · pose` with `𝒯` drawn by [`sample_twist`].
pub fn perturb_pose(pose: &Pose, noise: &PoseNoiseModel, seed: u64) -> Result<Pose, GeometryError> {
    let twist = sample_twist(noise, seed)?;
    Ok(se3_exp(&twist).compose(pose))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn assert_pose_close(a: &Pose, b: &Pose, tol: f64) {
        assert!((a.rotation - b.rotation).abs().max() < tol, "{a:?} vs {b:?}");
        assert!((a.translation - b.translation).abs().max() < tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(se3_exp(&Twist::zero()), Pose::identity());
    }

    #[test]
    fn exp_pure_translation() {
        let p = se3_exp(&Twist::new(Vector3::new(1.0, 2.0, 3.0), Vector3::zeros()));
        assert_eq!(p.rotation, Matrix3::identity());
        assert_eq!(p.translation, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn exp_quarter_turn_maps_x_to_y() {
        let p = se3_exp(&Twist::new(Vector3::zeros(), Vector3::new(0.0, 0.0, PI / 2.0)));
        let x = p.rotation * Vector3::x();
        assert!((x - Vector3::y()).norm() < 1e-12);
        assert!(p.translation.norm() < 1e-15);
    }

    #[test]
    fn log_identity_is_zero() {
        let t = se3_log(&Pose::identity()).unwrap();
        assert_eq!(t.to_vector(), Vector6::zeros());
    }

    #[test]
    fn log_refuses_half_turn() {
        let r = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        let pose = Pose::new(r, Vector3::zeros()).unwrap();
        assert!(matches!(se3_log(&pose), Err(GeometryError::AngleNearPi { .. })));
    }

    #[test]
    fn log_inverts_exp_for_small_twists() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..200 {
            let v = Vector6::from_fn(|_, _| rng.next_f64() - 0.5) * 0.5 / 3f64.sqrt();
            let twist = Twist::from_vector(&v);
            let back = se3_log(&se3_exp(&twist)).unwrap();
            assert!((back.to_vector() - v).abs().max() < 1e-9);
        }
    }

    #[test]
    fn invert_round_trip() {
        let pose = se3_exp(&Twist::new(Vector3::new(0.3, -1.0, 2.0), Vector3::new(0.2, 0.4, -0.1)));
        assert_pose_close(&invert_pose(&invert_pose(&pose)), &pose, 1e-12);
        assert_pose_close(&pose.compose(&invert_pose(&pose)), &Pose::identity(), 1e-10);
        let t = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(invert_pose(&t).translation, Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(invert_pose(&Pose::identity()), Pose::identity());
    }

    #[test]
    fn perturb_with_zero_noise_is_identity() {
        let pose = se3_exp(&Twist::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.0, 0.1, 0.0)));
        let out = perturb_pose(&pose, &PoseNoiseModel::isotropic(0.0), 42).unwrap();
        assert_eq!(out, pose);
    }

    #[test]
    fn perturb_with_deterministic_mean_pretranslates() {
        let pose = se3_exp(&Twist::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.0, 0.1, 0.0)));
        let noise = PoseNoiseModel {
            mean_twist: Twist::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()),
            covariance: Matrix6::zeros(),
        };
        let out = perturb_pose(&pose, &noise, 3).unwrap();
        assert_eq!(out.rotation, pose.rotation);
        assert!((out.translation - (pose.translation + Vector3::x())).norm() < 1e-15);
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let mut cov = Matrix6::identity();
        cov[(2, 2)] = -1.0;
        let noise = PoseNoiseModel {
            mean_twist: Twist::zero(),
            covariance: cov,
        };
        assert!(matches!(
            perturb_pose(&Pose::identity(), &noise, 1),
            Err(GeometryError::CovarianceNotPsd)
        ));
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vector3::new(2.0, -3.0, 1.5);
        let target = Vector3::new(0.0, 0.0, 0.3);
        let pose = Pose::look_at(eye, target, Vector3::z()).unwrap();
        check_rotation(&pose.rotation, 1e-9).unwrap();
        let c = pose.transform_point(&target);
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12 && c.z > 0.0);
        assert!((pose.camera_center() - eye).norm() < 1e-12);
        // a point above the target lands in the upper half of the image
        assert!(pose.transform_point(&(target + Vector3::z())).y < 0.0);
    }
}
