//! Rigid transforms in 3D.
//!
//! [`Pose`] stores a rotation matrix and a translation. Composition follows the
//! left-multiplication convention: `a.compose(&b)` applies `b` first, then `a`.
//! [`Tangent`] is the 6-DoF local parameterization (rotation first, then
//! translation) used by the smoother for retraction and whitened residuals.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, SVector, UnitQuaternion, Vector3, SVD};
use thiserror::Error;

/// Number of compositions after which the rotation is projected back onto SO(3).
const REORTHONORMALIZE_EVERY: u32 = 100;

/// Relative spread below which a point set counts as collinear.
const COLLINEAR_TOL: f64 = 1e-9;

/// Margin from the cut locus at which `log` refuses to answer.
const NEAR_PI_TOL: f64 = 1e-6;

const GIMBAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate point configuration (collinear or too few points)")]
    DegenerateConfiguration,
    #[error("correspondence lists differ in length: {src} vs {dst}")]
    LengthMismatch { src: usize, dst: usize },
    #[error("rotation angle {angle} is too close to pi for a unique logarithm")]
    NearPiRotation { angle: f64 },
    #[error("pitch {pitch} is at the gimbal singularity")]
    GimbalLock { pitch: f64 },
}

/// A rigid transform: `x -> R x + t`.
#[derive(Clone, Copy, Debug)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    // Compositions since the rotation was last re-orthonormalized.
    drift: u32,
}

impl PartialEq for Pose {
    fn eq(&self, other: &Self) -> bool {
        self.rotation == other.rotation && self.translation == other.translation
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.quaternion();
        let t = &self.translation;
        write!(
            f,
            "Pose(t: [{:.4}, {:.4}, {:.4}], q: [{:.4}, {:.4}, {:.4}, {:.4}])",
            t.x, t.y, t.z, q.w, q.i, q.j, q.k
        )
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            drift: 0,
        }
    }

    /// Builds a pose from parts. The rotation is trusted to be orthonormal.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            drift: 0,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// Rotation about the z axis, `[[c, -s, 0], [s, c, 0], [0, 0, 1]]`.
    pub fn rot_z(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        #[rustfmt::skip]
        let r = Matrix3::new(
            c, -s, 0.0,
            s,  c, 0.0,
            0.0, 0.0, 1.0,
        );
        Self::from_rotation(r)
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::from_rotation(so3_exp(&(axis * (angle / n))))
    }

    /// Builds a pose from a unit quaternion `[w, x, y, z]` and a translation.
    pub fn from_quaternion(wxyz: [f64; 4], translation: Vector3<f64>) -> Self {
        let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let uq = UnitQuaternion::from_quaternion(q);
        Self::new(*uq.to_rotation_matrix().matrix(), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    /// Unit quaternion `[w, x, y, z]` with the sign fixed so that `w >= 0`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.quaternion();
        let q = q.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut out = Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            drift: self.drift.max(other.drift) + 1,
        };
        if out.drift >= REORTHONORMALIZE_EVERY {
            out.rotation = project_to_so3(&out.rotation);
            out.drift = 0;
        }
        out
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
            drift: self.drift,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// SE(3) exponential map.
    pub fn exp(t: &Tangent) -> Pose {
        let rotation = so3_exp(&t.rot);
        let translation = left_jacobian(&t.rot) * t.trans;
        Pose::new(rotation, translation)
    }

    /// SE(3) logarithm. Fails within `1e-6` of a rotation by pi.
    pub fn log(&self) -> Result<Tangent, GeometryError> {
        let angle = self.angle();
        if angle >= PI - NEAR_PI_TOL {
            return Err(GeometryError::NearPiRotation { angle });
        }
        Ok(self.log_unchecked())
    }

    /// SE(3) logarithm that always answers; near pi the axis sign is resolved
    /// arbitrarily but consistently. Used where a residual must exist.
    pub fn log_unchecked(&self) -> Tangent {
        let rot = so3_log(&self.rotation);
        let trans = inverse_left_jacobian(&rot) * self.translation;
        Tangent { rot, trans }
    }

    /// `self ∘ exp(delta)`: right perturbation, the solver's retraction.
    pub fn retract(&self, delta: &Tangent) -> Pose {
        self.compose(&Pose::exp(delta))
    }

    /// Roll and pitch of the ZYX (yaw-pitch-roll) Euler decomposition
    /// `R = Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn roll_pitch(&self) -> Result<(f64, f64), GeometryError> {
        let r = &self.rotation;
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        if pitch.abs() >= PI / 2.0 - GIMBAL_TOL {
            return Err(GeometryError::GimbalLock { pitch });
        }
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        Ok((roll, pitch))
    }

    /// Yaw of the ZYX decomposition.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Interpolates with linear translation and geodesic rotation; `s = 0`
    /// gives `self`, `s = 1` gives `other`. Extrapolates for `s` outside [0, 1].
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        let delta = so3_log(&(self.rotation.transpose() * other.rotation));
        let rotation = self.rotation * so3_exp(&(delta * s));
        let translation = self.translation + (other.translation - self.translation) * s;
        Pose::new(rotation, translation)
    }

    /// Largest deviation from the identity of `self⁻¹ ∘ other`, as
    /// (rotation angle, translation norm).
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        let rel = self.inverse().compose(other);
        (rel.angle(), rel.translation.norm())
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

/// Element of the SE(3) tangent space: rotational part (radians), then
/// translational part (meters).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tangent {
    pub rot: Vector3<f64>,
    pub trans: Vector3<f64>,
}

impl Tangent {
    pub fn new(rot: Vector3<f64>, trans: Vector3<f64>) -> Self {
        Self { rot, trans }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &SVector<f64, 6>) -> Self {
        Self {
            rot: Vector3::new(v[0], v[1], v[2]),
            trans: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> SVector<f64, 6> {
        SVector::<f64, 6>::from_column_slice(&[
            self.rot.x,
            self.rot.y,
            self.rot.z,
            self.trans.x,
            self.trans.y,
            self.trans.z,
        ])
    }
}

impl std::ops::Neg for Tangent {
    type Output = Tangent;

    fn neg(self) -> Tangent {
        Tangent {
            rot: -self.rot,
            trans: -self.trans,
        }
    }
}

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues' formula.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    // atan2 form stays accurate near both 0 and pi.
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    let c = (r.trace() - 1.0) / 2.0;
    s.atan2(c)
}

/// Inverse of [`so3_exp`], returning the rotation vector with angle in `[0, pi]`.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let theta = rotation_angle(r);
    if theta < 1e-6 {
        // theta / (2 sin theta) ~ 1/2 + theta^2 / 12
        return vee * (0.5 + theta * theta / 12.0);
    }
    if theta < PI - 1e-3 {
        return vee * (theta / (2.0 * theta.sin()));
    }
    // Near pi the antisymmetric part vanishes; read the axis from the
    // symmetric part, B = (R + R^T)/2 - cos(theta) I = (1 - cos theta) a a^T.
    let c = theta.cos();
    let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * c;
    let diag = [b[(0, 0)], b[(1, 1)], b[(2, 2)]];
    let i = (0..3).max_by(|&a, &b| diag[a].total_cmp(&diag[b])).unwrap_or(0);
    let mut axis: Vector3<f64> = b.column(i).into();
    axis /= axis.norm();
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Left Jacobian of SO(3), the `V` matrix of the SE(3) exponential.
fn left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() + k * a + k * k * b
}

fn inverse_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let b = if theta2 < 1e-10 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2
    };
    Matrix3::identity() - k * 0.5 + k * k * b
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return *m,
    };
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Closed-form rigid alignment (unit scale, uniform weights) minimizing
/// `sum |dst_k - T(src_k)|^2`, with the reflection correction.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Pose, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(GeometryError::DegenerateConfiguration);
    }
    // Accumulate in a canonical order so the estimate does not depend on how
    // the correspondences were listed.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lex_cmp(&src[a], &src[b]).then_with(|| lex_cmp(&dst[a], &dst[b])));
    let inv_n = 1.0 / n as f64;
    let mu_s = order.iter().map(|&i| src[i]).sum::<Vector3<f64>>() * inv_n;
    let mu_d = order.iter().map(|&i| dst[i]).sum::<Vector3<f64>>() * inv_n;

    let mut cov = Matrix3::zeros();
    let mut scatter_s = Matrix3::zeros();
    let mut scatter_d = Matrix3::zeros();
    for &i in &order {
        let cs = src[i] - mu_s;
        let cd = dst[i] - mu_d;
        cov += cd * cs.transpose();
        scatter_s += cs * cs.transpose();
        scatter_d += cd * cd.transpose();
    }
    if is_collinear(&scatter_s) || is_collinear(&scatter_d) {
        return Err(GeometryError::DegenerateConfiguration);
    }

    let svd = SVD::new(cov, true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(GeometryError::DegenerateConfiguration),
    };
    let mut d = Matrix3::identity();
    if u.determinant() * vt.determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * vt;
    let translation = mu_d - rotation * mu_s;
    Ok(Pose::new(rotation, translation))
}

fn lex_cmp(a: &Vector3<f64>, b: &Vector3<f64>) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then_with(|| a.y.total_cmp(&b.y))
        .then_with(|| a.z.total_cmp(&b.z))
}

/// Collinearity test on a 3x3 scatter matrix: the second principal spread
/// must exceed `COLLINEAR_TOL` relative to the first.
fn is_collinear(scatter: &Matrix3<f64>) -> bool {
    let mut ev: Vec<f64> = scatter
        .symmetric_eigenvalues()
        .iter()
        .map(|e| e.max(0.0).sqrt())
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[0] == 0.0 || ev[1] <= COLLINEAR_TOL * ev[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_pose_eq(a: &Pose, b: &Pose, tol: f64) {
        let dr = (a.rotation() - b.rotation()).norm();
        let dt = (a.translation() - b.translation()).norm();
        assert!(dr <= tol && dt <= tol, "{a} vs {b}: dr={dr:e} dt={dt:e}");
    }

    #[test]
    fn identity_is_neutral() {
        let p = Pose::new(so3_exp(&Vector3::new(0.1, -0.4, 0.3)), Vector3::new(1.0, 2.0, 3.0));
        assert_pose_eq(&Pose::identity().compose(&p), &p, 1e-15);
        assert_pose_eq(&p.compose(&Pose::identity()), &p, 1e-15);
    }

    #[test]
    fn quarter_turns_compose_to_half_turn() {
        let half = Pose::rot_z(PI / 2.0).compose(&Pose::rot_z(PI / 2.0));
        assert_pose_eq(&half, &Pose::rot_z(PI), 1e-15);
    }

    #[test]
    fn compose_applies_right_operand_first() {
        let a = Pose::new(*Pose::rot_z(0.3).rotation(), Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::from_translation(Vector3::new(0.0, 1.0, 0.0));
        let t = a.compose(&b).translation().to_owned();
        // 1 - sin(0.3), cos(0.3) at 40 digits, rounded.
        assert!((t.x - 0.704_479_793_338_660_4).abs() < 1e-15);
        assert!((t.y - 0.955_336_489_125_606).abs() < 1e-15);
        assert_eq!(t.z, 0.0);
    }

    #[test]
    fn rot_z_matches_closed_form() {
        assert_pose_eq(&Pose::rot_z(0.0), &Pose::identity(), 0.0);
        let half = Pose::rot_z(PI);
        let expected = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert!((half.rotation() - expected).norm() < 1e-15);
        let r = Pose::rot_z(0.1);
        let (s, c) = (0.099_833_416_646_828_15, 0.995_004_165_278_025_8);
        assert_eq!(r.rotation()[(0, 0)], c);
        assert_eq!(r.rotation()[(0, 1)], -s);
        assert_eq!(r.rotation()[(1, 0)], s);
        assert_eq!(r.rotation()[(1, 1)], c);
        assert_eq!(r.translation(), &Vector3::zeros());
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = Pose::new(so3_exp(&Vector3::new(0.7, 0.2, -1.1)), Vector3::new(-3.0, 4.0, 0.5));
        assert_pose_eq(&p.compose(&p.inverse()), &Pose::identity(), 1e-12);
    }

    #[test]
    fn long_composition_chain_stays_orthonormal() {
        let step = Pose::new(
            so3_exp(&Vector3::new(0.013, -0.021, 0.017)),
            Vector3::new(0.1, 0.0, 0.0),
        );
        let mut p = Pose::identity();
        for _ in 0..10_000 {
            p = p.compose(&step);
        }
        let r = p.rotation();
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
        assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn umeyama_identity_on_equal_sets() {
        let pts = [
            Vector3::new(0.3, 1.0, -2.0),
            Vector3::new(4.0, 0.1, 0.0),
            Vector3::new(-1.0, 2.0, 1.0),
        ];
        let p = umeyama(&pts, &pts).unwrap();
        assert_pose_eq(&p, &Pose::identity(), 1e-12);
    }

    #[test]
    fn umeyama_recovers_known_transform() {
        let src = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let truth = Pose::new(*Pose::rot_z(PI / 2.0).rotation(), Vector3::new(1.0, 2.0, 3.0));
        let dst: Vec<_> = src.iter().map(|p| truth.transform_point(p)).collect();
        let est = umeyama(&src, &dst).unwrap();
        assert_pose_eq(&est, &truth, 1e-9);
    }

    #[test]
    fn umeyama_rejects_collinear_points() {
        let src = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(2.0, 2.0, 2.0),
        ];
        assert_eq!(umeyama(&src, &src), Err(GeometryError::DegenerateConfiguration));
        assert_eq!(
            umeyama(&src[..2], &src[..2]),
            Err(GeometryError::DegenerateConfiguration)
        );
    }

    #[test]
    fn umeyama_noisy_translation_error_is_small() {
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        use rand_distr::{Distribution, Normal, Uniform};

        let noise = Normal::new(0.0, 0.01).unwrap();
        let coord = Uniform::new(-2.0, 2.0).unwrap();
        let mut errors = Vec::new();
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = Pose::new(so3_exp(&Vector3::new(0.3, -0.2, 1.3)), Vector3::new(5.0, -1.0, 0.4));
            let src: Vec<Vector3<f64>> = (0..100)
                .map(|_| Vector3::from_fn(|_, _| coord.sample(&mut rng)))
                .collect();
            let dst: Vec<Vector3<f64>> = src
                .iter()
                .map(|p| truth.transform_point(p) + Vector3::from_fn(|_, _| noise.sample(&mut rng)))
                .collect();
            let est = umeyama(&src, &dst).unwrap();
            errors.push((est.translation() - truth.translation()).norm());
        }
        errors.sort_by(f64::total_cmp);
        assert!(errors[949] < 0.01, "p95 translation error {}", errors[949]);
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(Pose::identity().log().unwrap(), Tangent::zero());
    }

    #[test]
    fn exp_of_pure_yaw_is_rot_z() {
        let p = Pose::exp(&Tangent::new(Vector3::new(0.0, 0.0, 0.1), Vector3::zeros()));
        assert_pose_eq(&p, &Pose::rot_z(0.1), 1e-15);
    }

    #[test]
    fn log_refuses_half_turn() {
        assert!(matches!(
            Pose::rot_z(PI).log(),
            Err(GeometryError::NearPiRotation { .. })
        ));
        // The unchecked variant still lands on a valid axis.
        let t = Pose::rot_z(PI).log_unchecked();
        assert!((t.rot.norm() - PI).abs() < 1e-9);
        assert_pose_eq(&Pose::exp(&t), &Pose::rot_z(PI), 1e-9);
    }

    #[test]
    fn roll_pitch_examples() {
        assert_eq!(Pose::identity().roll_pitch().unwrap(), (0.0, 0.0));
        let (r, p) = Pose::rot_z(0.7).roll_pitch().unwrap();
        assert!(r.abs() < 1e-15 && p.abs() < 1e-15);
        let (r, p) = Pose::from_axis_angle(Vector3::x(), 0.2).roll_pitch().unwrap();
        assert!((r - 0.2).abs() < 1e-15 && p.abs() < 1e-15);
        let (r, p) = Pose::from_axis_angle(Vector3::y(), -0.3).roll_pitch().unwrap();
        assert!(r.abs() < 1e-15 && (p + 0.3).abs() < 1e-15);
        assert!(matches!(
            Pose::from_axis_angle(Vector3::y(), PI / 2.0).roll_pitch(),
            Err(GeometryError::GimbalLock { .. })
        ));
    }

    #[test]
    fn quaternion_round_trip_keeps_w_nonnegative() {
        let p = Pose::new(so3_exp(&Vector3::new(0.0, 0.0, 3.0)), Vector3::new(1.0, 2.0, 3.0));
        let q = p.quaternion_wxyz();
        assert!(q[0] >= 0.0);
        assert_pose_eq(&Pose::from_quaternion(q, *p.translation()), &p, 1e-12);
    }

    fn arb_vec3(scale: f64) -> impl Strategy<Value = Vector3<f64>> {
        (-scale..scale, -scale..scale, -scale..scale).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (arb_vec3(3.0), arb_vec3(10.0)).prop_map(|(w, t)| {
            let w = if w.norm() > 3.0 { w * (3.0 / w.norm()) } else { w };
            Pose::new(so3_exp(&w), t)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn composition_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!((left.rotation() - right.rotation()).norm() < 1e-9);
            prop_assert!((left.translation() - right.translation()).norm() < 1e-9);
        }

        #[test]
        fn inverse_round_trips_points(p in arb_pose(), x in arb_vec3(50.0)) {
            let back = p.inverse().transform_point(&p.transform_point(&x));
            prop_assert!((back - x).norm() < 1e-9);
        }

        #[test]
        fn exp_log_round_trip(w in arb_vec3(3.0), t in arb_vec3(10.0)) {
            let w = if w.norm() >= 3.0 { w * (2.999 / w.norm()) } else { w };
            let tan = Tangent::new(w, t);
            let back = Pose::exp(&tan).log().unwrap();
            prop_assert!((back.rot - tan.rot).norm() < 1e-9);
            prop_assert!((back.trans - tan.trans).norm() < 1e-9);
        }

        #[test]
        fn exp_of_negation_is_inverse(w in arb_vec3(0.57), t in arb_vec3(0.57)) {
            let v = Tangent::new(w, t);
            let p = Pose::exp(&v).compose(&Pose::exp(&-v));
            prop_assert!((p.rotation() - Matrix3::identity()).norm() < 1e-12);
            prop_assert!(p.translation().norm() < 1e-12);
        }

        #[test]
        fn umeyama_is_permutation_invariant(
            truth in arb_pose(),
            pts in proptest::collection::vec(arb_vec3(5.0), 3..12),
            rot in 0usize..12,
        ) {
            let dst: Vec<_> = pts.iter().map(|p| truth.transform_point(p)).collect();
            let Ok(a) = umeyama(&pts, &dst) else { return Ok(()); };
            let k = rot % pts.len();
            let mut ps = pts.clone();
            let mut ds = dst.clone();
            ps.rotate_left(k);
            ds.rotate_left(k);
            ps.reverse();
            ds.reverse();
            let b = umeyama(&ps, &ds).unwrap();
            prop_assert!((a.rotation() - b.rotation()).norm() < 1e-12);
            prop_assert!((a.translation() - b.translation()).norm() < 1e-12);
        }
    }
}
