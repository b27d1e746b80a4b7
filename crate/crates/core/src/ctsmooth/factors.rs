//! Residuals of the coordinated-turn smoother and the factor graph that
//! strings them together.
//!
//! Every residual is whitened (divided by its standard deviations) before it
//! leaves this module. Pose residuals are `[rotation; translation]` tangent
//! vectors.

use nalgebra::{Matrix3, SVector, Vector2};

use super::model::ct_predict;
use super::SmootherState;
use crate::geometry::{so3_exp, GeometryError, Pose};

/// Diagonal Gaussian noise with an optional Huber robustifier applied to the
/// norm of the whitened residual.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    sigmas: Vec<f64>,
    huber: Option<f64>,
}

impl NoiseSpec {
    /// `None` if any sigma (or the Huber threshold) is not strictly positive.
    pub fn new(sigmas: Vec<f64>, huber: Option<f64>) -> Option<Self> {
        let positive = |s: &f64| s.is_finite() && *s > 0.0;
        if sigmas.is_empty() || !sigmas.iter().all(positive) || !huber.iter().all(positive) {
            return None;
        }
        Some(Self { sigmas, huber })
    }

    /// Same sigmas for the three rotational and the three translational axes.
    pub fn pose(rot_sigma: f64, trans_sigma: f64, huber: Option<f64>) -> Option<Self> {
        Self::new(
            vec![rot_sigma, rot_sigma, rot_sigma, trans_sigma, trans_sigma, trans_sigma],
            huber,
        )
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn huber(&self) -> Option<f64> {
        self.huber
    }

    /// `rho(|r|)`: `r²/2` inside the Huber threshold, linear beyond it.
    pub fn cost(&self, whitened_norm: f64) -> f64 {
        match self.huber {
            Some(k) if whitened_norm > k => k * whitened_norm - 0.5 * k * k,
            _ => 0.5 * whitened_norm * whitened_norm,
        }
    }

    /// Iteratively-reweighted least-squares weight matching [`Self::cost`].
    pub fn weight(&self, whitened_norm: f64) -> f64 {
        match self.huber {
            Some(k) if whitened_norm > k => k / whitened_norm,
            _ => 1.0,
        }
    }
}

/// Whitened measurement residual `log(measurement⁻¹ ∘ pose)`.
pub fn residual_measurement(pose: &Pose, measurement: &Pose, noise: &NoiseSpec) -> SVector<f64, 6> {
    whiten6(measurement.inverse().compose(pose).log_unchecked().to_vector(), noise)
}

/// Right-multiplies a pose by the shared alignment rotation.
pub fn align(pose: &Pose, shared: &Matrix3<f64>) -> Pose {
    pose.compose(&Pose::from_rotation(*shared))
}

/// Whitened deviation of `next` from the coordinated-turn prediction made
/// from `pose`, both taken through the shared alignment rotation first.
pub fn residual_motion(
    pose: &Pose,
    v: f64,
    kappa: f64,
    next: &Pose,
    shared: &Matrix3<f64>,
    dt: f64,
    noise: &NoiseSpec,
) -> SVector<f64, 6> {
    let predicted = ct_predict(&align(pose, shared), v, kappa, dt);
    let err = predicted.inverse().compose(&align(next, shared));
    whiten6(err.log_unchecked().to_vector(), noise)
}

/// Random-walk processes on the scalar states.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WalkProcess {
    /// Variance rate 0.5 (m/s)² per second.
    Speed,
    /// Variance rate 1e-5 (1/m)² per second.
    Curvature,
}

impl WalkProcess {
    pub fn variance_rate(self) -> f64 {
        match self {
            WalkProcess::Speed => 0.5,
            WalkProcess::Curvature => 1e-5,
        }
    }
}

/// `(next - x) / sqrt(rate * dt)`.
pub fn residual_random_walk(x: f64, next: f64, dt: f64, variance_rate: f64) -> f64 {
    (next - x) / (variance_rate * dt).sqrt()
}

/// Roll and pitch of the aligned pose over their standard deviation.
pub fn residual_attitude_prior(pose: &Pose, shared: &Matrix3<f64>, sigma: f64) -> Result<Vector2<f64>, GeometryError> {
    let (roll, pitch) = align(pose, shared).roll_pitch()?;
    Ok(Vector2::new(roll / sigma, pitch / sigma))
}

pub fn residual_curvature_prior(kappa: f64, sigma: f64) -> f64 {
    kappa / sigma
}

fn whiten6(mut r: SVector<f64, 6>, noise: &NoiseSpec) -> SVector<f64, 6> {
    for (x, s) in r.iter_mut().zip(noise.sigmas()) {
        *x /= s;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FactorKind {
    Measurement { step: usize, measurement: Pose },
    Motion { step: usize },
    SpeedWalk { step: usize },
    CurvatureWalk { step: usize },
    Attitude { step: usize },
    CurvaturePrior { step: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
    pub noise: NoiseSpec,
}

/// A block of the state a factor depends on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Pose(usize),
    Speed(usize),
    Curvature(usize),
    Shared,
}

impl Slot {
    pub fn dim(self) -> usize {
        match self {
            Slot::Pose(_) => 6,
            Slot::Shared => 3,
            Slot::Speed(_) | Slot::Curvature(_) => 1,
        }
    }

    /// Offset of this block in the stacked tangent vector of `steps` timesteps:
    /// `[pose(6) speed curvature]` per step, then the shared rotation.
    pub fn offset(self, steps: usize) -> usize {
        match self {
            Slot::Pose(i) => 8 * i,
            Slot::Speed(i) => 8 * i + 6,
            Slot::Curvature(i) => 8 * i + 7,
            Slot::Shared => 8 * steps,
        }
    }
}

/// Read access to smoother variables, optionally with one coordinate nudged.
pub(crate) trait Vars {
    fn pose(&self, i: usize) -> Pose;
    fn speed(&self, i: usize) -> f64;
    fn curvature(&self, i: usize) -> f64;
    fn shared(&self) -> Matrix3<f64>;
}

impl Vars for SmootherState {
    fn pose(&self, i: usize) -> Pose {
        self.poses[i]
    }

    fn speed(&self, i: usize) -> f64 {
        self.speeds[i]
    }

    fn curvature(&self, i: usize) -> f64 {
        self.curvatures[i]
    }

    fn shared(&self) -> Matrix3<f64> {
        self.shared_rotation
    }
}

/// `base` with coordinate `axis` of `slot` moved by `h` along the manifold.
pub(crate) struct Nudged<'a> {
    pub base: &'a SmootherState,
    pub slot: Slot,
    pub axis: usize,
    pub h: f64,
}

impl Vars for Nudged<'_> {
    fn pose(&self, i: usize) -> Pose {
        let p = self.base.poses[i];
        if self.slot != Slot::Pose(i) {
            return p;
        }
        let mut d = SVector::<f64, 6>::zeros();
        d[self.axis] = self.h;
        p.retract(&crate::geometry::Tangent::from_vector(&d))
    }

    fn speed(&self, i: usize) -> f64 {
        self.base.speeds[i] + if self.slot == Slot::Speed(i) { self.h } else { 0.0 }
    }

    fn curvature(&self, i: usize) -> f64 {
        self.base.curvatures[i] + if self.slot == Slot::Curvature(i) { self.h } else { 0.0 }
    }

    fn shared(&self) -> Matrix3<f64> {
        let r = self.base.shared_rotation;
        if self.slot != Slot::Shared {
            return r;
        }
        let mut w = nalgebra::Vector3::zeros();
        w[self.axis] = self.h;
        r * so3_exp(&w)
    }
}

/// Up to six whitened residual components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residual {
    values: [f64; 6],
    len: usize,
}

impl Residual {
    fn from_slice(v: &[f64]) -> Self {
        let mut values = [0.0; 6];
        values[..v.len()].copy_from_slice(v);
        Self { values, len: v.len() }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.len]
    }

    pub fn norm(&self) -> f64 {
        self.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl Factor {
    pub fn slots(&self) -> Vec<Slot> {
        match self.kind {
            FactorKind::Measurement { step, .. } => vec![Slot::Pose(step)],
            FactorKind::Motion { step } => vec![
                Slot::Pose(step),
                Slot::Speed(step),
                Slot::Curvature(step),
                Slot::Pose(step + 1),
                Slot::Shared,
            ],
            FactorKind::SpeedWalk { step } => vec![Slot::Speed(step), Slot::Speed(step + 1)],
            FactorKind::CurvatureWalk { step } => vec![Slot::Curvature(step), Slot::Curvature(step + 1)],
            FactorKind::Attitude { step } => vec![Slot::Pose(step), Slot::Shared],
            FactorKind::CurvaturePrior { step } => vec![Slot::Curvature(step)],
        }
    }

    /// Whitened residual at `vars`; `timestamps` supply the step lengths.
    pub(crate) fn residual<V: Vars>(&self, vars: &V, timestamps: &[f64]) -> Result<Residual, GeometryError> {
        let dt = |i: usize| timestamps[i + 1] - timestamps[i];
        let sigma = |k: usize| self.noise.sigmas()[k];
        Ok(match self.kind {
            FactorKind::Measurement { step, measurement } => {
                Residual::from_slice(residual_measurement(&vars.pose(step), &measurement, &self.noise).as_slice())
            }
            FactorKind::Motion { step } => Residual::from_slice(
                residual_motion(
                    &vars.pose(step),
                    vars.speed(step),
                    vars.curvature(step),
                    &vars.pose(step + 1),
                    &vars.shared(),
                    dt(step),
                    &self.noise,
                )
                .as_slice(),
            ),
            // Walk noise is stored as a variance rate so sigma follows dt.
            FactorKind::SpeedWalk { step } => Residual::from_slice(&[residual_random_walk(
                vars.speed(step),
                vars.speed(step + 1),
                dt(step),
                sigma(0),
            )]),
            FactorKind::CurvatureWalk { step } => Residual::from_slice(&[residual_random_walk(
                vars.curvature(step),
                vars.curvature(step + 1),
                dt(step),
                sigma(0),
            )]),
            FactorKind::Attitude { step } => {
                Residual::from_slice(residual_attitude_prior(&vars.pose(step), &vars.shared(), sigma(0))?.as_slice())
            }
            FactorKind::CurvaturePrior { step } => {
                Residual::from_slice(&[residual_curvature_prior(vars.curvature(step), sigma(0))])
            }
        })
    }

    /// Robustified cost contribution at `vars`.
    pub(crate) fn cost<V: Vars>(&self, vars: &V, timestamps: &[f64]) -> Result<f64, GeometryError> {
        Ok(self.noise.cost(self.residual(vars, timestamps)?.norm()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorGraph {
    pub timestamps: Vec<f64>,
    pub factors: Vec<Factor>,
}

impl FactorGraph {
    pub fn steps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn tangent_dim(&self) -> usize {
        8 * self.steps() + 3
    }

    /// Total robustified cost; `None` when a residual is undefined (gimbal lock).
    pub fn cost(&self, state: &SmootherState) -> Option<f64> {
        self.factors.iter().map(|f| f.cost(state, &self.timestamps).ok()).sum()
    }

    pub fn measurement_steps(&self) -> Vec<usize> {
        self.factors
            .iter()
            .filter_map(|f| match f.kind {
                FactorKind::Measurement { step, .. } => Some(step),
                _ => None,
            })
            .collect()
    }
}
