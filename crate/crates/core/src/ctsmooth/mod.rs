//! Coordinated-turn trajectory smoothing.
//!
//! Registration yields noisy, gappy absolute poses. [`smooth`] fits a
//! factor graph of pose, speed and curvature states on the frame grid to
//! them, prunes measurements that disagree with the motion model and
//! re-solves.

pub mod factors;
pub mod model;
pub mod solver;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use factors::{
    residual_attitude_prior, residual_curvature_prior, residual_measurement, residual_motion, residual_random_walk,
    Factor, FactorGraph, FactorKind, NoiseSpec, Slot, WalkProcess,
};
pub use model::{ct_increment, ct_predict};
pub use solver::{levenberg_marquardt, LmParams, LmSummary, Problem, SolveError};

use crate::geometry::{project_to_so3, so3_exp, Pose, Tangent};
use crate::ingest::InstanceId;
use crate::register::{MeasuredTrajectory, Measurement};
use factors::Nudged;

const JACOBIAN_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SmootherState {
    pub poses: Vec<Pose>,
    pub speeds: Vec<f64>,
    pub curvatures: Vec<f64>,
    pub shared_rotation: Matrix3<f64>,
}

impl SmootherState {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Applies a stacked tangent update laid out as in [`Slot::offset`].
    pub fn retract(&self, delta: &DVector<f64>) -> SmootherState {
        let n = self.len();
        let poses = self
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = delta.fixed_rows::<6>(8 * i).into_owned();
                p.retract(&Tangent::from_vector(&d))
            })
            .collect();
        let speeds = self
            .speeds
            .iter()
            .enumerate()
            .map(|(i, v)| v + delta[8 * i + 6])
            .collect();
        let curvatures = self
            .curvatures
            .iter()
            .enumerate()
            .map(|(i, k)| k + delta[8 * i + 7])
            .collect();
        let w: Vector3<f64> = delta.fixed_rows::<3>(8 * n).into_owned();
        SmootherState {
            poses,
            speeds,
            curvatures,
            shared_rotation: project_to_so3(&(self.shared_rotation * so3_exp(&w))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherParams {
    pub measurement_rot_sigma: f64,
    pub measurement_trans_sigma: f64,
    pub measurement_huber: Option<f64>,
    pub motion_rot_sigma: f64,
    pub motion_trans_sigma: f64,
    pub speed_variance_rate: f64,
    pub curvature_variance_rate: f64,
    pub attitude_sigma: f64,
    pub curvature_prior_sigma: f64,
    /// Measurements whose unrobustified whitened error exceeds this after the
    /// first pass are dropped.
    pub outlier_threshold: f64,
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub relative_tolerance: f64,
    /// Trajectories whose measured positions all lie closer than this are
    /// treated as static.
    pub static_threshold: f64,
}

impl Default for SmootherParams {
    fn default() -> Self {
        Self {
            measurement_rot_sigma: 0.1,
            measurement_trans_sigma: 0.2,
            measurement_huber: Some(1.0),
            motion_rot_sigma: 0.1,
            motion_trans_sigma: 0.2,
            speed_variance_rate: WalkProcess::Speed.variance_rate(),
            curvature_variance_rate: WalkProcess::Curvature.variance_rate(),
            attitude_sigma: 0.4,
            curvature_prior_sigma: 0.01,
            outlier_threshold: 1.345,
            max_iterations: 10,
            initial_lambda: 1e-4,
            relative_tolerance: 1e-6,
            static_threshold: 1.0,
        }
    }
}

impl SmootherParams {
    fn lm(&self) -> LmParams {
        LmParams {
            max_iterations: self.max_iterations,
            initial_lambda: self.initial_lambda,
            relative_tolerance: self.relative_tolerance,
            ..LmParams::default()
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SmoothError {
    #[error("no measurements to smooth")]
    NoMeasurements,
    #[error("timestep grid must be non-empty and strictly increasing")]
    InvalidGrid,
    #[error("invalid noise parameters")]
    InvalidNoise,
    #[error("outlier pruning rejected all {rejected} measurements")]
    AllMeasurementsRejected { rejected: usize },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedTrajectory {
    pub id: InstanceId,
    pub timestamps: Vec<f64>,
    pub state: SmootherState,
    /// Whether a measurement was available at each timestep.
    pub measured: Vec<bool>,
    /// Timestamps whose measurements were pruned as outliers.
    pub rejected: Vec<f64>,
    pub is_static: bool,
    pub final_cost: f64,
}

impl SmoothedTrajectory {
    pub fn positions(&self) -> impl Iterator<Item = (f64, Vector3<f64>)> + '_ {
        self.timestamps
            .iter()
            .zip(&self.state.poses)
            .map(|(&t, p)| (t, *p.translation()))
    }
}

/// True iff every pair of measured positions lies closer than `threshold`.
pub fn classify_static(measurements: &[Measurement], threshold: f64) -> bool {
    measurements.iter().enumerate().all(|(i, a)| {
        measurements[i + 1..]
            .iter()
            .all(|b| (a.pose.translation() - b.pose.translation()).norm() < threshold)
    })
}

/// Stacks the factors for `grid` with measurements attached at `steps`.
pub fn build_graph(
    grid: &[f64],
    measurements: &[(usize, Pose)],
    params: &SmootherParams,
) -> Result<FactorGraph, SmoothError> {
    let noise = |n: Option<NoiseSpec>| n.ok_or(SmoothError::InvalidNoise);
    let meas_noise = noise(NoiseSpec::pose(
        params.measurement_rot_sigma,
        params.measurement_trans_sigma,
        params.measurement_huber,
    ))?;
    let motion_noise = noise(NoiseSpec::pose(
        params.motion_rot_sigma,
        params.motion_trans_sigma,
        None,
    ))?;
    let speed_noise = noise(NoiseSpec::new(vec![params.speed_variance_rate], None))?;
    let curvature_noise = noise(NoiseSpec::new(vec![params.curvature_variance_rate], None))?;
    let attitude_noise = noise(NoiseSpec::new(vec![params.attitude_sigma; 2], None))?;
    let curvature_prior_noise = noise(NoiseSpec::new(vec![params.curvature_prior_sigma], None))?;

    let mut factors = Vec::new();
    for &(step, measurement) in measurements {
        factors.push(Factor {
            kind: FactorKind::Measurement { step, measurement },
            noise: meas_noise.clone(),
        });
    }
    for step in 0..grid.len() {
        if step + 1 < grid.len() {
            factors.push(Factor {
                kind: FactorKind::Motion { step },
                noise: motion_noise.clone(),
            });
            factors.push(Factor {
                kind: FactorKind::SpeedWalk { step },
                noise: speed_noise.clone(),
            });
            factors.push(Factor {
                kind: FactorKind::CurvatureWalk { step },
                noise: curvature_noise.clone(),
            });
        }
        factors.push(Factor {
            kind: FactorKind::Attitude { step },
            noise: attitude_noise.clone(),
        });
        factors.push(Factor {
            kind: FactorKind::CurvaturePrior { step },
            noise: curvature_prior_noise.clone(),
        });
    }
    Ok(FactorGraph {
        timestamps: grid.to_vec(),
        factors,
    })
}

/// Central-difference Jacobian of one factor's whitened residual with
/// respect to its slots, columns in slot order. `None` if any evaluation
/// hits an undefined residual.
pub fn factor_jacobian(factor: &Factor, graph: &FactorGraph, state: &SmootherState) -> Option<DMatrix<f64>> {
    let slots = factor.slots();
    let m = factor.residual(state, &graph.timestamps).ok()?.as_slice().len();
    let k: usize = slots.iter().map(|s| s.dim()).sum();
    let mut jac = DMatrix::zeros(m, k);
    let mut col = 0;
    for &slot in &slots {
        for axis in 0..slot.dim() {
            let eval = |h: f64| {
                let nudged = Nudged {
                    base: state,
                    slot,
                    axis,
                    h,
                };
                factor.residual(&nudged, &graph.timestamps).ok()
            };
            let (plus, minus) = (eval(JACOBIAN_STEP)?, eval(-JACOBIAN_STEP)?);
            for (r, (a, b)) in plus.as_slice().iter().zip(minus.as_slice()).enumerate() {
                jac[(r, col)] = (a - b) / (2.0 * JACOBIAN_STEP);
            }
            col += 1;
        }
    }
    Some(jac)
}

impl Problem for FactorGraph {
    type State = SmootherState;

    fn cost(&self, state: &SmootherState) -> Option<f64> {
        FactorGraph::cost(self, state)
    }

    fn normal_equations(&self, state: &SmootherState) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.tangent_dim();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for factor in &self.factors {
            let Ok(r) = factor.residual(state, &self.timestamps) else {
                continue;
            };
            let Some(jac) = factor_jacobian(factor, self, state) else {
                continue;
            };
            let w = factor.noise.weight(r.norm());
            let r = DVector::from_column_slice(r.as_slice());
            let local_h = jac.transpose() * &jac * w;
            let local_g = jac.transpose() * r * w;
            let index: Vec<usize> = factor
                .slots()
                .iter()
                .flat_map(|s| {
                    let o = s.offset(self.steps());
                    o..o + s.dim()
                })
                .collect();
            for (a, &ia) in index.iter().enumerate() {
                g[ia] += local_g[a];
                for (b, &ib) in index.iter().enumerate() {
                    h[(ia, ib)] += local_h[(a, b)];
                }
            }
        }
        (h, g)
    }

    fn retract(&self, state: &SmootherState, delta: &DVector<f64>) -> SmootherState {
        state.retract(delta)
    }

    fn solve_damped(&self, h: &DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
        solve_arrowhead(h, g, lambda, 8 * self.steps(), 15)
    }
}

/// Solves `(H + λI) x = g` for a matrix that is banded (half-bandwidth
/// `band`) in its leading `banded` rows and dense in the remaining border.
fn solve_arrowhead(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lambda: f64,
    banded: usize,
    band: usize,
) -> Option<DVector<f64>> {
    let n = h.nrows();
    let border = n - banded;
    let mut a = h.view((0, 0), (banded, banded)).into_owned();
    for i in 0..banded {
        a[(i, i)] += lambda;
    }
    let factor = BandCholesky::new(a, band)?;
    let c = h.view((0, banded), (banded, border)).into_owned();
    let mut d = h.view((banded, banded), (border, border)).into_owned();
    for i in 0..border {
        d[(i, i)] += lambda;
    }
    let g1 = g.rows(0, banded).into_owned();
    let g2 = g.rows(banded, border).into_owned();

    let y = factor.solve(&DMatrix::from_column_slice(banded, 1, g1.as_slice()));
    let x = factor.solve(&c);
    let schur = d - c.transpose() * &x;
    let rhs = g2 - c.transpose() * &y;
    let z = schur.cholesky()?.solve(&rhs);
    let top = y.column(0) - &x * &z;

    let mut out = DVector::zeros(n);
    out.rows_mut(0, banded).copy_from(&top);
    out.rows_mut(banded, border).copy_from(&z);
    Some(out)
}

/// Cholesky factor of a symmetric positive definite band matrix.
struct BandCholesky {
    l: DMatrix<f64>,
    band: usize,
}

impl BandCholesky {
    fn new(mut a: DMatrix<f64>, band: usize) -> Option<Self> {
        let n = a.nrows();
        for j in 0..n {
            let lo = j.saturating_sub(band);
            let mut diag = a[(j, j)];
            for k in lo..j {
                diag -= a[(j, k)] * a[(j, k)];
            }
            if !diag.is_finite() || diag <= 0.0 {
                return None;
            }
            let diag = diag.sqrt();
            a[(j, j)] = diag;
            for i in j + 1..(j + band + 1).min(n) {
                let mut s = a[(i, j)];
                for k in i.saturating_sub(band).max(lo)..j {
                    s -= a[(i, k)] * a[(j, k)];
                }
                a[(i, j)] = s / diag;
            }
        }
        Some(Self { l: a, band })
    }

    fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.l.nrows();
        let mut x = b.clone();
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in i.saturating_sub(self.band)..i {
                    s -= self.l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in i + 1..(i + self.band + 1).min(n) {
                    s -= self.l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
        }
        x
    }
}

/// Initial states: measured poses, gaps interpolated between the bracketing
/// measurements and extrapolated at constant velocity past the ends.
pub fn initial_state(grid: &[f64], measurements: &[(usize, Pose)]) -> SmootherState {
    let n = grid.len();
    let mut poses = Vec::with_capacity(n);
    for (i, &t) in grid.iter().enumerate() {
        let next = measurements.partition_point(|&(s, _)| s < i);
        let pose = match (next.checked_sub(1).map(|p| measurements[p]), measurements.get(next)) {
            (_, Some(&(s, p))) if s == i => p,
            (Some((sa, a)), Some(&(sb, b))) => a.interpolate(&b, (t - grid[sa]) / (grid[sb] - grid[sa])),
            (None, Some(&(sb, b))) => extrapolate(grid, measurements.get(1).copied(), (sb, b), t),
            (Some((sa, a)), None) => {
                let before = (measurements.len() >= 2).then(|| measurements[measurements.len() - 2]);
                extrapolate(grid, before, (sa, a), t)
            }
            (None, None) => Pose::identity(),
        };
        poses.push(pose);
    }

    let mut speeds: Vec<f64> = poses
        .windows(2)
        .zip(grid.windows(2))
        .map(|(p, t)| (p[1].translation() - p[0].translation()).norm() / (t[1] - t[0]))
        .collect();
    speeds.push(speeds.last().copied().unwrap_or(0.0));

    let shared_rotation = initial_alignment(&poses);
    SmootherState {
        poses,
        speeds,
        curvatures: vec![0.0; n],
        shared_rotation,
    }
}

fn extrapolate(grid: &[f64], other: Option<(usize, Pose)>, (s, anchor): (usize, Pose), t: f64) -> Pose {
    match other {
        Some((o, p)) if o != s => p.interpolate(&anchor, (t - grid[o]) / (grid[s] - grid[o])),
        _ => anchor,
    }
}

/// Rotation taking the first pose's frame to one whose +x axis points along
/// the first displacement of at least a meter (or the overall displacement).
fn initial_alignment(poses: &[Pose]) -> Matrix3<f64> {
    let Some(first) = poses.first() else {
        return Matrix3::identity();
    };
    let start = first.translation();
    let direction = poses
        .iter()
        .map(|p| p.translation() - start)
        .find(|d| d.xy().norm() >= 1.0)
        .or_else(|| poses.last().map(|p| p.translation() - start))
        .filter(|d| d.xy().norm() > 0.0);
    match direction {
        Some(d) => first.rotation().transpose() * Pose::rot_z(d.y.atan2(d.x)).rotation(),
        None => Matrix3::identity(),
    }
}

/// Maps measurements onto grid indices. Measurements farther than half a
/// step from every grid time are dropped.
fn attach(grid: &[f64], measurements: &[Measurement]) -> Vec<(usize, Pose)> {
    let mut out: Vec<(usize, Pose)> = Vec::new();
    for m in measurements {
        let i = grid.partition_point(|&t| t < m.timestamp);
        let candidates = [i.checked_sub(1), (i < grid.len()).then_some(i)];
        let best = candidates
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (grid[a] - m.timestamp).abs().total_cmp(&(grid[b] - m.timestamp).abs()));
        let Some(step) = best else { continue };
        let half_step = grid
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
            .min(1.0)
            / 2.0;
        if (grid[step] - m.timestamp).abs() > half_step {
            log::warn!("measurement at t={} is off the timestep grid", m.timestamp);
            continue;
        }
        if out.iter().all(|&(s, _)| s != step) {
            out.push((step, m.pose));
        }
    }
    out.sort_by_key(|&(s, _)| s);
    out
}

/// Pose held by a static object: the best-fitting measurement (earliest on
/// ties).
fn static_pose(measurements: &[Measurement]) -> Pose {
    measurements
        .iter()
        .fold(None::<&Measurement>, |best, m| match best {
            Some(b) if b.fitness >= m.fitness => Some(b),
            _ => Some(m),
        })
        .map(|m| m.pose)
        .unwrap_or_else(Pose::identity)
}

pub fn smooth(
    traj: &MeasuredTrajectory,
    grid: &[f64],
    params: &SmootherParams,
) -> Result<SmoothedTrajectory, SmoothError> {
    smooth_measurements(traj.id, &traj.measurements, grid, params)
}

/// Two-pass robust smoothing of `measurements` over `grid`.
pub fn smooth_measurements(
    id: InstanceId,
    measurements: &[Measurement],
    grid: &[f64],
    params: &SmootherParams,
) -> Result<SmoothedTrajectory, SmoothError> {
    if grid.is_empty()
        || grid
            .windows(2)
            .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
    {
        return Err(SmoothError::InvalidGrid);
    }
    let attached = attach(grid, measurements);
    if attached.is_empty() {
        return Err(SmoothError::NoMeasurements);
    }
    let mut measured = vec![false; grid.len()];
    for &(s, _) in &attached {
        measured[s] = true;
    }

    if classify_static(measurements, params.static_threshold) {
        let pose = static_pose(measurements);
        return Ok(SmoothedTrajectory {
            id,
            timestamps: grid.to_vec(),
            state: SmootherState {
                poses: vec![pose; grid.len()],
                speeds: vec![0.0; grid.len()],
                curvatures: vec![0.0; grid.len()],
                shared_rotation: Matrix3::identity(),
            },
            measured,
            rejected: Vec::new(),
            is_static: true,
            final_cost: 0.0,
        });
    }

    let lm = params.lm();
    let graph = build_graph(grid, &attached, params)?;
    let (first, _) = levenberg_marquardt(&graph, initial_state(grid, &attached), &lm)?;

    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for factor in &graph.factors {
        let FactorKind::Measurement { step, measurement } = factor.kind else {
            continue;
        };
        let error = residual_measurement(&first.poses[step], &measurement, &factor.noise).norm();
        if error > params.outlier_threshold {
            rejected.push(grid[step]);
        } else {
            kept.push((step, measurement));
        }
    }
    if kept.is_empty() {
        return Err(SmoothError::AllMeasurementsRejected {
            rejected: rejected.len(),
        });
    }
    log::debug!(
        "instance {id}: rejected {} of {} measurements",
        rejected.len(),
        attached.len()
    );

    let pruned = build_graph(grid, &kept, params)?;
    let (state, summary) = levenberg_marquardt(&pruned, first, &lm)?;
    Ok(SmoothedTrajectory {
        id,
        timestamps: grid.to_vec(),
        state,
        measured,
        rejected,
        is_static: false,
        final_cost: summary.final_cost,
    })
}
