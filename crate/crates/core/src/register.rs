//! Per-frame pose estimation by RANSAC registration against a growing
//! canonical point set.
//!
//! The canonical frame of an instance is anchored at the axis-aligned
//! bounding-box center of its densest observation. Every other observation
//! is registered to the canonical points (densest first); the estimated
//! relative motion `T_rel` maps the canonical points as seen at the anchor
//! time onto the new frame, and the world pose of the instance becomes
//! `T_rel ∘ T_init`. Registered points are pulled back into the canonical
//! frame and merged.

use nalgebra::{DMatrix, Vector3};
use rand::seq::index::sample;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{umeyama, GeometryError, Pose};
use crate::ingest::{Descriptor, InstanceId, InstanceObservation};
use crate::spatial::PointIndex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegisterError {
    #[error("no observations to build a canonical frame from")]
    NoObservations,
    #[error("no correspondence above the similarity threshold")]
    NoMatches,
    #[error("descriptor dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// Why a single frame could not be registered.
#[derive(Debug, Error, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RegistrationFailure {
    #[error("no feature matches")]
    NoMatches,
    #[error("best fitness {fitness} does not exceed the threshold")]
    BelowFitness { fitness: f64 },
    #[error("every sampled hypothesis was degenerate")]
    DegenerateAllIterations,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationParams {
    /// Upper bound on RANSAC iterations.
    pub iterations: usize,
    /// Matches need cosine similarity strictly above this.
    pub min_similarity: f64,
    /// Structural-inlier radius in meters.
    pub inlier_radius: f64,
    /// Registration succeeds when fitness strictly exceeds this.
    pub fitness_threshold: f64,
    /// Both clouds are subsampled to at most this many points.
    pub max_points: usize,
    /// Stop early once a better hypothesis is this unlikely to exist
    /// (standard RANSAC stopping rule on the correspondence inlier ratio).
    /// 1.0 always runs the full iteration budget.
    pub confidence: f64,
    /// Resamples allowed per iteration when the 3-point sample is degenerate.
    pub degenerate_retries: usize,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            min_similarity: 0.8,
            inlier_radius: 0.1,
            fitness_threshold: 0.5,
            max_points: 5000,
            confidence: 0.999,
            degenerate_retries: 10,
        }
    }
}

/// Merged point set of one instance, expressed in its canonical frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalInstance {
    pub id: InstanceId,
    pub points: Vec<Vector3<f64>>,
    pub descriptors: Vec<Descriptor>,
    pub init_time: f64,
    /// World-from-canonical pose at `init_time`: identity rotation, translation `center`.
    pub init_pose: Pose,
    pub center: Vector3<f64>,
}

impl CanonicalInstance {
    /// Canonical points placed in the world at the anchor time.
    pub fn anchored_points(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| self.init_pose.transform_point(p)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub similarity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Registration {
    /// Rigid motion from the anchor frame to the target frame.
    pub relative: Pose,
    pub fitness: f64,
    pub inliers: usize,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub timestamp: f64,
    /// World-from-canonical pose.
    pub pose: Pose,
    pub fitness: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasuredTrajectory {
    pub id: InstanceId,
    pub init_time: f64,
    /// Sorted by timestamp.
    pub measurements: Vec<Measurement>,
    pub canonical: CanonicalInstance,
    pub failures: Vec<(f64, RegistrationFailure)>,
}

impl MeasuredTrajectory {
    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.measurements.iter().map(|m| &m.pose)
    }

    /// Moves the canonical origin to the bounding-box center of the merged
    /// cloud. The anchor frame alone sees the object partially, so its box
    /// center sits off the object center; the merged cloud covers more.
    /// Poses change by a constant body-frame offset and stay consistent
    /// with the shifted points.
    pub fn recentered(&self) -> MeasuredTrajectory {
        let Some((lo, hi)) = bounds(&self.canonical.points) else {
            return self.clone();
        };
        let c = (lo + hi) / 2.0;
        let shift = Pose::from_translation(c);
        let mut out = self.clone();
        for m in &mut out.measurements {
            m.pose = m.pose.compose(&shift);
        }
        out.canonical.points.iter_mut().for_each(|p| *p -= c);
        out.canonical.init_pose = self.canonical.init_pose.compose(&shift);
        out.canonical.center = *out.canonical.init_pose.translation();
        out
    }
}

fn bounds(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, Vector3<f64>)> {
    if points.is_empty() {
        return None;
    }
    Some(points.iter().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    ))
}

/// Anchors the canonical frame at the densest observation (earliest on ties).
pub fn init_canonical(obs: &[InstanceObservation]) -> Result<CanonicalInstance, RegisterError> {
    let densest = obs
        .iter()
        .filter(|o| !o.is_empty())
        .min_by(|a, b| b.len().cmp(&a.len()).then(a.timestamp.total_cmp(&b.timestamp)))
        .ok_or(RegisterError::NoObservations)?;
    let (lo, hi) = bounds(&densest.points).expect("observation is non-empty");
    let center = (lo + hi) / 2.0;
    Ok(CanonicalInstance {
        id: densest.id,
        points: densest.points.iter().map(|p| p - center).collect(),
        descriptors: densest.descriptors.clone(),
        init_time: densest.timestamp,
        init_pose: Pose::from_translation(center),
        center,
    })
}

/// For each target descriptor, its most similar source descriptor (lowest
/// index on ties), kept when the cosine similarity exceeds `min_sim`.
pub fn match_descriptors(
    source: &[Descriptor],
    target: &[Descriptor],
    min_sim: f64,
) -> Result<Vec<Correspondence>, RegisterError> {
    if source.is_empty() || target.is_empty() {
        return Err(RegisterError::NoMatches);
    }
    let dim = source[0].dim();
    if let Some(d) = source.iter().chain(target).map(Descriptor::dim).find(|&d| d != dim) {
        return Err(RegisterError::DimensionMismatch(dim, d));
    }
    let src = DMatrix::from_fn(dim, source.len(), |r, c| source[c].as_slice()[r]);
    let src_t = src.transpose();

    const BLOCK: usize = 256;
    let mut out = Vec::new();
    for start in (0..target.len()).step_by(BLOCK) {
        let len = BLOCK.min(target.len() - start);
        let tgt = DMatrix::from_fn(dim, len, |r, c| target[start + c].as_slice()[r]);
        // sims[(s, t)] = <source s, target t>
        let sims = &src_t * &tgt;
        for t in 0..len {
            let col = sims.column(t);
            let mut best = 0;
            for s in 1..col.len() {
                if col[s] > col[best] {
                    best = s;
                }
            }
            if col[best] > min_sim {
                out.push(Correspondence {
                    source: best,
                    target: start + t,
                    similarity: col[best],
                });
            }
        }
    }
    if out.is_empty() {
        return Err(RegisterError::NoMatches);
    }
    Ok(out)
}

pub fn match_features(
    src: &CanonicalInstance,
    dst: &InstanceObservation,
    min_sim: f64,
) -> Result<Vec<Correspondence>, RegisterError> {
    match_descriptors(&src.descriptors, &dst.descriptors, min_sim)
}

/// Fraction of `dst` points that, mapped back through `transform⁻¹`, lie
/// within `radius` of some `src` point.
pub fn fitness(src: &[Vector3<f64>], dst: &[Vector3<f64>], transform: &Pose, radius: f64) -> f64 {
    if dst.is_empty() {
        return 0.0;
    }
    let index = PointIndex::new(src);
    structural_inliers(&index, dst, &transform.inverse(), radius, 0) as f64 / dst.len() as f64
}

/// Counts target points with a source neighbor within `radius` after
/// applying `to_source`. Gives up early (returning a value `<= floor`) once
/// the count can no longer exceed `floor`.
fn structural_inliers(src: &PointIndex, dst: &[Vector3<f64>], to_source: &Pose, radius: f64, floor: usize) -> usize {
    let mut count = 0;
    for (i, p) in dst.iter().enumerate() {
        if src.any_within(&to_source.transform_point(p), radius) {
            count += 1;
        } else if count + (dst.len() - i - 1) <= floor {
            return count;
        }
    }
    count
}

fn subsample<T: Clone>(items: &[T], max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if items.len() <= max {
        return (0..items.len()).collect();
    }
    let mut idx = sample(rng, items.len(), max).into_vec();
    idx.sort_unstable();
    idx
}

/// Registers an observation to the canonical set with RANSAC over feature
/// correspondences, each hypothesis fitted by Umeyama on three samples.
///
/// The hypothesis with the most structural inliers wins (earliest on ties).
/// Its consensus set is then refitted in one least-squares step, kept only
/// if it does not lose structural inliers.
pub fn ransac_register(
    src: &CanonicalInstance,
    dst: &InstanceObservation,
    params: &RegistrationParams,
    seed: u64,
) -> Result<Registration, RegistrationFailure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src_world = src.anchored_points();
    let src_idx = subsample(&src_world, params.max_points, &mut rng);
    let dst_idx = subsample(&dst.points, params.max_points, &mut rng);
    let src_pts: Vec<Vector3<f64>> = src_idx.iter().map(|&i| src_world[i]).collect();
    let dst_pts: Vec<Vector3<f64>> = dst_idx.iter().map(|&i| dst.points[i]).collect();
    let src_desc: Vec<Descriptor> = src_idx.iter().map(|&i| src.descriptors[i].clone()).collect();
    let dst_desc: Vec<Descriptor> = dst_idx.iter().map(|&i| dst.descriptors[i].clone()).collect();

    let corr =
        match_descriptors(&src_desc, &dst_desc, params.min_similarity).map_err(|_| RegistrationFailure::NoMatches)?;
    if corr.len() < 3 {
        return Err(RegistrationFailure::DegenerateAllIterations);
    }

    let index = PointIndex::new(&src_pts);
    let radius = params.inlier_radius;
    let consensus = |t: &Pose| -> Vec<usize> {
        (0..corr.len())
            .filter(|&k| (t.transform_point(&src_pts[corr[k].source]) - dst_pts[corr[k].target]).norm() <= radius)
            .collect()
    };

    let mut best: Option<(Pose, usize)> = None;
    let mut budget = params.iterations;
    let mut iter = 0;
    while iter < budget {
        iter += 1;
        let mut hypothesis = None;
        for _ in 0..=params.degenerate_retries {
            let pick = sample(&mut rng, corr.len(), 3);
            let s: Vec<_> = pick.iter().map(|k| src_pts[corr[k].source]).collect();
            let d: Vec<_> = pick.iter().map(|k| dst_pts[corr[k].target]).collect();
            match umeyama(&s, &d) {
                Ok(t) => {
                    hypothesis = Some(t);
                    break;
                }
                Err(GeometryError::DegenerateConfiguration) => continue,
                Err(_) => break,
            }
        }
        let Some(t) = hypothesis else {
            continue;
        };
        let floor = best.map_or(0, |(_, n)| n);
        let inliers = structural_inliers(&index, &dst_pts, &t.inverse(), radius, floor);
        if best.is_none() || inliers > floor {
            best = Some((t, inliers));
            let w = consensus(&t).len() as f64 / corr.len() as f64;
            budget = budget.min(required_iterations(w, params.confidence, params.iterations));
        }
    }

    let (mut pose, mut inliers) = best.ok_or(RegistrationFailure::DegenerateAllIterations)?;
    let support = consensus(&pose);
    if support.len() >= 3 {
        let s: Vec<_> = support.iter().map(|&k| src_pts[corr[k].source]).collect();
        let d: Vec<_> = support.iter().map(|&k| dst_pts[corr[k].target]).collect();
        if let Ok(refit) = umeyama(&s, &d) {
            let n = structural_inliers(&index, &dst_pts, &refit.inverse(), radius, 0);
            if n >= inliers {
                pose = refit;
                inliers = n;
            }
        }
    }

    let fitness = inliers as f64 / dst_pts.len() as f64;
    if fitness > params.fitness_threshold {
        Ok(Registration {
            relative: pose,
            fitness,
            inliers,
            iterations: iter,
        })
    } else {
        Err(RegistrationFailure::BelowFitness { fitness })
    }
}

/// Iterations needed to draw one all-inlier triple with probability
/// `confidence` given inlier ratio `w`.
fn required_iterations(w: f64, confidence: f64, cap: usize) -> usize {
    if confidence >= 1.0 || w <= 0.0 {
        return cap;
    }
    let good = w.powi(3);
    if good >= 1.0 {
        return 1;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// SplitMix64 step, used to derive independent per-frame seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Registers every observation of one instance and assembles its measured
/// trajectory. Frames that fail registration leave gaps.
pub fn build_trajectory(
    obs: &[InstanceObservation],
    params: &RegistrationParams,
    seed: u64,
) -> Result<MeasuredTrajectory, RegisterError> {
    let mut canonical = init_canonical(obs)?;
    let init_pose = canonical.init_pose;
    let mut measurements = vec![Measurement {
        timestamp: canonical.init_time,
        pose: init_pose,
        fitness: 1.0,
    }];
    let mut failures = Vec::new();

    let mut rest: Vec<&InstanceObservation> = obs
        .iter()
        .filter(|o| !o.is_empty() && o.timestamp != canonical.init_time)
        .collect();
    rest.sort_by(|a, b| b.len().cmp(&a.len()).then(a.timestamp.total_cmp(&b.timestamp)));

    for o in rest {
        match ransac_register(&canonical, o, params, mix_seed(seed, o.timestamp.to_bits())) {
            Ok(reg) => {
                let pose = reg.relative.compose(&init_pose);
                let back = pose.inverse();
                canonical
                    .points
                    .extend(o.points.iter().map(|p| back.transform_point(p)));
                canonical.descriptors.extend(o.descriptors.iter().cloned());
                measurements.push(Measurement {
                    timestamp: o.timestamp,
                    pose,
                    fitness: reg.fitness,
                });
            }
            Err(e) => {
                log::debug!("instance {} t={}: {e}", canonical.id, o.timestamp);
                failures.push((o.timestamp, e));
            }
        }
    }
    measurements.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    failures.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(MeasuredTrajectory {
        id: canonical.id,
        init_time: canonical.init_time,
        measurements,
        canonical,
        failures,
    })
}

/// Uniformly random rotation-and-translation used by tests and generators.
pub fn random_pose(rng: &mut ChaCha8Rng, max_angle: f64, max_shift: f64) -> Pose {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let angle = rng.random_range(-max_angle..max_angle);
    let t = Vector3::new(
        rng.random_range(-max_shift..max_shift),
        rng.random_range(-max_shift..max_shift),
        rng.random_range(-max_shift..max_shift),
    );
    Pose::new(*Pose::from_axis_angle(axis, angle).rotation(), t)
}
