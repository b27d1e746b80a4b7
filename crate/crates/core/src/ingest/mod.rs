//! Lifting 2D instance masks to labeled 3D instance points.
//!
//! Lidar points are projected into a calibrated pinhole camera. A point
//! belongs to instance `z` when it lands inside `z`'s eroded mask, lies in
//! front of the camera and is within range of the lidar origin. Each
//! instance's points are then reduced to their largest DBSCAN cluster.

mod dbscan;
mod mask;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;

pub use dbscan::{cluster_sizes, dbscan, NOISE};
pub use mask::{InstanceMask, RleMask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("instance id 0 is reserved for the static background")]
    BackgroundId,
    #[error("mask has {got} pixels, expected {expected}")]
    MaskSize { expected: usize, got: usize },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("{points} points but {descriptors} descriptors")]
    DescriptorCount { points: usize, descriptors: usize },
    #[error("descriptor {index} has zero norm")]
    ZeroDescriptor { index: usize },
    #[error("every point of the observation is DBSCAN noise")]
    AllNoise,
}

/// Object instance identifier; 0 denotes the static background.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub u32);

impl InstanceId {
    pub const BACKGROUND: InstanceId = InstanceId(0);

    pub fn is_background(self) -> bool {
        self.0 == 0
    }
}

impl std::fmt::Display for InstanceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-point appearance feature with unit L2 norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor(Vec<f64>);

impl Descriptor {
    /// Normalizes `values` to unit length; `None` for a zero vector.
    pub fn new(values: Vec<f64>) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        Some(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &Descriptor) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Pinhole camera. The extrinsic maps world coordinates into the camera
/// frame (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    intrinsics: Matrix3<f64>,
    extrinsic: Pose,
    width: u32,
    height: u32,
}

impl CameraModel {
    pub fn new(intrinsics: Matrix3<f64>, extrinsic: Pose, width: u32, height: u32) -> Result<Self, IngestError> {
        let (fx, fy) = (intrinsics[(0, 0)], intrinsics[(1, 1)]);
        let (cx, cy) = (intrinsics[(0, 2)], intrinsics[(1, 2)]);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(IngestError::InvalidCamera(format!(
                "focal lengths must be positive, got ({fx}, {fy})"
            )));
        }
        if !(0.0..=width as f64).contains(&cx) || !(0.0..=height as f64).contains(&cy) {
            return Err(IngestError::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            intrinsics,
            extrinsic,
            width,
            height,
        })
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn extrinsic(&self) -> &Pose {
        &self.extrinsic
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Pixel coordinates `(u, v)` and camera-frame depth of a world point.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        let pc = self.extrinsic.transform_point(p);
        let h = self.intrinsics * pc;
        (h.x / h.z, h.y / h.z, pc.z)
    }

    /// Integer pixel hit by a world point, if it lies in front of the camera
    /// and inside the image. Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`.
    pub fn pixel(&self, p: &Vector3<f64>) -> Option<(u32, u32)> {
        let (u, v, depth) = self.project(p);
        if depth.is_nan() || depth <= 0.0 || !u.is_finite() || !v.is_finite() {
            return None;
        }
        let (x, y) = (u.floor(), v.floor());
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        Some((x as u32, y as u32))
    }
}

/// One lidar sweep in world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct LidarFrame {
    pub timestamp: f64,
    /// Sensor origin in the world frame; the range gate is measured from here.
    pub origin: Vector3<f64>,
    points: Vec<Vector3<f64>>,
    descriptors: Vec<Descriptor>,
}

impl LidarFrame {
    /// Builds a frame, normalizing descriptors to unit length.
    pub fn new(
        timestamp: f64,
        origin: Vector3<f64>,
        points: Vec<Vector3<f64>>,
        raw_descriptors: Vec<Vec<f64>>,
    ) -> Result<Self, IngestError> {
        if points.len() != raw_descriptors.len() {
            return Err(IngestError::DescriptorCount {
                points: points.len(),
                descriptors: raw_descriptors.len(),
            });
        }
        let descriptors = raw_descriptors
            .into_iter()
            .enumerate()
            .map(|(index, d)| Descriptor::new(d).ok_or(IngestError::ZeroDescriptor { index }))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            timestamp,
            origin,
            points,
            descriptors,
        })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn descriptors(&self) -> &[Descriptor] {
        &self.descriptors
    }
}

/// One instance's points in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceObservation {
    pub id: InstanceId,
    pub timestamp: f64,
    pub points: Vec<Vector3<f64>>,
    pub descriptors: Vec<Descriptor>,
}

impl InstanceObservation {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn subset(&self, keep: impl Iterator<Item = usize>) -> InstanceObservation {
        let (points, descriptors) = keep.map(|i| (self.points[i], self.descriptors[i].clone())).unzip();
        InstanceObservation {
            id: self.id,
            timestamp: self.timestamp,
            points,
            descriptors,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftParams {
    /// Mask erosion radius in pixels.
    pub erosion_radius: u32,
    /// Lidar range gate in meters.
    pub max_range: f64,
}

impl Default for LiftParams {
    fn default() -> Self {
        Self {
            erosion_radius: 3,
            max_range: 80.0,
        }
    }
}

/// Assigns lidar points to instances through one camera's masks.
///
/// Where eroded masks overlap, the lowest instance id wins. Points in no
/// mask are background and are dropped. Instances that receive no points
/// produce no observation; the rest come back sorted by id.
pub fn lift_instance_points(
    frame: &LidarFrame,
    masks: &[InstanceMask],
    cam: &CameraModel,
    params: &LiftParams,
) -> Vec<InstanceObservation> {
    if masks.is_empty() {
        return Vec::new();
    }
    let mut eroded: Vec<InstanceMask> = masks.iter().map(|m| m.eroded(params.erosion_radius)).collect();
    eroded.sort_by_key(|m| m.id);

    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); eroded.len()];
    for (i, p) in frame.points.iter().enumerate() {
        if (p - frame.origin).norm() > params.max_range {
            continue;
        }
        let Some((x, y)) = cam.pixel(p) else {
            continue;
        };
        if let Some(k) = eroded.iter().position(|m| m.get(x as i64, y as i64)) {
            buckets[k].push(i);
        }
    }

    eroded
        .iter()
        .zip(buckets)
        .filter(|(_, idx)| !idx.is_empty())
        .map(|(m, idx)| InstanceObservation {
            id: m.id,
            timestamp: frame.timestamp,
            points: idx.iter().map(|&i| frame.points[i]).collect(),
            descriptors: idx.iter().map(|&i| frame.descriptors[i].clone()).collect(),
        })
        .collect()
}

/// Keeps only the most populous DBSCAN cluster (ties go to the lower label).
pub fn keep_largest_cluster(
    obs: &InstanceObservation,
    eps: f64,
    min_pts: usize,
) -> Result<InstanceObservation, IngestError> {
    let labels = dbscan(&obs.points, eps, min_pts);
    let sizes = cluster_sizes(&labels);
    let best = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l as i32)
        .ok_or(IngestError::AllNoise)?;
    Ok(obs.subset((0..obs.len()).filter(|&i| labels[i] == best)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn camera() -> CameraModel {
        // Looking along world +x: camera z = world x, camera x = -world y,
        // camera y = -world z.
        #[rustfmt::skip]
        let r = Matrix3::new(
            0.0, -1.0, 0.0,
            0.0, 0.0, -1.0,
            1.0, 0.0, 0.0,
        );
        let k = Matrix3::new(100.0, 0.0, 50.0, 0.0, 100.0, 40.0, 0.0, 0.0, 1.0);
        CameraModel::new(k, Pose::new(r, Vector3::zeros()), 100, 80).unwrap()
    }

    fn mask_box(id: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> InstanceMask {
        let mut m = InstanceMask::empty(InstanceId(id), "car", 0.0, 100, 80);
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(x, y, true);
            }
        }
        m
    }

    fn frame(points: Vec<Vector3<f64>>) -> LidarFrame {
        let d = (0..points.len()).map(|i| vec![1.0, i as f64]).collect();
        LidarFrame::new(0.0, Vector3::zeros(), points, d).unwrap()
    }

    #[test]
    fn no_masks_no_observations() {
        let f = frame(vec![Vector3::new(5.0, 0.0, 0.0)]);
        assert!(lift_instance_points(&f, &[], &camera(), &LiftParams::default()).is_empty());
    }

    #[test]
    fn point_in_front_lands_in_mask() {
        // World (5, 0.1, 0) -> camera (-0.1, 0, 5) -> pixel u = 100*(-0.1/5) + 50 = 48, v = 40.
        let p = Vector3::new(5.0, 0.1, 0.0);
        let (u, v, depth) = camera().project(&p);
        assert!((u - 48.0).abs() < 1e-12 && (v - 40.0).abs() < 1e-12 && depth == 5.0);
        let f = frame(vec![p, Vector3::new(-5.0, 0.1, 0.0)]);
        let obs = lift_instance_points(&f, &[mask_box(4, 40, 30, 60, 50)], &camera(), &LiftParams::default());
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].id, InstanceId(4));
        assert_eq!(obs[0].points, vec![p]);
    }

    #[test]
    fn range_gate_excludes_far_points() {
        let near = Vector3::new(79.0, 0.0, 0.0);
        let far = Vector3::new(81.0, 0.0, 0.0);
        let f = frame(vec![near, far]);
        let obs = lift_instance_points(
            &f,
            &[mask_box(1, 0, 0, 100, 80)],
            &camera(),
            &LiftParams {
                erosion_radius: 0,
                max_range: 80.0,
            },
        );
        assert_eq!(obs[0].points, vec![near]);
    }

    #[test]
    fn erosion_drops_points_near_mask_edge() {
        // u = 48 sits two pixels inside a mask starting at column 46.
        let f = frame(vec![Vector3::new(5.0, 0.1, 0.0)]);
        let m = [mask_box(2, 46, 30, 60, 50)];
        let cam = camera();
        assert_eq!(
            lift_instance_points(
                &f,
                &m,
                &cam,
                &LiftParams {
                    erosion_radius: 2,
                    max_range: 80.0
                }
            )
            .len(),
            1
        );
        assert!(lift_instance_points(&f, &m, &cam, &LiftParams::default()).is_empty());
    }

    #[test]
    fn overlapping_masks_prefer_lower_id() {
        let f = frame(vec![Vector3::new(5.0, 0.1, 0.0)]);
        let masks = [mask_box(9, 30, 20, 70, 60), mask_box(3, 30, 20, 70, 60)];
        let obs = lift_instance_points(&f, &masks, &camera(), &LiftParams::default());
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].id, InstanceId(3));
    }

    #[test]
    fn invalid_cameras_are_rejected() {
        let k = Matrix3::new(-1.0, 0.0, 5.0, 0.0, 1.0, 5.0, 0.0, 0.0, 1.0);
        assert!(CameraModel::new(k, Pose::identity(), 10, 10).is_err());
        let k = Matrix3::new(1.0, 0.0, 50.0, 0.0, 1.0, 5.0, 0.0, 0.0, 1.0);
        assert!(CameraModel::new(k, Pose::identity(), 10, 10).is_err());
    }

    #[test]
    fn descriptors_are_normalized() {
        let f = LidarFrame::new(0.0, Vector3::zeros(), vec![Vector3::zeros()], vec![vec![3.0, 4.0]]).unwrap();
        assert_eq!(f.descriptors()[0].as_slice(), &[0.6, 0.8]);
        assert!(matches!(
            LidarFrame::new(0.0, Vector3::zeros(), vec![Vector3::zeros()], vec![vec![0.0, 0.0]]),
            Err(IngestError::ZeroDescriptor { index: 0 })
        ));
    }

    fn blob(center: Vector3<f64>, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|i| {
                let f = i as f64;
                center + Vector3::new((f * 1.3).sin(), (f * 0.7).cos(), (f * 2.1).sin()) * 0.3
            })
            .collect()
    }

    fn observation(points: Vec<Vector3<f64>>) -> InstanceObservation {
        let descriptors = (0..points.len())
            .map(|i| Descriptor::new(vec![1.0, i as f64]).unwrap())
            .collect();
        InstanceObservation {
            id: InstanceId(1),
            timestamp: 0.0,
            points,
            descriptors,
        }
    }

    #[test]
    fn single_cluster_is_kept_whole() {
        let obs = observation(blob(Vector3::zeros(), 30));
        assert_eq!(keep_largest_cluster(&obs, 0.5, 10).unwrap(), obs);
    }

    #[test]
    fn largest_cluster_wins() {
        let mut pts = blob(Vector3::new(20.0, 0.0, 0.0), 20);
        pts.extend(blob(Vector3::zeros(), 50));
        pts.extend((0..5).map(|i| Vector3::new(-10.0 * (i + 1) as f64, 5.0, 0.0)));
        let obs = observation(pts.clone());
        let kept = keep_largest_cluster(&obs, 0.5, 10).unwrap();
        assert_eq!(kept.points, pts[20..70].to_vec());
        assert_eq!(kept.descriptors, obs.descriptors[20..70].to_vec());
    }

    #[test]
    fn nine_points_are_all_noise() {
        let obs = observation(blob(Vector3::zeros(), 9));
        assert_eq!(keep_largest_cluster(&obs, 0.5, 10), Err(IngestError::AllNoise));
    }
}
